//! Command-line entry point. Every subcommand writes its outputs plus a
//! `<command>.config.json` echo of the effective parameters into
//! `--output-dir`.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Serialize, Serializer};
use serde_json::json;

use crate::corpus::{self, Corpus};
use crate::error::Error;
use crate::eval::{
    evaluate, overlap_harness, sweep_top_n, GroundTruth, OverlapParams, RecallMode, RelevanceLabels, SweepParams,
};
use crate::pipeline::{
    self, CandidateSelector, CosineSelector, ExhaustiveLimit, RandomSelector, RunConfig, ScorerSelector,
    SiameseSelector, TieBreak,
};
use crate::scorer::{
    train_head, ConstantScorer, ExternalScorer, ExternalScorerConfig, HeadWeights, IdfTable, LexicalScorer,
    PairScorer, SiameseScorer, TrainConfig,
};
use crate::synth::{self, GroupSize, SynthConfig};
use crate::vectorspace::{embed_all, fit_embedder, load_embeddings, EmbedderKind, EmbedderParams, EmbeddingFormat, EmbeddingSet};

pub const SEED_ENV: &str = "TROPELINE_SEED";

#[derive(Parser, Debug)]
#[command(name = "tropeline", version, about = "Select-and-refine similarity search over trope-labeled characters")]
pub struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for select and refine; 1 runs serially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter a raw record file and report corpus statistics.
    Ingest(IngestArgs),
    /// Split a corpus into train and eval parts.
    Split(SplitArgs),
    /// Generate labeled training pairs.
    Pairs(PairsArgs),
    /// Compute or import per-record embeddings.
    Embed(EmbedArgs),
    /// Train the light pairwise head on labeled pairs.
    TrainHead(TrainHeadArgs),
    /// Select candidates and refine them with the pairwise scorer.
    Run(RunArgs),
    /// Score every ordered pair; the reference ranking.
    Exhaustive(ExhaustiveArgs),
    /// Compute ranking metrics for a ranking file.
    Evaluate(EvaluateArgs),
    /// Measure how much of the scorer's own top list each selector recovers.
    Overlap(OverlapArgs),
    /// Sweep the candidate budget and report marginal gains.
    Sweep(SweepArgs),
    /// Write a planted synthetic corpus.
    Synth(SynthArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Split(_) => "split",
            Command::Pairs(_) => "pairs",
            Command::Embed(_) => "embed",
            Command::TrainHead(_) => "train-head",
            Command::Run(_) => "run",
            Command::Exhaustive(_) => "exhaustive",
            Command::Evaluate(_) => "evaluate",
            Command::Overlap(_) => "overlap",
            Command::Sweep(_) => "sweep",
            Command::Synth(_) => "synth",
        }
    }

    fn args_json(&self) -> serde_json::Result<serde_json::Value> {
        match self {
            Command::Ingest(a) => serde_json::to_value(a),
            Command::Split(a) => serde_json::to_value(a),
            Command::Pairs(a) => serde_json::to_value(a),
            Command::Embed(a) => serde_json::to_value(a),
            Command::TrainHead(a) => serde_json::to_value(a),
            Command::Run(a) => serde_json::to_value(a),
            Command::Exhaustive(a) => serde_json::to_value(a),
            Command::Evaluate(a) => serde_json::to_value(a),
            Command::Overlap(a) => serde_json::to_value(a),
            Command::Sweep(a) => serde_json::to_value(a),
            Command::Synth(a) => serde_json::to_value(a),
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Records with this many words or fewer are dropped.
    #[arg(long, default_value_t = corpus::DEFAULT_MIN_WORDS)]
    min_words: usize,
}

#[derive(Args, Debug, Serialize)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = corpus::DEFAULT_EVAL_FRACTION)]
    eval_fraction: f64,
}

#[derive(Args, Debug, Serialize)]
struct PairsArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Emit only same-trope pairs.
    #[arg(long)]
    no_negatives: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum EmbedMethod {
    Bow,
    Tfidf,
    Hashed,
    File,
}

#[derive(Args, Debug, Serialize)]
struct EmbedArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "tfidf")]
    method: EmbedMethod,
    /// Corpus the vocabulary and weights are fitted on; defaults to `--corpus`.
    #[arg(long)]
    fit_corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    dim: i64,
    /// Precomputed vectors for `--method file`.
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Write `embeddings.bin` instead of `embeddings.txt`.
    #[arg(long)]
    binary: bool,
}

#[derive(Args, Debug, Serialize)]
struct TrainHeadArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    /// 0 trains on the full batch.
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Clone, Debug, PartialEq)]
enum ScorerChoice {
    Lexical,
    LexicalUniform,
    Head,
    Planted,
    Constant(f64),
    External(String),
}

impl FromStr for ScorerChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(v) = s.strip_prefix("constant:") {
            return v
                .parse()
                .map(ScorerChoice::Constant)
                .map_err(|_| format!("invalid constant score `{v}`"));
        }
        if let Some(cmd) = s.strip_prefix("external:") {
            if cmd.trim().is_empty() {
                return Err("external scorer needs a command".into());
            }
            return Ok(ScorerChoice::External(cmd.to_string()));
        }
        match s {
            "lexical" => Ok(ScorerChoice::Lexical),
            "lexical-uniform" => Ok(ScorerChoice::LexicalUniform),
            "head" => Ok(ScorerChoice::Head),
            "planted" => Ok(ScorerChoice::Planted),
            other => Err(format!(
                "unknown scorer `{other}` (expected lexical, lexical-uniform, head, planted, constant:<v> or external:<command>)"
            )),
        }
    }
}

impl fmt::Display for ScorerChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerChoice::Lexical => f.write_str("lexical"),
            ScorerChoice::LexicalUniform => f.write_str("lexical-uniform"),
            ScorerChoice::Head => f.write_str("head"),
            ScorerChoice::Planted => f.write_str("planted"),
            ScorerChoice::Constant(v) => write!(f, "constant:{v}"),
            ScorerChoice::External(cmd) => write!(f, "external:{cmd}"),
        }
    }
}

fn as_display<T: fmt::Display, S: Serializer>(value: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(value)
}

#[derive(Args, Debug, Serialize)]
struct ScorerArgs {
    /// lexical, lexical-uniform, head, planted, constant:<v> or external:<command>
    #[arg(long, default_value = "lexical")]
    #[serde(serialize_with = "as_display")]
    scorer: ScorerChoice,
    /// Noise level of the planted scorer.
    #[arg(long, default_value_t = 0.05)]
    planted_noise: f64,
    /// Seconds allowed for the external scorer handshake and each request.
    #[arg(long, default_value_t = 30.0)]
    scorer_timeout: f64,
}

#[derive(Args, Debug, Serialize)]
struct ModelArgs {
    /// Cached embeddings; fitted on the corpus when absent.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Embedder fitted when `--embeddings` is absent.
    #[arg(long, value_enum, default_value = "tfidf")]
    embed_method: FitMethod,
    #[arg(long, default_value_t = 256)]
    dim: i64,
    /// Trained head weights for siamese selection or the head scorer.
    #[arg(long)]
    head: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FitMethod {
    Bow,
    Tfidf,
    Hashed,
}

impl From<FitMethod> for EmbedderKind {
    fn from(m: FitMethod) -> Self {
        match m {
            FitMethod::Bow => EmbedderKind::Bow,
            FitMethod::Tfidf => EmbedderKind::Tfidf,
            FitMethod::Hashed => EmbedderKind::Hashed,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SelectMethod {
    Cosine,
    Siamese,
    Random,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum TieBreakArg {
    Id,
    SelectRank,
}

impl From<TieBreakArg> for TieBreak {
    fn from(t: TieBreakArg) -> Self {
        match t {
            TieBreakArg::Id => TieBreak::Id,
            TieBreakArg::SelectRank => TieBreak::SelectRank,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum RecallModeArg {
    Dedup,
    Directed,
}

impl From<RecallModeArg> for RecallMode {
    fn from(m: RecallModeArg) -> Self {
        match m {
            RecallModeArg::Dedup => RecallMode::Dedup,
            RecallModeArg::Directed => RecallMode::Directed,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct RunArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "cosine")]
    select: SelectMethod,
    #[arg(long, default_value_t = 20)]
    top_n: usize,
    /// Cutoffs the run is meant to be evaluated at; `--top-n` must cover the largest.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<usize>,
    #[arg(long, value_enum, default_value = "id")]
    tie_break: TieBreakArg,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug, Serialize)]
struct ExhaustiveArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Lift the corpus-size cap.
    #[arg(long)]
    allow_large: bool,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    /// Evaluation corpus providing the ground truth.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    ranking: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<usize>,
    #[arg(long, value_enum, default_value = "dedup")]
    recall_mode: RecallModeArg,
    /// Relevance labels; enables precision.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct OverlapArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Any of cosine, siamese, random, self, bow, tfidf, hashed.
    #[arg(long, value_delimiter = ',', default_value = "cosine,random,self")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long, default_value_t = 100)]
    oracle_top: usize,
    #[arg(long, default_value_t = 500)]
    select_top: usize,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[command(flatten)]
    model: ModelArgs,
}

/// `start:end[:step]`, end inclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
struct SweepRange {
    start: usize,
    end: usize,
    step: usize,
}

impl FromStr for SweepRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.trim().parse::<usize>().map_err(|_| format!("invalid range `{s}`"));
        match parts.as_slice() {
            [a, b] => Ok(SweepRange { start: num(a)?, end: num(b)?, step: 1 }),
            [a, b, c] => Ok(SweepRange { start: num(a)?, end: num(b)?, step: num(c)? }),
            _ => Err(format!("invalid range `{s}`, expected start:end[:step]")),
        }
    }
}

impl fmt::Display for SweepRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.end, self.step)
    }
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "cosine")]
    select: SelectMethod,
    /// Candidate budgets to evaluate; the end is clamped to the corpus.
    #[arg(long, default_value = "1:500:1")]
    #[serde(serialize_with = "as_display")]
    range: SweepRange,
    #[arg(long, default_value_t = 10)]
    smooth: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<usize>,
    #[arg(long, value_enum, default_value = "dedup")]
    recall_mode: RecallModeArg,
    #[arg(long, value_enum, default_value = "id")]
    tie_break: TieBreakArg,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    /// JSON generator settings; individual flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    members: Option<usize>,
    #[arg(long)]
    words: Option<usize>,
    #[arg(long)]
    topic_fraction: Option<f64>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(Error::Json(e))
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

struct Context {
    seed: u64,
    output_dir: PathBuf,
    /// Echoed into every report.
    config: serde_json::Value,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    fn write_text(&self, name: &str, text: &str) -> CliResult {
        let path = self.out(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on usage errors, 2 on data or
/// protocol errors.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn execute(cli: Cli) -> CliResult {
    let seed = match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{SEED_ENV} must be an unsigned integer, got `{v}`")))?,
        Err(_) => cli.seed,
    };
    if cli.threads == Some(0) {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    fs::create_dir_all(&cli.output_dir).map_err(|e| Error::io(&cli.output_dir, e))?;

    let name = cli.command.name();
    let config = json!({
        "command": name,
        "seed": seed,
        "args": cli.command.args_json()?,
    });
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let ctx = Context {
        seed,
        output_dir: cli.output_dir.clone(),
        config: config.clone(),
    };
    ctx.write_json(
        &format!("{name}.config.json"),
        &json!({
            "config": config,
            "threads": cli.threads,
            "meta": { "timestamp_unix": timestamp, "version": env!("CARGO_PKG_VERSION") },
        }),
    )?;

    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure::Usage(format!("cannot build thread pool: {e}")))?;
            pool.install(|| dispatch(&cli.command, &ctx))
        }
        None => dispatch(&cli.command, &ctx),
    }
}

fn dispatch(command: &Command, ctx: &Context) -> CliResult {
    match command {
        Command::Ingest(a) => cmd_ingest(a, ctx),
        Command::Split(a) => cmd_split(a, ctx),
        Command::Pairs(a) => cmd_pairs(a, ctx),
        Command::Embed(a) => cmd_embed(a, ctx),
        Command::TrainHead(a) => cmd_train_head(a, ctx),
        Command::Run(a) => cmd_run(a, ctx),
        Command::Exhaustive(a) => cmd_exhaustive(a, ctx),
        Command::Evaluate(a) => cmd_evaluate(a, ctx),
        Command::Overlap(a) => cmd_overlap(a, ctx),
        Command::Sweep(a) => cmd_sweep(a, ctx),
        Command::Synth(a) => cmd_synth(a, ctx),
    }
}

fn cmd_ingest(a: &IngestArgs, ctx: &Context) -> CliResult {
    let corpus = corpus::ingest(&a.input, a.min_words)?;
    corpus.write(ctx.out("corpus.jsonl"))?;
    let stats = corpus::stats(&corpus);
    let table = stats.table();
    ctx.write_json("stats.json", &stats)?;
    ctx.write_text("stats.txt", &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_split(a: &SplitArgs, ctx: &Context) -> CliResult {
    let corpus = Corpus::load(&a.corpus)?;
    let (train, eval) = corpus::split(&corpus, a.eval_fraction, ctx.seed)?;
    train.write(ctx.out("train.jsonl"))?;
    eval.write(ctx.out("eval.jsonl"))?;
    println!("train: {} records, eval: {} records", train.len(), eval.len());
    Ok(())
}

fn cmd_pairs(a: &PairsArgs, ctx: &Context) -> CliResult {
    let corpus = Corpus::load(&a.corpus)?;
    let pairs = corpus::generate_pairs(&corpus, !a.no_negatives, ctx.seed)?;
    let n = corpus::write_pairs(pairs, ctx.out("pairs.jsonl"))?;
    println!("{n} pairs");
    Ok(())
}

fn cmd_embed(a: &EmbedArgs, ctx: &Context) -> CliResult {
    let corpus = Corpus::load(&a.corpus)?;
    let set = match a.method {
        EmbedMethod::File => {
            let path = a
                .vectors
                .as_ref()
                .ok_or_else(|| Failure::Usage("--method file needs --vectors".into()))?;
            let set = load_embeddings(path)?;
            set.check_coverage(&corpus)?;
            set
        }
        EmbedMethod::Bow | EmbedMethod::Tfidf | EmbedMethod::Hashed => {
            let kind = match a.method {
                EmbedMethod::Bow => EmbedderKind::Bow,
                EmbedMethod::Tfidf => EmbedderKind::Tfidf,
                _ => EmbedderKind::Hashed,
            };
            let fit_on = match &a.fit_corpus {
                Some(p) => Corpus::load(p)?,
                None => corpus.clone(),
            };
            let embedder = fit_embedder(kind, &fit_on, &EmbedderParams { hashed_dim: a.dim })?;
            embed_all(&embedder, &corpus)
        }
    };
    warn_zero_norms(&set);
    let (name, format) = if a.binary {
        ("embeddings.bin", EmbeddingFormat::Binary)
    } else {
        ("embeddings.txt", EmbeddingFormat::Text)
    };
    set.write(ctx.out(name), format)?;
    println!("{} vectors of dimension {}", set.len(), set.dimension());
    Ok(())
}

fn warn_zero_norms(set: &EmbeddingSet) {
    let zero = set.zero_norm_count();
    if zero > 0 {
        log::warn!("{zero} embeddings have zero norm; their cosine with anything is 0");
    }
}

fn cmd_train_head(a: &TrainHeadArgs, ctx: &Context) -> CliResult {
    let pairs = corpus::read_pairs(&a.pairs)?;
    let embeddings = load_embeddings(&a.embeddings)?;
    let config = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        seed: ctx.seed,
        normalize: !a.no_normalize,
    };
    let head = train_head(pairs, &embeddings, &config)?;
    head.save(ctx.out("head.json"))?;
    println!("final loss {:.6}", head.meta.final_loss);
    Ok(())
}

/// Lazily loaded models shared by selectors and scorers.
struct Models<'a> {
    args: &'a ModelArgs,
    corpus: &'a Corpus,
    embeddings: Option<Arc<EmbeddingSet>>,
    head: Option<Arc<HeadWeights>>,
}

impl<'a> Models<'a> {
    fn new(args: &'a ModelArgs, corpus: &'a Corpus) -> Self {
        Models {
            args,
            corpus,
            embeddings: None,
            head: None,
        }
    }

    fn embeddings(&mut self) -> CliResult<Arc<EmbeddingSet>> {
        if let Some(e) = &self.embeddings {
            return Ok(e.clone());
        }
        let set = match &self.args.embeddings {
            Some(path) => load_embeddings(path)?,
            None => fitted(self.args.embed_method.into(), self.corpus, self.args.dim)?,
        };
        warn_zero_norms(&set);
        let set = Arc::new(set);
        self.embeddings = Some(set.clone());
        Ok(set)
    }

    fn head(&mut self) -> CliResult<Arc<HeadWeights>> {
        if let Some(h) = &self.head {
            return Ok(h.clone());
        }
        let path = self
            .args
            .head
            .as_ref()
            .ok_or_else(|| Failure::Usage("this configuration needs --head".into()))?;
        let head = Arc::new(HeadWeights::load(path)?);
        self.head = Some(head.clone());
        Ok(head)
    }

    fn selector(&mut self, method: SelectMethod, seed: u64) -> CliResult<Box<dyn CandidateSelector>> {
        Ok(match method {
            SelectMethod::Cosine => Box::new(CosineSelector::new(self.embeddings()?)),
            SelectMethod::Siamese => Box::new(SiameseSelector::new(self.head()?, self.embeddings()?)?),
            SelectMethod::Random => Box::new(RandomSelector::new(seed)),
        })
    }

    fn scorer(&mut self, args: &ScorerArgs, seed: u64) -> CliResult<Arc<dyn PairScorer>> {
        Ok(match &args.scorer {
            ScorerChoice::Lexical => Arc::new(LexicalScorer::new(IdfTable::fit(self.corpus)).with_cache(self.corpus)),
            ScorerChoice::LexicalUniform => Arc::new(LexicalScorer::new(IdfTable::Uniform).with_cache(self.corpus)),
            ScorerChoice::Head => Arc::new(SiameseScorer::new(self.head()?, self.embeddings()?)?),
            ScorerChoice::Planted => Arc::new(synth::planted_scorer(self.corpus, args.planted_noise, seed)?),
            ScorerChoice::Constant(v) => Arc::new(ConstantScorer::new(*v)?),
            ScorerChoice::External(cmd) => {
                let command = shlex::split(cmd)
                    .filter(|c| !c.is_empty())
                    .ok_or_else(|| Failure::Usage(format!("cannot parse external command `{cmd}`")))?;
                if !(args.scorer_timeout > 0.0 && args.scorer_timeout.is_finite()) {
                    return Err(Failure::Usage("--scorer-timeout must be positive".into()));
                }
                let mut config = ExternalScorerConfig::new(command);
                config.timeout = Duration::from_secs_f64(args.scorer_timeout);
                Arc::new(ExternalScorer::spawn(&config)?)
            }
        })
    }
}

fn fitted(kind: EmbedderKind, corpus: &Corpus, dim: i64) -> crate::Result<EmbeddingSet> {
    let embedder = fit_embedder(kind, corpus, &EmbedderParams { hashed_dim: dim })?;
    Ok(embed_all(&embedder, corpus))
}

fn cmd_run(a: &RunArgs, ctx: &Context) -> CliResult {
    let corpus = Corpus::load(&a.corpus)?;
    let mut models = Models::new(&a.model, &corpus);
    let selector = models.selector(a.select, ctx.seed)?;
    let scorer = models.scorer(&a.scorer, ctx.seed)?;
    let config = RunConfig {
        top_n: a.top_n,
        k_values: a.k.clone(),
        seed: ctx.seed,
        tie_break: a.tie_break.into(),
    };
    let output = pipeline::run(&corpus, selector.as_ref(), scorer.as_ref(), &config)?;
    output.candidates.write(ctx.out("candidates.jsonl"))?;
    output.ranking.write(ctx.out("ranking.jsonl"))?;
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    ctx.write_json(
        "run.json",
        &json!({
            "queries": output.ranking.queries.len(),
            "effective_top_n": output.effective_top_n,
            "scorer_calls": output.scorer_calls,
            "warnings": output.warnings,
            "config": ctx.config,
        }),
    )?;
    println!(
        "{} queries, top_n {}, {} scorer calls",
        output.ranking.queries.len(),
        output.effective_top_n,
        output.scorer_calls
    );
    Ok(())
}

fn cmd_exhaustive(a: &ExhaustiveArgs, ctx: &Context) -> CliResult {
    let corpus = Corpus::load(&a.corpus)?;
    let mut models = Models::new(&a.model, &corpus);
    let scorer = models.scorer(&a.scorer, ctx.seed)?;
    let limit = ExhaustiveLimit {
        allow_large: a.allow_large,
        ..ExhaustiveLimit::default()
    };
    let ranking = pipeline::exhaustive(&corpus, scorer.as_ref(), limit)?;
    ranking.write(ctx.out("ranking.jsonl"))?;
    ctx.write_json(
        "exhaustive.json",
        &json!({
            "queries": ranking.queries.len(),
            "scorer_calls": scorer.calls(),
            "config": ctx.config,
        }),
    )?;
    println!("{} queries, {} scorer calls", ranking.queries.len(), scorer.calls());
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, ctx: &Context) -> CliResult {
    let corpus = Corpus::load(&a.corpus)?;
    let ranking = pipeline::RefinedRanking::load(&a.ranking)?;
    let gt = GroundTruth::from_corpus(&corpus);
    let labels = a.labels.as_ref().map(RelevanceLabels::load).transpose()?;
    let report = evaluate(&ranking, &gt, &a.k, a.recall_mode.into(), labels.as_ref(), ctx.config.clone())?;
    ctx.write_json("metrics.json", &report)?;
    let tsv = report.to_tsv();
    ctx.write_text("metrics.tsv", &tsv)?;
    print!("{tsv}");
    Ok(())
}

fn cmd_overlap(a: &OverlapArgs, ctx: &Context) -> CliResult {
    let corpus = Corpus::load(&a.corpus)?;
    let mut models = Models::new(&a.model, &corpus);
    let scorer = models.scorer(&a.scorer, ctx.seed)?;
    let mut selectors: Vec<(String, Box<dyn CandidateSelector>)> = Vec::new();
    for m in &a.methods {
        let selector: Box<dyn CandidateSelector> = match m.as_str() {
            "cosine" => models.selector(SelectMethod::Cosine, ctx.seed)?,
            "siamese" => models.selector(SelectMethod::Siamese, ctx.seed)?,
            "random" => models.selector(SelectMethod::Random, ctx.seed)?,
            "self" => Box::new(ScorerSelector::new(scorer.clone())),
            "bow" | "tfidf" | "hashed" => {
                let kind: EmbedderKind = m.parse()?;
                Box::new(CosineSelector::new(Arc::new(fitted(kind, &corpus, a.model.dim)?)))
            }
            other => return Err(Failure::Usage(format!("unknown overlap method `{other}`"))),
        };
        selectors.push((m.clone(), selector));
    }
    let refs: Vec<&dyn CandidateSelector> = selectors.iter().map(|(_, s)| s.as_ref()).collect();
    let params = OverlapParams {
        n_queries: a.queries,
        oracle_top: a.oracle_top,
        select_top: a.select_top,
        seed: ctx.seed,
    };
    let mut report = overlap_harness(&corpus, scorer.as_ref(), &refs, params)?;
    for (m, (label, _)) in report.methods.iter_mut().zip(&selectors) {
        m.method = label.clone();
    }
    ctx.write_json("overlap.json", &json!({ "report": report, "config": ctx.config }))?;
    let mut tsv = String::from("method\toverlap\tstd_error\n");
    for m in &report.methods {
        tsv.push_str(&format!("{}\t{:.4}\t{:.4}\n", m.method, m.overlap, m.std_error));
    }
    ctx.write_text("overlap.tsv", &tsv)?;
    print!("{tsv}");
    Ok(())
}

fn series_file_name(metric: &str) -> String {
    format!("{}.tsv", metric.replace('@', "_at_"))
}

fn cmd_sweep(a: &SweepArgs, ctx: &Context) -> CliResult {
    let corpus = Corpus::load(&a.corpus)?;
    if corpus.len() < 2 {
        return Err(Error::InvalidArgument("a sweep needs at least two records".into()).into());
    }
    let max = corpus.len() - 1;
    let mut warnings = Vec::new();
    let mut end = a.range.end;
    if end > max {
        let msg = format!("sweep end {end} exceeds the {max} other records; clamped to {max}");
        log::warn!("{msg}");
        warnings.push(msg);
        end = max;
    }
    let mut models = Models::new(&a.model, &corpus);
    let selector = models.selector(a.select, ctx.seed)?;
    let scorer = models.scorer(&a.scorer, ctx.seed)?;
    let params = SweepParams {
        start: a.range.start,
        end,
        step: a.range.step,
        smooth_window: a.smooth,
        k_values: a.k.clone(),
        recall_mode: a.recall_mode.into(),
        tie_break: a.tie_break.into(),
    };
    let gt = GroundTruth::from_corpus(&corpus);
    let result = sweep_top_n(&corpus, &gt, selector.as_ref(), scorer.as_ref(), &params)?;
    ctx.write_json(
        "sweep.json",
        &json!({ "result": result, "warnings": warnings, "config": ctx.config }),
    )?;
    ctx.write_text("sweep.tsv", &result.to_tsv())?;
    let series_dir = ctx.out("series");
    fs::create_dir_all(&series_dir).map_err(|e| Error::io(&series_dir, e))?;
    for m in &result.metrics {
        let text = result.series_tsv(&m.metric).unwrap_or_default();
        let path = series_dir.join(series_file_name(&m.metric));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    println!("metric\tbest_top_n\tzero_crossing_top_n");
    for m in &result.metrics {
        let zero = m.zero_crossing_top_n.map_or("-".to_string(), |z| z.to_string());
        println!("{}\t{}\t{zero}", m.metric, m.best_top_n);
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs, ctx: &Context) -> CliResult {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)?
        }
        None => SynthConfig::default(),
    };
    if let Some(g) = a.groups {
        cfg.n_groups = g;
    }
    if let Some(m) = a.members {
        cfg.members_per_group = GroupSize::Fixed(m);
    }
    if let Some(w) = a.words {
        cfg.words_per_description = w;
    }
    if let Some(f) = a.topic_fraction {
        cfg.topic_word_fraction = f;
    }
    cfg.seed = ctx.seed;
    let corpus = synth::generate(&cfg)?;
    corpus.write(ctx.out("synth.jsonl"))?;
    ctx.write_json("synth_params.json", &cfg)?;
    println!("{} records in {} groups", corpus.len(), corpus.n_tropes());
    Ok(())
}
