#![allow(dead_code)]

pub mod oracles;

use std::path::PathBuf;
use std::time::Duration;

use tropeline::corpus::Corpus;
use tropeline::scorer::ExternalScorerConfig;
use tropeline::synth::{generate, GroupSize, SynthConfig};

pub fn adapter_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mock_adapter.py")
}

pub fn adapter_command(mode: &str) -> Vec<String> {
    vec![
        "python3".to_string(),
        adapter_path().display().to_string(),
        mode.to_string(),
    ]
}

pub fn adapter_config(mode: &str, timeout: Duration) -> ExternalScorerConfig {
    let mut config = ExternalScorerConfig::new(adapter_command(mode));
    config.timeout = timeout;
    config
}

pub fn planted_corpus(groups: usize, members: usize, seed: u64) -> Corpus {
    generate(&SynthConfig {
        n_groups: groups,
        members_per_group: GroupSize::Fixed(members),
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}
