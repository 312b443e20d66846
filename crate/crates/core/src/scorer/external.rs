//! Client for scorers running in a child process.
//!
//! The child speaks newline-delimited JSON on stdin/stdout. On start it
//! prints `{"type":"hello","version":1,"name":...}`. Each request
//! `{"type":"score","id":N,"a":...,"b":...}` is answered by either
//! `{"type":"result","id":N,"score":x}` or `{"type":"error","id":N,"message":...}`.
//! Responses may arrive in any order. Closing the child's stdin asks it to exit.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{CallCounter, PairScorer};
use crate::corpus::CharacterRecord;
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ExternalScorerConfig {
    pub command: Vec<String>,
    /// Bound on the handshake, each request and shutdown.
    pub timeout: Duration,
    pub max_inflight: usize,
}

impl ExternalScorerConfig {
    pub fn new(command: Vec<String>) -> Self {
        ExternalScorerConfig {
            command,
            timeout: Duration::from_secs(30),
            max_inflight: 16,
        }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    id: u64,
    a: &'a str,
    b: &'a str,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Message {
    Hello {
        version: u32,
        name: String,
    },
    Result {
        id: u64,
        score: f64,
    },
    Error {
        id: i64,
        message: String,
    },
}

type Reply = Result<f64>;

#[derive(Default)]
struct Pending {
    waiting: HashMap<u64, Sender<Reply>>,
    // set once the child's stdout closes
    closed: Option<String>,
}

struct Permits {
    free: Mutex<usize>,
    cond: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cond.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cond.notify_one();
    }
}

pub struct ExternalScorer {
    name: String,
    adapter_name: String,
    timeout: Duration,
    child: Mutex<Option<Child>>,
    stdin: Mutex<Option<ChildStdin>>,
    pending: Arc<Mutex<Pending>>,
    reader: Mutex<Option<JoinHandle<()>>>,
    permits: Permits,
    next_id: AtomicU64,
    calls: CallCounter,
}

impl std::fmt::Debug for ExternalScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalScorer")
            .field("name", &self.name)
            .field("adapter_name", &self.adapter_name)
            .finish_non_exhaustive()
    }
}

impl ExternalScorer {
    /// Spawns the child and waits for its hello line.
    pub fn spawn(config: &ExternalScorerConfig) -> Result<Self> {
        let (program, args) = config
            .command
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("external scorer command is empty".into()))?;
        if config.max_inflight == 0 {
            return Err(Error::InvalidArgument("max_inflight must be at least 1".into()));
        }
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Handshake(format!("cannot spawn `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");

        let pending = Arc::new(Mutex::new(Pending::default()));
        let (hello_tx, hello_rx) = mpsc::channel();
        let reader = {
            let pending = Arc::clone(&pending);
            std::thread::Builder::new()
                .name("external-scorer-reader".into())
                .spawn(move || read_loop(stdout, pending, hello_tx))
                .map_err(|e| Error::Handshake(e.to_string()))?
        };

        let hello = match hello_rx.recv_timeout(config.timeout) {
            Ok(h) => h,
            Err(RecvTimeoutError::Timeout) => Err(Error::Handshake(format!(
                "no hello within {:?}",
                config.timeout
            ))),
            Err(RecvTimeoutError::Disconnected) => {
                Err(Error::Handshake("adapter closed stdout before hello".into()))
            }
        };
        let adapter_name = match hello {
            Ok(name) => name,
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                drop(stdin);
                let _ = reader.join();
                return Err(e);
            }
        };

        Ok(ExternalScorer {
            name: format!("external:{}", config.command.join(" ")),
            adapter_name,
            timeout: config.timeout,
            child: Mutex::new(Some(child)),
            stdin: Mutex::new(Some(stdin)),
            pending,
            reader: Mutex::new(Some(reader)),
            permits: Permits {
                free: Mutex::new(config.max_inflight),
                cond: Condvar::new(),
            },
            next_id: AtomicU64::new(0),
            calls: CallCounter::default(),
        })
    }

    /// Name the adapter announced in its hello line.
    pub fn adapter_name(&self) -> &str {
        &self.adapter_name
    }

    /// Scores a raw text pair.
    pub fn score_texts(&self, a: &str, b: &str) -> Result<f64> {
        self.calls.bump();
        let _permit = self.permits.acquire();
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::channel();
        {
            let mut pending = self.pending.lock().unwrap();
            if let Some(reason) = &pending.closed {
                return Err(Error::ChildExited(reason.clone()));
            }
            pending.waiting.insert(id, tx);
        }

        let mut line = serde_json::to_vec(&ScoreRequest {
            kind: "score",
            id,
            a,
            b,
        })?;
        line.push(b'\n');
        let written = {
            let mut stdin = self.stdin.lock().unwrap();
            match stdin.as_mut() {
                Some(w) => w.write_all(&line).and_then(|_| w.flush()).map_err(|e| e.to_string()),
                None => Err("scorer was shut down".to_string()),
            }
        };
        if let Err(reason) = written {
            self.pending.lock().unwrap().waiting.remove(&id);
            return Err(Error::ChildExited(reason));
        }

        match rx.recv_timeout(self.timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().unwrap().waiting.remove(&id);
                Err(Error::Timeout(id))
            }
            Err(RecvTimeoutError::Disconnected) => Err(Error::ChildExited(
                self.pending
                    .lock()
                    .unwrap()
                    .closed
                    .clone()
                    .unwrap_or_else(|| "reader stopped".into()),
            )),
        }
    }

    /// Closes the child's stdin and waits for it to exit within the timeout.
    /// The child is killed if it overstays.
    pub fn shutdown(&self) -> Result<ExitStatus> {
        drop(self.stdin.lock().unwrap().take());
        let mut slot = self.child.lock().unwrap();
        let Some(child) = slot.as_mut() else {
            return Err(Error::ChildExited("already shut down".into()));
        };
        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Ok(status),
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    break Err(Error::ChildExited(format!(
                        "adapter did not exit within {:?} of stdin close; killed",
                        self.timeout
                    )));
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => break Err(Error::ChildExited(e.to_string())),
            }
        };
        slot.take();
        if let Some(handle) = self.reader.lock().unwrap().take() {
            let _ = handle.join();
        }
        status
    }

    /// Process id of the child, while it runs.
    pub fn child_id(&self) -> Option<u32> {
        self.child.lock().unwrap().as_ref().map(Child::id)
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        drop(self.stdin.get_mut().unwrap().take());
        if let Some(mut child) = self.child.get_mut().unwrap().take() {
            let deadline = Instant::now() + Duration::from_millis(200);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    break;
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
        if let Some(handle) = self.reader.get_mut().unwrap().take() {
            let _ = handle.join();
        }
    }
}

impl PairScorer for ExternalScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, query: &CharacterRecord, candidate: &CharacterRecord) -> Result<f64> {
        self.score_texts(&query.description, &candidate.description)
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }
}

fn read_loop(stdout: ChildStdout, pending: Arc<Mutex<Pending>>, hello: Sender<Result<String>>) {
    let mut lines = BufReader::new(stdout).lines();

    let first = match lines.next() {
        Some(Ok(line)) => match serde_json::from_str::<Message>(&line) {
            Ok(Message::Hello { version, name }) if version == PROTOCOL_VERSION => Ok(name),
            Ok(Message::Hello { version, .. }) => {
                Err(Error::Handshake(format!("unsupported protocol version {version}")))
            }
            _ => Err(Error::Handshake(format!("expected hello, got `{line}`"))),
        },
        Some(Err(e)) => Err(Error::Handshake(e.to_string())),
        None => Err(Error::Handshake("adapter closed stdout before hello".into())),
    };
    let ok = first.is_ok();
    let _ = hello.send(first);
    if !ok {
        return;
    }

    let reason = loop {
        let line = match lines.next() {
            Some(Ok(line)) => line,
            Some(Err(e)) => break format!("read failed: {e}"),
            None => break "adapter closed its stdout".to_string(),
        };
        if line.trim().is_empty() {
            continue;
        }
        let (id, reply) = match serde_json::from_str::<Message>(&line) {
            Ok(Message::Result { id, score }) => {
                if score.is_finite() && (0.0..=1.0).contains(&score) {
                    (id, Ok(score))
                } else {
                    (
                        id,
                        Err(Error::Protocol {
                            id: id as i64,
                            message: format!("score {score} outside [0, 1]"),
                        }),
                    )
                }
            }
            Ok(Message::Error { id, message }) if id >= 0 => (
                id as u64,
                Err(Error::Protocol {
                    id,
                    message: format!("adapter error: {message}"),
                }),
            ),
            Ok(Message::Error { id, message }) => {
                log::warn!("adapter reported an unroutable error (id {id}): {message}");
                continue;
            }
            Ok(Message::Hello { .. }) => {
                log::warn!("ignoring repeated hello from adapter");
                continue;
            }
            Err(e) => match best_effort_id(&line) {
                Some(id) => (
                    id,
                    Err(Error::Protocol {
                        id: id as i64,
                        message: format!("malformed response: {e}"),
                    }),
                ),
                None => {
                    log::warn!("ignoring malformed adapter line `{line}`: {e}");
                    continue;
                }
            },
        };
        match pending.lock().unwrap().waiting.remove(&id) {
            Some(tx) => {
                let _ = tx.send(reply);
            }
            None => log::warn!("response for unknown or expired request {id}"),
        }
    };

    let mut pending = pending.lock().unwrap();
    pending.closed = Some(reason.clone());
    for (_, tx) in pending.waiting.drain() {
        let _ = tx.send(Err(Error::ChildExited(reason.clone())));
    }
}

/// Recovers the request id from a line that failed to parse, first as JSON,
/// then by scanning for an `"id": <digits>` fragment.
fn best_effort_id(line: &str) -> Option<u64> {
    if let Some(id) = serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.get("id")?.as_u64())
    {
        return Some(id);
    }
    let rest = &line[line.find("\"id\"")? + 4..];
    let rest = rest.trim_start().strip_prefix(':')?.trim_start();
    let digits: &str = &rest[..rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len())];
    digits.parse().ok()
}
