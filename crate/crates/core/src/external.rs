//! Generators running as child processes behind a line-delimited JSON
//! protocol on stdio. See `docs/generator-protocol.md` for the wire format.
//!
//! The engine writes one request line and waits for one response line.
//! Timeouts, malformed lines and dead children turn into failed results;
//! only a child that cannot be spawned at all is reported as an error.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{
    FailureKind, GenerationMode, GenerationRequest, GenerationResult, Generator, LineageRecord,
};

pub const PROTOCOL_VERSION: u32 = 1;
/// Environment variable carrying the protocol version to the child.
pub const PROTOCOL_ENV: &str = "ABMCTS_PROTOCOL_VERSION";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestMessage {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub id: u64,
    pub task: String,
    pub mode: GenerationMode,
    pub lineage: Vec<LineageRecord>,
    pub stream: u64,
}

impl RequestMessage {
    pub fn new(id: u64, req: &GenerationRequest) -> Self {
        RequestMessage {
            v: PROTOCOL_VERSION,
            kind: "generate".into(),
            id,
            task: req.task.clone(),
            mode: req.mode,
            lineage: req.lineage.clone(),
            stream: req.stream,
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("request serialization is infallible");
        s.push('\n');
        s
    }
}

/// A response line. `type` is `result` for an answer or `error` when the
/// generator refuses the request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseMessage {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub id: u64,
    #[serde(default)]
    pub payload: String,
    #[serde(default)]
    pub score: Option<f64>,
    #[serde(default)]
    pub feedback: Option<String>,
    #[serde(default)]
    pub failed: bool,
    #[serde(default)]
    pub message: Option<String>,
}

/// Parse and validate one response line against request `id`.
pub fn parse_response(line: &str, id: u64) -> GenerationResult {
    let malformed = |why: String| GenerationResult::failure(FailureKind::Malformed, why);
    let msg: ResponseMessage = match serde_json::from_str(line.trim_end()) {
        Ok(m) => m,
        Err(e) => return malformed(format!("unparseable response: {e}")),
    };
    if msg.v != PROTOCOL_VERSION {
        return malformed(format!(
            "protocol version {} (expected {PROTOCOL_VERSION})",
            msg.v
        ));
    }
    if msg.id != id {
        return malformed(format!("response id {} for request {id}", msg.id));
    }
    match msg.kind.as_str() {
        "error" => GenerationResult::failure(
            FailureKind::Reported,
            msg.message.unwrap_or_else(|| "generator error".into()),
        ),
        "result" => match (msg.failed, msg.score) {
            (false, Some(s)) if s.is_finite() => GenerationResult {
                payload: msg.payload,
                score: Some(s),
                feedback: msg.feedback,
                failed: false,
                latent: None,
                failure: None,
            },
            (true, None) => GenerationResult {
                payload: msg.payload,
                feedback: msg.feedback,
                ..GenerationResult::failure(FailureKind::Reported, "")
            },
            _ => malformed("`failed` must hold exactly when `score` is absent or null".into()),
        },
        other => malformed(format!("unknown message type `{other}`")),
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl Worker {
    fn spawn(command: &[String]) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("empty generator command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .env(PROTOCOL_ENV, PROTOCOL_VERSION.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::GeneratorUnavailable(format!("spawning {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            let mut buf = Vec::new();
            loop {
                buf.clear();
                match reader.read_until(b'\n', &mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(_) => {
                        if tx.send(String::from_utf8_lossy(&buf).into_owned()).is_err() {
                            break;
                        }
                    }
                }
            }
        });
        Ok(Worker {
            child,
            stdin,
            lines: rx,
        })
    }

    fn send(&mut self, line: &str) -> std::io::Result<()> {
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.flush()
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Pool of child processes speaking the generator protocol. One request
/// is in flight per child; batches fan out across children.
pub struct ExternalGenerator {
    command: Vec<String>,
    timeout: Duration,
    workers: Vec<Option<Worker>>,
    next_id: u64,
    label: String,
}

impl ExternalGenerator {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

    pub fn new(command: Vec<String>) -> Self {
        let label = command.first().cloned().unwrap_or_default();
        ExternalGenerator {
            command,
            timeout: Self::DEFAULT_TIMEOUT,
            workers: Vec::new(),
            next_id: 0,
            label,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    fn worker(&mut self, slot: usize) -> Result<&mut Worker> {
        if self.workers.len() <= slot {
            self.workers.resize_with(slot + 1, || None);
        }
        if self.workers[slot].is_none() {
            self.workers[slot] = Some(Worker::spawn(&self.command)?);
        }
        Ok(self.workers[slot].as_mut().expect("just spawned"))
    }

    fn drop_worker(&mut self, slot: usize) {
        if let Some(w) = self.workers[slot].take() {
            w.kill();
        }
    }
}

impl Drop for ExternalGenerator {
    fn drop(&mut self) {
        for w in self.workers.drain(..).flatten() {
            w.kill();
        }
    }
}

impl Generator for ExternalGenerator {
    fn generate(&mut self, req: &GenerationRequest) -> Result<GenerationResult> {
        Ok(self
            .generate_batch(std::slice::from_ref(req))?
            .pop()
            .expect("one result per request"))
    }

    fn generate_batch(&mut self, reqs: &[GenerationRequest]) -> Result<Vec<GenerationResult>> {
        let mut pending: Vec<Option<u64>> = Vec::with_capacity(reqs.len());
        let mut results: Vec<Option<GenerationResult>> = vec![None; reqs.len()];
        for (slot, req) in reqs.iter().enumerate() {
            let id = self.next_id;
            self.next_id += 1;
            let line = RequestMessage::new(id, req).to_line();
            let sent = self.worker(slot)?.send(&line);
            if let Err(e) = sent {
                self.drop_worker(slot);
                results[slot] = Some(GenerationResult::failure(
                    FailureKind::Crashed,
                    format!("writing request: {e}"),
                ));
                pending.push(None);
            } else {
                pending.push(Some(id));
            }
        }
        let deadline = Instant::now() + self.timeout;
        for (slot, id) in pending.into_iter().enumerate() {
            let Some(id) = id else { continue };
            let wait = deadline.saturating_duration_since(Instant::now());
            let received = self.workers[slot]
                .as_ref()
                .expect("worker exists for pending request")
                .lines
                .recv_timeout(wait);
            results[slot] = Some(match received {
                Ok(line) => parse_response(&line, id),
                Err(RecvTimeoutError::Timeout) => {
                    self.drop_worker(slot);
                    GenerationResult::failure(FailureKind::Timeout, "generator timed out")
                }
                Err(RecvTimeoutError::Disconnected) => {
                    self.drop_worker(slot);
                    GenerationResult::failure(FailureKind::Crashed, "generator exited")
                }
            });
        }
        Ok(results
            .into_iter()
            .map(|r| r.expect("every slot answered"))
            .collect())
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}
