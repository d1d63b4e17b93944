//! Test double for the generator protocol.
//!
//! ```text
//! abmcts-mock echo [--score S]
//! abmcts-mock synthetic [--preset NAME]
//! abmcts-mock scripted --scores 0.5,0.9,fail,...
//! abmcts-mock malformed | silent | noise
//! abmcts-mock crash [--after N]
//! ```
//!
//! `synthetic` answers exactly like the in-process synthetic generator
//! for the same request stream. `crash` exits after answering N requests.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use abmcts::external::{RequestMessage, ResponseMessage, PROTOCOL_ENV, PROTOCOL_VERSION};
use abmcts::generator::{GenerationRequest, Generator};
use abmcts::synth::{LandscapeParams, SyntheticGenerator};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "abmcts-mock")]
struct Cli {
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Subcommand, Clone)]
enum Mode {
    /// Answer every request with a fixed score.
    Echo {
        #[arg(long, default_value_t = 0.5)]
        score: f64,
    },
    /// Answer from a synthetic landscape.
    Synthetic {
        #[arg(long, default_value = "deep-favored")]
        preset: String,
    },
    /// Replay scores in order, cycling; `fail` reports a failed answer.
    Scripted {
        #[arg(long, value_delimiter = ',', required = true)]
        scores: Vec<String>,
    },
    /// Reply with a line that is not valid JSON.
    Malformed,
    /// Read requests and never answer.
    Silent,
    /// Reply with pseudo-random bytes.
    Noise,
    /// Exit without answering once `after` requests were served.
    Crash {
        #[arg(long, default_value_t = 0)]
        after: usize,
    },
}

fn result(id: u64, payload: String, score: Option<f64>, feedback: Option<String>) -> String {
    let msg = ResponseMessage {
        v: PROTOCOL_VERSION,
        kind: "result".into(),
        id,
        payload,
        failed: score.is_none(),
        score,
        feedback,
        message: None,
    };
    serde_json::to_string(&msg).expect("response serializes")
}

fn error(id: u64, message: String) -> String {
    let msg = ResponseMessage {
        v: PROTOCOL_VERSION,
        kind: "error".into(),
        id,
        payload: String::new(),
        score: None,
        feedback: None,
        failed: true,
        message: Some(message),
    };
    serde_json::to_string(&msg).expect("response serializes")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let version_ok = std::env::var(PROTOCOL_ENV)
        .map(|v| v == PROTOCOL_VERSION.to_string())
        .unwrap_or(true);
    let mut synthetic = match &cli.mode {
        Mode::Synthetic { preset } => match LandscapeParams::preset(preset) {
            Some(p) => Some(SyntheticGenerator::new(p).expect("presets are valid")),
            None => {
                eprintln!("unknown preset {preset}");
                return ExitCode::from(1);
            }
        },
        _ => None,
    };

    let stdin = io::stdin().lock();
    let mut stdout = io::stdout().lock();
    let mut served = 0usize;
    let mut noise_state = 0x9e37_79b9_7f4a_7c15u64;
    for line in stdin.lines() {
        let Ok(line) = line else { break };
        let req: RequestMessage = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("abmcts-mock: bad request: {e}");
                continue;
            }
        };
        let id = req.id;
        let reply = if !version_ok {
            Some(error(id, format!("mock speaks protocol {PROTOCOL_VERSION}")))
        } else {
            match &cli.mode {
                Mode::Echo { score } => Some(result(id, format!("echo:{}", req.task), Some(*score), None)),
                Mode::Synthetic { .. } => {
                    let request = GenerationRequest::new(req.task, req.lineage, req.stream);
                    let out = synthetic
                        .as_mut()
                        .expect("synthetic mode has a generator")
                        .generate(&request)
                        .expect("synthetic generation is infallible");
                    Some(result(id, out.payload, out.score, out.feedback))
                }
                Mode::Scripted { scores } => {
                    let entry = &scores[served % scores.len()];
                    let score = if entry == "fail" {
                        None
                    } else {
                        match entry.parse::<f64>() {
                            Ok(s) => Some(s),
                            Err(_) => {
                                eprintln!("abmcts-mock: bad script entry {entry}");
                                return ExitCode::from(1);
                            }
                        }
                    };
                    // Same payloads as the in-process scripted generator.
                    let payload = format!("answer-{}-depth{}", served + 1, req.lineage.len());
                    let feedback = score.is_none().then(|| "scripted failure".to_string());
                    Some(result(id, payload, score, feedback))
                }
                Mode::Malformed => Some(format!("{{\"v\":1,\"id\":{id},oops")),
                Mode::Silent => None,
                Mode::Noise => {
                    let bytes: String = (0..40)
                        .map(|_| {
                            noise_state ^= noise_state << 13;
                            noise_state ^= noise_state >> 7;
                            noise_state ^= noise_state << 17;
                            char::from(b' ' + (noise_state % 94) as u8)
                        })
                        .collect();
                    Some(bytes)
                }
                Mode::Crash { after } => {
                    if served >= *after {
                        return ExitCode::from(3);
                    }
                    Some(result(id, "ok".into(), Some(0.5), None))
                }
            }
        };
        served += 1;
        if let Some(r) = reply {
            if writeln!(stdout, "{r}").and_then(|_| stdout.flush()).is_err() {
                break;
            }
        }
    }
    ExitCode::SUCCESS
}
