use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::TreeMetrics;
use crate::policy::PolicyKind;

/// Metrics of one run read off at one budget checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub policy: String,
    pub kind: PolicyKind,
    pub budget: usize,
    /// Seed index within the experiment.
    pub seed: u64,
    /// Derived seed the run actually used.
    pub run_seed: u64,
    /// Whether the best-scored answer is truly correct. Absent when the
    /// generator exposes no hidden quality.
    pub success: Option<bool>,
    /// Success of the top-k answers by (score, recency), keyed by k.
    pub pass_at_k: BTreeMap<usize, bool>,
    pub best_score: Option<f64>,
    pub best_latent: Option<f64>,
    pub metrics: TreeMetrics,
    pub generator_usage: Vec<f64>,
    pub failed_generations: usize,
    pub generator_faults: usize,
    /// Run aborted before this checkpoint because a generator went away.
    pub aborted: bool,
    pub wall_time_s: f64,
}

impl RunRecord {
    /// Everything except wall time, for replay comparisons.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        RunRecord {
            wall_time_s: 0.0,
            ..self.clone()
        } == RunRecord {
            wall_time_s: 0.0,
            ..other.clone()
        }
    }
}

/// Appends one JSON line per record, flushing after each so a crash
/// loses at most the line being written.
pub struct RecordWriter<W: Write> {
    out: W,
}

impl RecordWriter<BufWriter<File>> {
    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordWriter {
            out: BufWriter::new(file),
        })
    }
}

impl<W: Write> RecordWriter<W> {
    pub fn new(out: W) -> Self {
        RecordWriter { out }
    }

    pub fn write(&mut self, record: &RunRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Records from a possibly truncated stream.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecordRead {
    pub records: Vec<RunRecord>,
    /// A trailing incomplete or corrupt line was dropped.
    pub truncated: bool,
}

/// Parse complete lines up to the first unreadable one. Everything after a
/// bad line is ignored, so a file cut off mid-write yields its prefix.
pub fn read_records<R: Read>(input: R) -> Result<RecordRead> {
    let mut reader = BufReader::new(input);
    let mut out = RecordRead::default();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        let complete = buf.last() == Some(&b'\n');
        let line = String::from_utf8_lossy(&buf);
        if line.trim().is_empty() && complete {
            continue;
        }
        match serde_json::from_str::<RunRecord>(line.trim_end()) {
            Ok(r) if complete => out.records.push(r),
            _ => {
                out.truncated = true;
                break;
            }
        }
    }
    Ok(out)
}

pub fn read_records_file(path: &Path) -> Result<RecordRead> {
    let file = File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    read_records(file)
}
