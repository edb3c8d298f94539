//! Per-update telemetry records and their JSONL encoding.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Plain,
    Ige,
    Cge,
}

/// One line of the telemetry file; one per update report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub step: usize,
    pub stage: u8,
    pub query_id: u64,
    /// Template of the updated query; `None` for a CGE pool.
    pub template_id: Option<usize>,
    pub mode: Mode,
    pub pseudo_label: String,
    /// Evaluation-only: whether the pseudo-label equals the hidden answer.
    pub label_correct_vs_oracle: bool,
    pub group_accuracy: f64,
    pub entropy: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub applied: bool,
}

pub trait TelemetrySink {
    fn record(&mut self, record: &TelemetryRecord) -> Result<()>;
    /// Called once at the end of every step.
    fn flush_step(&mut self, _step: usize) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl TelemetrySink for NullSink {
    fn record(&mut self, _record: &TelemetryRecord) -> Result<()> {
        Ok(())
    }
}

/// Appends one JSON object per line and flushes at every step boundary.
pub struct JsonlSink<W: Write> {
    out: W,
}

impl JsonlSink<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }
}

impl<W: Write> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> TelemetrySink for JsonlSink<W> {
    fn record(&mut self, record: &TelemetryRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    fn flush_step(&mut self, _step: usize) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryLog {
    pub records: Vec<TelemetryRecord>,
    /// Set when a trailing partial line was skipped.
    pub truncated_tail: bool,
}

/// Reads a telemetry file. A malformed final line (a crashed run) is skipped
/// and reported through `truncated_tail`; a malformed line elsewhere is an error.
pub fn read_jsonl(path: &Path) -> Result<TelemetryLog> {
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    let last_nonempty = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut records = Vec::new();
    let mut truncated_tail = false;
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TelemetryRecord>(line) {
            Ok(r) => records.push(r),
            Err(_) if Some(i) == last_nonempty => truncated_tail = true,
            Err(e) => return Err(domain(format!("telemetry line {}: {e}", i + 1))),
        }
    }
    Ok(TelemetryLog {
        records,
        truncated_tail,
    })
}
