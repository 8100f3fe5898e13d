//! Per-release evaluation rows and their CSV / JSON-lines export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 14] = [
    "t",
    "scheduler",
    "kind",
    "eps",
    "lambda",
    "batch",
    "acc_recent",
    "acc_test",
    "acc_old",
    "noise_l2",
    "eps_max_num",
    "eps_max_den",
    "bound",
    "seed",
];

/// One row per released model. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: usize,
    pub scheduler: String,
    pub kind: String,
    pub eps: f64,
    pub lambda: f64,
    /// `b₀`, `w₀` or `B`.
    pub batch: usize,
    pub acc_recent: f64,
    pub acc_test: f64,
    pub acc_old: Option<f64>,
    pub noise_l2: f64,
    /// Running maximum per-point loss of the event's subsystem.
    pub eps_max_num: i128,
    pub eps_max_den: i128,
    pub bound: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsFormat {
    Csv,
    Jsonl,
}

impl MetricsFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            MetricsFormat::Csv => "csv",
            MetricsFormat::Jsonl => "jsonl",
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    Error::Csv {
        row,
        reason: e.to_string(),
    }
}

/// Writes `records` to `out`, preceded by `preamble` lines prefixed with `#`.
pub fn write_metrics<W: Write>(records: &[MetricsRecord], out: W, format: MetricsFormat, preamble: &[String]) -> Result<()> {
    let mut out = BufWriter::new(out);
    for line in preamble {
        writeln!(out, "# {line}")?;
    }
    match format {
        MetricsFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut out);
            w.write_record(CSV_HEADER).map_err(csv_err)?;
            for r in records {
                w.serialize(r).map_err(csv_err)?;
            }
            w.flush()?;
        }
        MetricsFormat::Jsonl => {
            for r in records {
                serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
                out.write_all(b"\n")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn export_metrics(records: &[MetricsRecord], path: &Path, format: MetricsFormat, preamble: &[String]) -> Result<()> {
    write_metrics(records, File::create(path)?, format, preamble)
}

/// Reads either format back; `#` lines are skipped.
pub fn read_metrics<R: BufRead>(input: R, format: MetricsFormat) -> Result<Vec<MetricsRecord>> {
    match format {
        MetricsFormat::Csv => {
            let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
            r.deserialize().map(|rec| rec.map_err(csv_err)).collect()
        }
        MetricsFormat::Jsonl => {
            let mut out = Vec::new();
            for (n, line) in input.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                out.push(serde_json::from_str(&line).map_err(|e| Error::Trace {
                    line: n + 1,
                    reason: e.to_string(),
                })?);
            }
            Ok(out)
        }
    }
}

pub fn import_metrics(path: &Path, format: MetricsFormat) -> Result<Vec<MetricsRecord>> {
    read_metrics(BufReader::new(File::open(path)?), format)
}
