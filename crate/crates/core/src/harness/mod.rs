//! Data sources, experiment replay, evaluation and metrics export.

pub mod bounds;
pub mod csv_source;
pub mod idx;
pub mod metrics;
pub mod replay;
pub mod synth;

pub use bounds::{utility_bound, BoundKind, TheoryParams};
pub use csv_source::{load_csv, parse_csv};
pub use idx::{load_idx, parse_idx};
pub use metrics::{export_metrics, import_metrics, read_metrics, write_metrics, MetricsFormat, MetricsRecord, CSV_HEADER};
pub use replay::{
    build_scheduler, replay, replay_seeds, resolve_lipschitz, summarize, Quantiles, ReplayConfig, ReplayRun,
    SchedulerKind, SummaryRow,
};
pub use synth::{synth_holdout, synth_stream, SynthConfig};

use std::path::PathBuf;

use crate::erm::Dataset;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    IdxFiles { images: PathBuf, labels: PathBuf },
    Csv(PathBuf),
    Synthetic(SynthConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    AsGiven,
    Shuffled(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSource {
    pub kind: SourceKind,
    pub order: Order,
}

impl StreamSource {
    pub fn load(&self) -> Result<Dataset> {
        let ds = match &self.kind {
            SourceKind::IdxFiles { images, labels } => load_idx(images, labels)?,
            SourceKind::Csv(path) => load_csv(path)?,
            SourceKind::Synthetic(cfg) => synth_stream(cfg)?,
        };
        Ok(match self.order {
            Order::AsGiven => ds,
            Order::Shuffled(seed) => ds.shuffled(seed),
        })
    }
}
