//! JSON-lines event traces.

use std::io::{BufRead, Write};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::{EventKind, ReleaseEvent};
use crate::erm::ModelId;
use crate::error::{Error, Result};
use crate::ledger::{Eps, Ledger, Subsystem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub kind: String,
    pub level: Option<u32>,
    pub a: usize,
    pub b: usize,
    pub reg_source: Option<ModelId>,
    pub noise_scale: f64,
    pub sampled_p: Option<f64>,
    pub eps_num: i128,
    pub eps_den: i128,
    pub model_id: ModelId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsystem: Option<Subsystem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<String>,
    #[serde(default = "yes")]
    pub released: bool,
}

fn yes() -> bool {
    true
}

impl From<&ReleaseEvent> for TraceRecord {
    fn from(ev: &ReleaseEvent) -> Self {
        Self {
            t: ev.t,
            kind: ev.kind.name().to_string(),
            level: ev.level,
            a: ev.interval.0,
            b: ev.interval.1,
            reg_source: ev.reg_source,
            noise_scale: ev.noise_scale,
            sampled_p: ev.sampled_p,
            eps_num: *ev.eps.numer(),
            eps_den: *ev.eps.denom(),
            model_id: ev.model_id,
            subsystem: Some(ev.subsystem),
            mechanism: Some(ev.mechanism.to_string()),
            released: ev.released,
        }
    }
}

impl TraceRecord {
    pub fn eps(&self) -> Result<Eps> {
        if self.eps_den <= 0 {
            return Err(Error::invalid("eps_den", "must be positive"));
        }
        Ok(Ratio::new(self.eps_num, self.eps_den))
    }

    /// The recorded subsystem, or the one implied by the event kind.
    pub fn subsystem(&self) -> Result<Subsystem> {
        if let Some(s) = self.subsystem {
            return Ok(s);
        }
        let kind = EventKind::from_name(&self.kind)
            .ok_or_else(|| Error::invalid("kind", format!("unknown event kind `{}`", self.kind)))?;
        Ok(match kind {
            EventKind::MultiRes => Subsystem::Multires,
            EventKind::Base | EventKind::LargeUpdate | EventKind::SmallUpdate => Subsystem::Continual,
            EventKind::WindowInit | EventKind::WindowAdvance | EventKind::WindowRefresh => Subsystem::Sliding,
            EventKind::BaselineBasicCumulative if self.level.is_some() => Subsystem::Multires,
            EventKind::BaselineIndependent | EventKind::BaselineBasicCumulative => Subsystem::Baseline,
        })
    }
}

pub fn write_trace<W: Write>(events: &[ReleaseEvent], mut out: W) -> Result<()> {
    for ev in events {
        serde_json::to_writer(&mut out, &TraceRecord::from(ev)).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a trace; blank lines are skipped, errors carry the 1-based line.
pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| Error::Trace {
            line: n + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Replays every positive charge of a trace into a fresh ledger with
/// budget `eps` for each subsystem.
pub fn ledger_from_trace(records: &[TraceRecord], eps: Eps) -> Result<Ledger> {
    let mut ledger = Ledger::with_uniform_budget(eps);
    for (n, rec) in records.iter().enumerate() {
        let at = |e: Error| Error::Trace {
            line: n + 1,
            reason: e.to_string(),
        };
        let charge = rec.eps().map_err(at)?;
        if charge > Ratio::from_integer(0) {
            let mechanism = rec.mechanism.clone().unwrap_or_else(|| rec.kind.clone());
            ledger
                .charge((rec.a, rec.b), charge, rec.subsystem().map_err(at)?, rec.t, mechanism)
                .map_err(at)?;
        }
    }
    Ok(ledger)
}
