use super::{pow2, EventKind, IdAlloc, PrivacyParams, ReleaseEvent, Scheduler, Trainer};
use crate::error::{Error, Result};
use crate::ledger::{Eps, Subsystem};
use crate::mechanisms::{noise_scale, NoiseKind, SamplingRule};

/// Blocks ending at `t` whose size is `2^k·block` with `2^k·block | t`,
/// as `(k, [a, b])`.
pub fn multires_events_at(t: usize, block: usize) -> Vec<(u32, (usize, usize))> {
    let mut out = Vec::new();
    if t == 0 || block == 0 {
        return out;
    }
    let mut level = 0u32;
    let mut size = block;
    while size <= t {
        if t % size == 0 {
            out.push((level, (t - size, t - 1)));
        }
        level += 1;
        size = match size.checked_mul(2) {
            Some(s) => s,
            None => break,
        };
    }
    out
}

/// Multi-resolution release: a private model over every aligned block of
/// size `2^k·B` as soon as it is complete. Each level-`k` release costs
/// `ε/(2·2^k)`, so a point's total over all levels stays below `ε`.
#[derive(Debug, Clone)]
pub struct MultiResScheduler {
    block: usize,
    params: PrivacyParams,
    sampled: bool,
    prefix_only: bool,
    ids: IdAlloc,
}

impl MultiResScheduler {
    pub fn new(block: usize, params: PrivacyParams, sampled: bool) -> Result<Self> {
        if block == 0 {
            return Err(Error::invalid("B", "block size must be positive"));
        }
        Ok(Self {
            block,
            params,
            sampled,
            prefix_only: false,
            ids: IdAlloc::default(),
        })
    }

    /// Only the blocks that start at the beginning of the stream, i.e. the
    /// cumulative models at `t = 2^k·B`.
    pub fn prefix_only(mut self) -> Self {
        self.prefix_only = true;
        self
    }

    pub(crate) fn event(&self, t: usize, level: u32, interval: (usize, usize), model_id: u64) -> Result<ReleaseEvent> {
        let (kind, sampling) = if self.sampled {
            (
                NoiseKind::MultiResSampled {
                    block: self.block,
                    level,
                },
                Some(SamplingRule::ExpFormula { level }),
            )
        } else {
            (NoiseKind::MultiRes { block: self.block }, None)
        };
        let sampled_p = sampling
            .map(|r| r.probability(self.params.eps_f64()))
            .transpose()?;
        Ok(ReleaseEvent {
            t,
            kind: EventKind::MultiRes,
            level: Some(level),
            interval,
            model_id,
            reg_source: None,
            trainer: Trainer::Psgd,
            noise_scale: noise_scale(kind, &self.params.noise())?,
            sampling,
            sampled_p,
            eps: self.params.fraction(1, 2 * pow2(level)),
            subsystem: Subsystem::Multires,
            mechanism: if self.sampled { "psgd-sampled" } else { "psgd" },
            released: true,
        })
    }
}

impl Scheduler for MultiResScheduler {
    fn step(&mut self, t: usize) -> Result<Vec<ReleaseEvent>> {
        let mut out = Vec::new();
        for (level, interval) in multires_events_at(t, self.block) {
            if self.prefix_only && interval.0 != 0 {
                continue;
            }
            let id = self.ids.next();
            out.push(self.event(t, level, interval, id)?);
        }
        Ok(out)
    }

    fn name(&self) -> &'static str {
        if self.sampled {
            "multires-sample"
        } else {
            "multires"
        }
    }

    fn unit(&self) -> usize {
        self.block
    }

    fn eps(&self) -> Eps {
        self.params.eps
    }
}
