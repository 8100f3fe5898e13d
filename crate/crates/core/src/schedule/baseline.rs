//! Reference schedules for comparison runs.

use super::{pow2, EventKind, IdAlloc, PrivacyParams, ReleaseEvent, Scheduler, Trainer};
use crate::erm::ModelId;
use crate::error::{Error, Result};
use crate::ledger::{Eps, Subsystem};
use crate::mechanisms::{noise_scale, NoiseKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Every disjoint `b₀` batch trained from scratch and released alone.
    Independent,
    /// Cumulative retrain at `t = 2^k·B`; between retrains each `b₀` batch
    /// fine-tunes the previous release.
    BasicCumulative,
}

#[derive(Debug, Clone)]
pub struct BaselineScheduler {
    kind: BaselineKind,
    block: usize,
    batch: usize,
    params: PrivacyParams,
    last: Option<ModelId>,
    last_base_time: usize,
    ids: IdAlloc,
}

impl BaselineScheduler {
    pub fn new(kind: BaselineKind, block: usize, batch: usize, params: PrivacyParams) -> Result<Self> {
        if batch == 0 {
            return Err(Error::invalid("b0", "must be positive"));
        }
        if kind == BaselineKind::BasicCumulative && (block == 0 || block % batch != 0) {
            return Err(Error::invalid("B", format!("B = {block} must be a positive multiple of b0 = {batch}")));
        }
        Ok(Self {
            kind,
            block,
            batch,
            params,
            last: None,
            last_base_time: 0,
            ids: IdAlloc::default(),
        })
    }

    fn batch_event(&mut self, t: usize, kind: EventKind, reg: Option<ModelId>) -> Result<ReleaseEvent> {
        let id = self.ids.next();
        Ok(ReleaseEvent {
            t,
            kind,
            level: None,
            interval: (t - self.batch, t - 1),
            model_id: id,
            reg_source: reg,
            trainer: if reg.is_some() { Trainer::Pberm } else { Trainer::Psgd },
            noise_scale: noise_scale(NoiseKind::Pberm { batch: self.batch }, &self.params.noise())?,
            sampling: None,
            sampled_p: None,
            eps: self.params.fraction(1, 2),
            subsystem: Subsystem::Baseline,
            mechanism: if reg.is_some() { "basic-update" } else { "independent" },
            released: true,
        })
    }
}

impl Scheduler for BaselineScheduler {
    fn step(&mut self, t: usize) -> Result<Vec<ReleaseEvent>> {
        match self.kind {
            BaselineKind::Independent => {
                if t == 0 || t % self.batch != 0 {
                    return Ok(Vec::new());
                }
                Ok(vec![self.batch_event(t, EventKind::BaselineIndependent, None)?])
            }
            BaselineKind::BasicCumulative => {
                if t < self.block || t % self.batch != 0 {
                    return Ok(Vec::new());
                }
                let ratio = t / self.block;
                if t % self.block == 0 && ratio.is_power_of_two() {
                    let level = ratio.trailing_zeros();
                    let id = self.ids.next();
                    self.last = Some(id);
                    self.last_base_time = t;
                    return Ok(vec![ReleaseEvent {
                        t,
                        kind: EventKind::BaselineBasicCumulative,
                        level: Some(level),
                        interval: (0, t - 1),
                        model_id: id,
                        reg_source: None,
                        trainer: Trainer::Psgd,
                        noise_scale: noise_scale(NoiseKind::MultiRes { block: self.block }, &self.params.noise())?,
                        sampling: None,
                        sampled_p: None,
                        eps: self.params.fraction(1, 2 * pow2(level)),
                        subsystem: Subsystem::Multires,
                        mechanism: "cumulative-retrain",
                        released: true,
                    }]);
                }
                let ev = self.batch_event(t, EventKind::BaselineBasicCumulative, self.last)?;
                self.last = Some(ev.model_id);
                Ok(vec![ev])
            }
        }
    }

    fn name(&self) -> &'static str {
        match self.kind {
            BaselineKind::Independent => "baseline-independent",
            BaselineKind::BasicCumulative => "baseline-basic",
        }
    }

    fn unit(&self) -> usize {
        self.batch
    }

    fn base_interval(&self) -> Option<(usize, usize)> {
        (self.kind == BaselineKind::BasicCumulative && self.last_base_time > 0).then(|| (0, self.last_base_time - 1))
    }

    fn eps(&self) -> Eps {
        self.params.eps
    }
}
