//! Continual cumulative release: a base model recomputed at `t = 2^k·B`,
//! with updates every `b₀` points in between. Updates over the whole
//! stretch since the base (`t − t_g = 2^j·b₀`) are regularized toward the
//! base and become the new checkpoint; all other updates fine-tune the
//! checkpoint on the newest `b₀` points.

use super::multires::MultiResScheduler;
use super::{pow2, EventKind, IdAlloc, PrivacyParams, ReleaseEvent, Scheduler, Trainer};
use crate::erm::ModelId;
use crate::error::{Error, Result};
use crate::ledger::{Eps, Subsystem};
use crate::mechanisms::{noise_scale, NoiseKind, SamplingRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaseSource {
    /// Re-release the cumulative multi-resolution model; its charge is
    /// booked under the multires subsystem.
    #[default]
    Multires,
    /// Train the base inside this scheduler. Every release then runs at half
    /// the privacy parameter so bases and updates together stay within `ε`.
    Standalone,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinualConfig {
    pub block: usize,
    pub batch: usize,
    pub params: PrivacyParams,
    pub sampled: bool,
    pub base_source: BaseSource,
    /// Recompute the base at `t = 2^k·B` for `k ≥ 0` (first base at `B`).
    /// When false, only `k ≥ 1` counts and updates before `2B` are
    /// regularized toward the origin.
    pub base_at_block: bool,
}

impl ContinualConfig {
    pub fn new(block: usize, batch: usize, params: PrivacyParams) -> Self {
        Self {
            block,
            batch,
            params,
            sampled: false,
            base_source: BaseSource::Multires,
            base_at_block: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block == 0 || self.batch == 0 {
            return Err(Error::invalid("B/b0", "block and batch sizes must be positive"));
        }
        if self.batch > self.block || self.block % self.batch != 0 {
            return Err(Error::invalid(
                "b0",
                format!("B = {} must be a multiple of b0 = {}", self.block, self.batch),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContinualState {
    /// Current base model `f_g`.
    pub base: Option<ModelId>,
    /// Current checkpoint `f_c`.
    pub checkpoint: Option<ModelId>,
    /// Time of the last base, `t_g`.
    pub base_time: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContinualCase {
    Base { level: u32 },
    Large { level: u32 },
    Small,
    Idle,
}

fn power_of_two_exponent(x: usize) -> Option<u32> {
    x.is_power_of_two().then(|| x.trailing_zeros())
}

/// First matching case at step `t` given the last base time.
pub fn classify(t: usize, base_time: usize, block: usize, batch: usize, base_at_block: bool) -> ContinualCase {
    if t < block || t == 0 {
        return ContinualCase::Idle;
    }
    if t % block == 0 {
        if let Some(k) = power_of_two_exponent(t / block) {
            if base_at_block || k >= 1 {
                return ContinualCase::Base { level: k };
            }
        }
    }
    if t > base_time && (t - base_time) % batch == 0 {
        let i = (t - base_time) / batch;
        return match power_of_two_exponent(i) {
            Some(j) if j >= 1 => ContinualCase::Large { level: j },
            _ => ContinualCase::Small,
        };
    }
    ContinualCase::Idle
}

#[derive(Debug, Clone)]
pub struct ContinualScheduler {
    cfg: ContinualConfig,
    state: ContinualState,
    multires: MultiResScheduler,
    ids: IdAlloc,
}

impl ContinualScheduler {
    pub fn new(cfg: ContinualConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            multires: MultiResScheduler::new(cfg.block, cfg.params, false)?,
            cfg,
            state: ContinualState::default(),
            ids: IdAlloc::default(),
        })
    }

    pub fn state(&self) -> ContinualState {
        self.state
    }

    /// Extra halving applied in standalone mode.
    fn share(&self) -> i128 {
        match self.cfg.base_source {
            BaseSource::Multires => 1,
            BaseSource::Standalone => 2,
        }
    }

    fn update_event(&mut self, t: usize, case: ContinualCase) -> Result<ReleaseEvent> {
        let p = &self.cfg.params;
        let b0 = self.cfg.batch;
        let share = self.share();
        let id = self.ids.next();
        let (kind, level, interval, reg, noise, sampling, eps) = match case {
            ContinualCase::Large { level } => {
                let (noise, sampling) = if self.cfg.sampled {
                    (
                        NoiseKind::PbermSampled { batch: b0, level },
                        Some(SamplingRule::ExpFormula { level }),
                    )
                } else {
                    (NoiseKind::Pberm { batch: b0 }, None)
                };
                (
                    EventKind::LargeUpdate,
                    Some(level),
                    (self.state.base_time, t - 1),
                    self.state.base,
                    noise,
                    sampling,
                    p.fraction(1, 2 * share * pow2(level)),
                )
            }
            ContinualCase::Small => (
                EventKind::SmallUpdate,
                None,
                (t - b0, t - 1),
                self.state.checkpoint,
                NoiseKind::Pberm { batch: b0 },
                None,
                p.fraction(1, 2 * share),
            ),
            _ => unreachable!("update_event called for a non-update case"),
        };
        let sampled_p = sampling.map(|r| r.probability(p.eps_f64())).transpose()?;
        Ok(ReleaseEvent {
            t,
            kind,
            level,
            interval,
            model_id: id,
            reg_source: reg,
            trainer: Trainer::Pberm,
            noise_scale: noise_scale(noise, &p.noise())? * share as f64,
            sampling,
            sampled_p,
            eps,
            subsystem: Subsystem::Continual,
            mechanism: match (kind, self.cfg.sampled) {
                (EventKind::LargeUpdate, true) => "pberm-large-sampled",
                (EventKind::LargeUpdate, false) => "pberm-large",
                _ => "pberm-small",
            },
            released: true,
        })
    }

    /// One step of the case rule; mutates the base/checkpoint state.
    pub fn continual_step(&mut self, t: usize) -> Result<Vec<ReleaseEvent>> {
        let case = classify(
            t,
            self.state.base_time,
            self.cfg.block,
            self.cfg.batch,
            self.cfg.base_at_block,
        );
        let mut out = Vec::new();
        match case {
            ContinualCase::Idle => {}
            ContinualCase::Base { level } => {
                let interval = (0, t - 1);
                let id = self.ids.next();
                match self.cfg.base_source {
                    BaseSource::Multires => {
                        let mut m = self.multires.event(t, level, interval, id)?;
                        m.released = false;
                        out.push(m);
                        out.push(ReleaseEvent {
                            t,
                            kind: EventKind::Base,
                            level: Some(level),
                            interval,
                            model_id: id,
                            reg_source: None,
                            trainer: Trainer::Adopt,
                            noise_scale: 0.0,
                            sampling: None,
                            sampled_p: None,
                            eps: Eps::from_integer(0),
                            subsystem: Subsystem::Continual,
                            mechanism: "adopt-multires",
                            released: true,
                        });
                    }
                    BaseSource::Standalone => {
                        let p = &self.cfg.params;
                        let scale = noise_scale(NoiseKind::MultiRes { block: self.cfg.block }, &p.noise())? * 2.0;
                        out.push(ReleaseEvent {
                            t,
                            kind: EventKind::Base,
                            level: Some(level),
                            interval,
                            model_id: id,
                            reg_source: None,
                            trainer: Trainer::Psgd,
                            noise_scale: scale,
                            sampling: None,
                            sampled_p: None,
                            eps: p.fraction(1, 4 * pow2(level)),
                            subsystem: Subsystem::Continual,
                            mechanism: "psgd-base",
                            released: true,
                        });
                    }
                }
                self.state = ContinualState {
                    base: Some(id),
                    checkpoint: Some(id),
                    base_time: t,
                };
            }
            ContinualCase::Large { .. } => {
                let ev = self.update_event(t, case)?;
                self.state.checkpoint = Some(ev.model_id);
                out.push(ev);
            }
            ContinualCase::Small => out.push(self.update_event(t, case)?),
        }
        Ok(out)
    }
}

impl Scheduler for ContinualScheduler {
    fn step(&mut self, t: usize) -> Result<Vec<ReleaseEvent>> {
        self.continual_step(t)
    }

    fn name(&self) -> &'static str {
        if self.cfg.sampled {
            "continual-sample"
        } else {
            "continual"
        }
    }

    fn unit(&self) -> usize {
        self.cfg.batch
    }

    fn base_interval(&self) -> Option<(usize, usize)> {
        (self.state.base.is_some() && self.state.base_time > 0).then(|| (0, self.state.base_time - 1))
    }

    fn eps(&self) -> Eps {
        self.cfg.params.eps
    }
}
