//! Release schedulers.
//!
//! A scheduler is a deterministic event generator: given the number of
//! stream points seen so far (`t`, 1-based count) it returns the releases due
//! at that step. Events carry everything needed to train, perturb and charge
//! a model, but no data; [`exec`] turns them into models. Keeping the two
//! apart means a whole schedule and its ledger can be produced without
//! touching data or randomness.
//!
//! Stream indices in event intervals are 0-based and inclusive: the first
//! `t` points are `[0, t-1]`.

pub mod baseline;
pub mod continual;
pub mod exec;
pub mod multires;
pub mod sliding;
pub mod trace;

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::erm::ModelId;
use crate::error::{Error, Result};
use crate::ledger::{eps_to_f64, Eps, Ledger, Subsystem};
use crate::mechanisms::SamplingRule;

pub use baseline::{BaselineKind, BaselineScheduler};
pub use continual::{classify, BaseSource, ContinualCase, ContinualConfig, ContinualScheduler, ContinualState};
pub use exec::{run_schedule, ExecConfig, Executor, Outcome, RunOutput};
pub use multires::{multires_events_at, MultiResScheduler};
pub use sliding::{window_k, Bucket, Side, SlidingConfig, SlidingScheduler, WindowState};
pub use trace::{ledger_from_trace, read_trace, write_trace, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    MultiRes,
    Base,
    LargeUpdate,
    SmallUpdate,
    WindowInit,
    WindowAdvance,
    WindowRefresh,
    BaselineIndependent,
    BaselineBasicCumulative,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::MultiRes => "multires",
            EventKind::Base => "base",
            EventKind::LargeUpdate => "large_update",
            EventKind::SmallUpdate => "small_update",
            EventKind::WindowInit => "window_init",
            EventKind::WindowAdvance => "window_advance",
            EventKind::WindowRefresh => "window_refresh",
            EventKind::BaselineIndependent => "baseline_independent",
            EventKind::BaselineBasicCumulative => "baseline_basic_cumulative",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        use EventKind::*;
        [
            MultiRes,
            Base,
            LargeUpdate,
            SmallUpdate,
            WindowInit,
            WindowAdvance,
            WindowRefresh,
            BaselineIndependent,
            BaselineBasicCumulative,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the model of an event is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trainer {
    /// Plain regularized SGD plus output noise.
    Psgd,
    /// SGD biased toward `reg_source` (the origin when absent) plus noise.
    Pberm,
    /// Re-release an existing model; no training, no charge.
    Adopt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReleaseEvent {
    pub t: usize,
    pub kind: EventKind,
    pub level: Option<u32>,
    pub interval: (usize, usize),
    pub model_id: ModelId,
    pub reg_source: Option<ModelId>,
    pub trainer: Trainer,
    pub noise_scale: f64,
    pub sampling: Option<SamplingRule>,
    pub sampled_p: Option<f64>,
    pub eps: Eps,
    pub subsystem: Subsystem,
    pub mechanism: &'static str,
    /// Whether this model is published at step `t` (as opposed to an
    /// intermediate link of a dependency chain).
    pub released: bool,
}

impl ReleaseEvent {
    pub fn len(&self) -> usize {
        self.interval.1 - self.interval.0 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Privacy parameters shared by every scheduler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    pub eps: Eps,
    pub lipschitz: f64,
    pub lambda: f64,
}

impl PrivacyParams {
    pub fn new(eps: Eps, lipschitz: f64, lambda: f64) -> Result<Self> {
        if eps <= Ratio::from_integer(0) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::invalid("L", "Lipschitz constant must be positive"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be positive"));
        }
        Ok(Self { eps, lipschitz, lambda })
    }

    pub fn eps_f64(&self) -> f64 {
        eps_to_f64(&self.eps)
    }

    pub(crate) fn noise(&self) -> crate::mechanisms::NoiseParams {
        crate::mechanisms::NoiseParams {
            lipschitz: self.lipschitz,
            lambda: self.lambda,
            eps: self.eps_f64(),
        }
    }

    /// `ε · num / den`.
    pub(crate) fn fraction(&self, num: i128, den: i128) -> Eps {
        self.eps * Ratio::new(num, den)
    }
}

/// `2^level` as a rational denominator factor.
pub(crate) fn pow2(level: u32) -> i128 {
    1i128 << level
}

#[derive(Debug, Clone, Default)]
pub struct IdAlloc(ModelId);

impl IdAlloc {
    pub fn next(&mut self) -> ModelId {
        let id = self.0;
        self.0 += 1;
        id
    }
}

pub trait Scheduler {
    /// Releases due once `t` points have arrived.
    fn step(&mut self, t: usize) -> Result<Vec<ReleaseEvent>>;

    fn name(&self) -> &'static str;

    /// Size of the smallest update batch (`B`, `b₀` or `w₀`).
    fn unit(&self) -> usize;

    /// Data behind the current base model, if the discipline has one.
    fn base_interval(&self) -> Option<(usize, usize)> {
        None
    }

    fn eps(&self) -> Eps;
}

/// Runs a scheduler for `horizon` steps without data, charging a fresh
/// ledger with every planned release.
pub fn plan(scheduler: &mut dyn Scheduler, horizon: usize) -> Result<(Vec<ReleaseEvent>, Ledger)> {
    let mut events = Vec::new();
    let mut ledger = Ledger::with_uniform_budget(scheduler.eps());
    for t in 1..=horizon {
        for ev in scheduler.step(t)? {
            if ev.eps > Ratio::from_integer(0) {
                ledger.charge(ev.interval, ev.eps, ev.subsystem, ev.t, ev.mechanism)?;
            }
            events.push(ev);
        }
    }
    Ok((events, ledger))
}
