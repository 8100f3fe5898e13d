//! Runs a scheduler over a stream and evaluates every released model.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::bounds::{utility_bound, BoundKind, TheoryParams};
use super::metrics::MetricsRecord;
use crate::erm::{evaluate_accuracy, lipschitz_constant, Dataset, LipschitzMode, TrainConfig};
use crate::error::{Error, Result};
use crate::ledger::{eps_to_f64, Eps, Subsystem};
use crate::schedule::{
    run_schedule, BaseSource, BaselineKind, BaselineScheduler, ContinualConfig, ContinualScheduler, EventKind,
    ExecConfig, MultiResScheduler, PrivacyParams, RunOutput, Scheduler, SlidingConfig, SlidingScheduler,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    Multires,
    MultiresSample,
    Continual,
    ContinualSample,
    Sliding,
    SlidingSample,
    BaselineIndependent,
    BaselineBasic,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 8] = [
        SchedulerKind::Multires,
        SchedulerKind::MultiresSample,
        SchedulerKind::Continual,
        SchedulerKind::ContinualSample,
        SchedulerKind::Sliding,
        SchedulerKind::SlidingSample,
        SchedulerKind::BaselineIndependent,
        SchedulerKind::BaselineBasic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SchedulerKind::Multires => "multires",
            SchedulerKind::MultiresSample => "multires-sample",
            SchedulerKind::Continual => "continual",
            SchedulerKind::ContinualSample => "continual-sample",
            SchedulerKind::Sliding => "sliding",
            SchedulerKind::SlidingSample => "sliding-sample",
            SchedulerKind::BaselineIndependent => "baseline-independent",
            SchedulerKind::BaselineBasic => "baseline-basic",
        }
    }

    /// Which of `B`, `b0`, `w`, `w0` the scheduler needs.
    pub fn required(&self) -> &'static [&'static str] {
        match self {
            SchedulerKind::Multires | SchedulerKind::MultiresSample => &["B"],
            SchedulerKind::Continual | SchedulerKind::ContinualSample | SchedulerKind::BaselineBasic => &["B", "b0"],
            SchedulerKind::Sliding | SchedulerKind::SlidingSample => &["w", "w0"],
            SchedulerKind::BaselineIndependent => &["b0"],
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::invalid("scheduler", format!("`{s}` is not one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayConfig {
    pub scheduler: SchedulerKind,
    pub eps: Eps,
    pub lambda: f64,
    pub block: Option<usize>,
    pub batch: Option<usize>,
    pub w: Option<usize>,
    pub w0: Option<usize>,
    /// The seed field is ignored; each replay supplies its own.
    pub train: TrainConfig,
    /// Overrides the public Lipschitz bound.
    pub lipschitz: Option<f64>,
    /// Per-example norm cap used in the public bound. Defaults to 1 when
    /// clipping, otherwise to the largest example norm in the stream.
    pub feature_cap: Option<f64>,
    pub clip_l1: bool,
    /// False: no noise, no ledger.
    pub private: bool,
    pub base_source: BaseSource,
    pub base_at_block: bool,
    pub theory: Option<TheoryParams>,
}

impl ReplayConfig {
    pub fn new(scheduler: SchedulerKind, eps: Eps, lambda: f64) -> Self {
        Self {
            scheduler,
            eps,
            lambda,
            block: None,
            batch: None,
            w: None,
            w0: None,
            train: TrainConfig::default(),
            lipschitz: None,
            feature_cap: None,
            clip_l1: true,
            private: true,
            base_source: BaseSource::Multires,
            base_at_block: true,
            theory: None,
        }
    }

    fn field(&self, name: &'static str) -> Result<usize> {
        let v = match name {
            "B" => self.block,
            "b0" => self.batch,
            "w" => self.w,
            _ => self.w0,
        };
        v.ok_or_else(|| Error::invalid(name, format!("required by scheduler {}", self.scheduler)))
    }

    /// Checks required fields and the structural constraints by building
    /// the scheduler with placeholder privacy parameters.
    pub fn validate(&self) -> Result<()> {
        for name in self.scheduler.required() {
            self.field(name)?;
        }
        build_scheduler(self, 1.0).map(|_| ())
    }

    /// Size of the smallest update batch.
    pub fn unit(&self) -> Result<usize> {
        match self.scheduler {
            SchedulerKind::Multires | SchedulerKind::MultiresSample => self.field("B"),
            SchedulerKind::Sliding | SchedulerKind::SlidingSample => self.field("w0"),
            _ => self.field("b0"),
        }
    }
}

pub fn build_scheduler(cfg: &ReplayConfig, lipschitz: f64) -> Result<Box<dyn Scheduler>> {
    let params = PrivacyParams::new(cfg.eps, lipschitz, cfg.lambda)?;
    let s: Box<dyn Scheduler> = match cfg.scheduler {
        SchedulerKind::Multires | SchedulerKind::MultiresSample => Box::new(MultiResScheduler::new(
            cfg.field("B")?,
            params,
            cfg.scheduler == SchedulerKind::MultiresSample,
        )?),
        SchedulerKind::Continual | SchedulerKind::ContinualSample => {
            let mut c = ContinualConfig::new(cfg.field("B")?, cfg.field("b0")?, params);
            c.sampled = cfg.scheduler == SchedulerKind::ContinualSample;
            c.base_source = cfg.base_source;
            c.base_at_block = cfg.base_at_block;
            Box::new(ContinualScheduler::new(c)?)
        }
        SchedulerKind::Sliding | SchedulerKind::SlidingSample => Box::new(SlidingScheduler::new(SlidingConfig {
            w: cfg.field("w")?,
            w0: cfg.field("w0")?,
            params,
            sampled: cfg.scheduler == SchedulerKind::SlidingSample,
        })?),
        SchedulerKind::BaselineIndependent => Box::new(BaselineScheduler::new(
            BaselineKind::Independent,
            cfg.block.unwrap_or(0),
            cfg.field("b0")?,
            params,
        )?),
        SchedulerKind::BaselineBasic => Box::new(BaselineScheduler::new(
            BaselineKind::BasicCumulative,
            cfg.field("B")?,
            cfg.field("b0")?,
            params,
        )?),
    };
    Ok(s)
}

/// The Lipschitz constant used to calibrate noise. `stream` is consulted
/// only when neither an override nor a feature cap is available and the
/// data is not clipped.
pub fn resolve_lipschitz(cfg: &ReplayConfig, stream: &Dataset) -> Result<f64> {
    if let Some(l) = cfg.lipschitz {
        return Ok(l);
    }
    let cap = match (cfg.feature_cap, cfg.clip_l1) {
        (Some(c), _) => c,
        (None, true) => 1.0,
        (None, false) => stream.view().max_row_norm(),
    };
    let l = lipschitz_constant(LipschitzMode::PublicBound {
        classes: stream.classes(),
        samples: cfg.unit()?,
        feature_cap: cap,
    })?;
    if l > 0.0 {
        Ok(l)
    } else {
        Err(Error::invalid("L", "Lipschitz bound is zero; set a positive feature cap or override"))
    }
}

/// Range-add / global-max tree over stream indices, exact in ε.
struct RunningMax {
    n: usize,
    max: Vec<Eps>,
    add: Vec<Eps>,
}

impl RunningMax {
    fn new(n: usize) -> Self {
        let size = 4 * n.max(1);
        Self {
            n: n.max(1),
            max: vec![Eps::from_integer(0); size],
            add: vec![Eps::from_integer(0); size],
        }
    }

    fn charge(&mut self, a: usize, b: usize, v: Eps) {
        self.update(1, 0, self.n - 1, a, b, v);
    }

    fn update(&mut self, node: usize, lo: usize, hi: usize, a: usize, b: usize, v: Eps) {
        if b < lo || hi < a {
            return;
        }
        if a <= lo && hi <= b {
            self.add[node] += v;
            self.max[node] += v;
            return;
        }
        let mid = (lo + hi) / 2;
        self.update(2 * node, lo, mid, a, b, v);
        self.update(2 * node + 1, mid + 1, hi, a, b, v);
        self.max[node] = self.add[node] + self.max[2 * node].max(self.max[2 * node + 1]);
    }

    fn get(&self) -> Eps {
        self.max[1]
    }
}

fn bound_for(ev_kind: EventKind, level: Option<u32>, cfg: &ReplayConfig, base: &TheoryParams, unit: usize) -> Result<Option<f64>> {
    let kind = match ev_kind {
        EventKind::MultiRes => BoundKind::MultiresRisk,
        EventKind::LargeUpdate | EventKind::SmallUpdate => BoundKind::ContinualRisk,
        EventKind::WindowInit | EventKind::WindowAdvance | EventKind::WindowRefresh => BoundKind::SlidingRisk,
        _ => return Ok(None),
    };
    let mut p = *base;
    p.lambda = p.lambda.or(Some(cfg.lambda));
    p.eps = p.eps.or(Some(eps_to_f64(&cfg.eps)));
    p.unit = p.unit.or(Some(unit as f64));
    p.level = Some(level.unwrap_or(0));
    utility_bound(kind, &p).map(Some)
}

#[derive(Debug, Clone)]
pub struct ReplayRun {
    pub seed: u64,
    pub lipschitz: f64,
    pub records: Vec<MetricsRecord>,
    pub output: RunOutput,
}

impl ReplayRun {
    pub fn final_acc_test(&self) -> Option<f64> {
        self.records.last().map(|r| r.acc_test)
    }
}

/// Feeds `stream` to the configured scheduler and evaluates each released
/// model on `test`, on the newest `unit` stream points, and on the data
/// behind the current base model.
pub fn replay(stream: &Dataset, test: &Dataset, cfg: &ReplayConfig, seed: u64) -> Result<ReplayRun> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::EmptyData("replay test set"));
    }
    let (stream, test) = if cfg.clip_l1 {
        let (mut s, mut t) = (stream.clone(), test.clone());
        s.clip_l1(1.0);
        t.clip_l1(1.0);
        (std::borrow::Cow::Owned(s), std::borrow::Cow::Owned(t))
    } else {
        (std::borrow::Cow::Borrowed(stream), std::borrow::Cow::Borrowed(test))
    };
    let lipschitz = resolve_lipschitz(cfg, &stream)?;
    let mut scheduler = build_scheduler(cfg, lipschitz)?;
    let unit = cfg.unit()?;
    let exec = ExecConfig {
        train: TrainConfig { seed, ..cfg.train },
        lambda: cfg.lambda,
        private: cfg.private,
    };
    let mut theory = cfg.theory;
    if let Some(t) = theory.as_mut() {
        t.l = t.l.or(Some(lipschitz));
        t.d = t.d.or(Some((stream.dim() * stream.classes()) as f64));
    }
    let mut running: BTreeMap<Subsystem, RunningMax> = BTreeMap::new();
    let mut records = Vec::new();
    let output = run_schedule(scheduler.as_mut(), &stream, exec, |ev, outcome, _, sched| {
        let tracker = running.entry(ev.subsystem).or_insert_with(|| RunningMax::new(stream.len()));
        if cfg.private && ev.eps > Ratio::from_integer(0) {
            tracker.charge(ev.interval.0, ev.interval.1, ev.eps);
        }
        if !ev.released {
            return Ok(());
        }
        let model = &outcome.model;
        let recent = stream.range(ev.t.saturating_sub(unit), ev.t - 1)?;
        let acc_old = sched
            .base_interval()
            .map(|(a, b)| stream.range(a, b).and_then(|v| evaluate_accuracy(model, v)))
            .transpose()?;
        let eps_max = tracker.get();
        let bound = match &theory {
            Some(t) => bound_for(ev.kind, ev.level, cfg, t, unit)?,
            None => None,
        };
        records.push(MetricsRecord {
            t: ev.t,
            scheduler: cfg.scheduler.name().to_string(),
            kind: ev.kind.name().to_string(),
            eps: eps_to_f64(&cfg.eps),
            lambda: cfg.lambda,
            batch: unit,
            acc_recent: evaluate_accuracy(model, recent)?,
            acc_test: evaluate_accuracy(model, test.view())?,
            acc_old,
            noise_l2: outcome.noise_l2,
            eps_max_num: *eps_max.numer(),
            eps_max_den: *eps_max.denom(),
            bound,
            seed,
        });
        Ok(())
    })?;
    Ok(ReplayRun {
        seed,
        lipschitz,
        records,
        output,
    })
}

/// One replay per seed, returned in seed-list order.
pub fn replay_seeds(stream: &Dataset, test: &Dataset, cfg: &ReplayConfig, seeds: &[u64]) -> Result<Vec<ReplayRun>> {
    seeds.iter().map(|&s| replay(stream, test, cfg, s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
}

impl Quantiles {
    /// Linear-interpolation quantiles; `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let x = p * (v.len() - 1) as f64;
            let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (x - lo as f64)
        };
        Some(Self {
            p25: q(0.25),
            median: q(0.5),
            p75: q(0.75),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub t: usize,
    pub kind: String,
    pub seeds: usize,
    pub acc_test: Quantiles,
    pub acc_recent: Quantiles,
    pub noise_l2: Quantiles,
}

/// Aligns releases across runs by `(t, position within t)` and reports
/// quartiles of each metric.
pub fn summarize(runs: &[ReplayRun]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(usize, usize), (String, Vec<&MetricsRecord>)> = BTreeMap::new();
    for run in runs {
        let mut last_t = None;
        let mut pos = 0;
        for r in &run.records {
            pos = if last_t == Some(r.t) { pos + 1 } else { 0 };
            last_t = Some(r.t);
            groups
                .entry((r.t, pos))
                .or_insert_with(|| (r.kind.clone(), Vec::new()))
                .1
                .push(r);
        }
    }
    groups
        .into_iter()
        .filter_map(|((t, _), (kind, recs))| {
            let col = |f: fn(&MetricsRecord) -> f64| Quantiles::of(&recs.iter().map(|r| f(r)).collect::<Vec<_>>());
            Some(SummaryRow {
                t,
                kind,
                seeds: recs.len(),
                acc_test: col(|r| r.acc_test)?,
                acc_recent: col(|r| r.acc_recent)?,
                noise_l2: col(|r| r.noise_l2)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{synth_holdout, synth_stream, SynthConfig};

    fn data() -> (Dataset, Dataset) {
        let cfg = SynthConfig {
            d: 4,
            k: 3,
            n: 256,
            sigma: 0.3,
            drift_rate: 0.0,
            seed: 2,
        };
        (synth_stream(&cfg).unwrap(), synth_holdout(&cfg, 128).unwrap())
    }

    fn continual() -> ReplayConfig {
        let mut cfg = ReplayConfig::new(SchedulerKind::Continual, Ratio::from_integer(1), 1.0);
        cfg.block = Some(64);
        cfg.batch = Some(16);
        cfg.train.iterations = 50;
        cfg.train.minibatch = 16;
        cfg
    }

    #[test]
    fn running_max_matches_ledger() {
        let (s, t) = data();
        let run = replay(&s, &t, &continual(), 1).unwrap();
        let (_, max) = run.output.ledger.max_point_loss(crate::ledger::Filter::Only(&[Subsystem::Continual]));
        let last = run.records.iter().rev().find(|r| r.kind != "base").unwrap();
        assert_eq!(Ratio::new(last.eps_max_num, last.eps_max_den), max);
        let mut prev = Ratio::from_integer(0);
        for r in run.records.iter().filter(|r| r.kind != "base") {
            let e = Ratio::new(r.eps_max_num, r.eps_max_den);
            assert!(e >= prev);
            prev = e;
        }
    }

    #[test]
    fn non_private_mode_has_no_noise_or_charges() {
        let (s, t) = data();
        let mut cfg = continual();
        cfg.private = false;
        let run = replay(&s, &t, &cfg, 1).unwrap();
        assert!(!run.output.ledger_enabled && run.output.ledger.is_empty());
        assert!(run.records.iter().all(|r| r.noise_l2 == 0.0 && r.eps_max_num == 0));
    }

    #[test]
    fn accuracies_reproduce_from_stored_models() {
        let (s, t) = data();
        let run = replay(&s, &t, &continual(), 3).unwrap();
        let mut test = t.clone();
        test.clip_l1(1.0);
        for ((_, model), rec) in run.output.released.iter().zip(&run.records) {
            assert_eq!(evaluate_accuracy(model, test.view()).unwrap(), rec.acc_test);
        }
    }

    #[test]
    fn summary_is_seed_order_independent() {
        let (s, t) = data();
        let cfg = continual();
        let a = summarize(&replay_seeds(&s, &t, &cfg, &[1, 2, 3, 4]).unwrap());
        let b = summarize(&replay_seeds(&s, &t, &cfg, &[4, 2, 3, 1]).unwrap());
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.seeds == 4));
    }

    #[test]
    fn missing_required_field_names_it() {
        let cfg = ReplayConfig::new(SchedulerKind::Sliding, Ratio::from_integer(1), 1.0);
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
    }

    #[test]
    fn quantiles_interpolate() {
        let q = Quantiles::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((q.p25, q.median, q.p75), (1.75, 2.5, 3.25));
    }
}
