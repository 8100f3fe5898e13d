//! Turns release events into trained, perturbed models.

use std::collections::HashMap;

use num_rational::Ratio;

use super::{ReleaseEvent, Scheduler, Trainer};
use crate::erm::{self, Dataset, ModelId, ModelWeights, RegularizerSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::ledger::Ledger;
use crate::mechanisms::{output_perturb, subsample_indices, NoiseSpec};
use crate::rng::{derive_seed, Purpose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecConfig {
    /// SGD settings; `train.seed` is the run seed from which every per-model
    /// seed is derived.
    pub train: TrainConfig,
    pub lambda: f64,
    /// When false no noise is added and no privacy is charged.
    pub private: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub model: ModelWeights,
    pub noise_l2: f64,
    /// Number of examples the model was trained on.
    pub trained_on: usize,
    /// The subsample came out empty; the regularizer (or zero) model was
    /// kept and nothing was charged.
    pub skipped: bool,
}

/// Holds the models produced so far, keyed by id, and trains new ones.
pub struct Executor<'d> {
    data: &'d Dataset,
    cfg: ExecConfig,
    models: HashMap<ModelId, ModelWeights>,
    noise: HashMap<ModelId, f64>,
}

impl<'d> Executor<'d> {
    pub fn new(data: &'d Dataset, cfg: ExecConfig) -> Self {
        Self {
            data,
            cfg,
            models: HashMap::new(),
            noise: HashMap::new(),
        }
    }

    pub fn model(&self, id: ModelId) -> Option<&ModelWeights> {
        self.models.get(&id)
    }

    fn regularizer(&self, ev: &ReleaseEvent) -> Result<Option<&ModelWeights>> {
        ev.reg_source
            .map(|id| self.models.get(&id).ok_or(Error::UnknownModel(id)))
            .transpose()
    }

    pub fn execute(&mut self, ev: &ReleaseEvent) -> Result<Outcome> {
        if ev.trainer == Trainer::Adopt {
            let model = self
                .models
                .get(&ev.model_id)
                .cloned()
                .ok_or(Error::UnknownModel(ev.model_id))?;
            return Ok(Outcome {
                model,
                noise_l2: self.noise.get(&ev.model_id).copied().unwrap_or(0.0),
                trained_on: 0,
                skipped: false,
            });
        }
        let (a, b) = ev.interval;
        let view = self.data.range(a, b)?;
        let seed = self.cfg.train.seed;
        let sample;
        let view = match ev.sampled_p {
            Some(p) if p < 1.0 => {
                let idx = subsample_indices(view.len(), p, derive_seed(seed, ev.model_id, Purpose::Sample));
                sample = Dataset::select(view, &idx);
                sample.view()
            }
            _ => view,
        };
        let bias = self.regularizer(ev)?;
        if view.is_empty() {
            let mut model = bias
                .cloned()
                .unwrap_or_else(|| ModelWeights::zeros(self.data.classes(), self.data.dim()));
            model.meta.interval = Some(ev.interval);
            model.meta.regularizer = ev.reg_source;
            model.meta.noise_scale = None;
            self.models.insert(ev.model_id, model.clone());
            return Ok(Outcome {
                model,
                noise_l2: 0.0,
                trained_on: 0,
                skipped: true,
            });
        }
        let train = TrainConfig {
            seed: derive_seed(seed, ev.model_id, Purpose::Sgd),
            ..self.cfg.train
        };
        let reg = match (ev.trainer, bias) {
            (Trainer::Pberm, Some(bias)) => RegularizerSpec::toward(self.cfg.lambda, bias),
            _ => RegularizerSpec::origin(self.cfg.lambda),
        };
        let trained = erm::sgd_train(view, &reg, &train)?;
        let (mut model, noise_l2) = if self.cfg.private {
            let spec = NoiseSpec {
                scale: ev.noise_scale,
                classes: trained.classes(),
                dim: trained.dim(),
                seed: derive_seed(seed, ev.model_id, Purpose::Noise),
            };
            let p = output_perturb(&trained, &spec)?;
            (p.weights, p.noise_l2)
        } else {
            (trained, 0.0)
        };
        model.meta.interval = Some(ev.interval);
        model.meta.regularizer = ev.reg_source;
        self.models.insert(ev.model_id, model.clone());
        self.noise.insert(ev.model_id, noise_l2);
        Ok(Outcome {
            model,
            noise_l2,
            trained_on: view.len(),
            skipped: false,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub events: Vec<ReleaseEvent>,
    pub ledger: Ledger,
    /// `(index into events, model)` for every published release.
    pub released: Vec<(usize, ModelWeights)>,
    /// False when the run was non-private and nothing was charged.
    pub ledger_enabled: bool,
}

/// Drives `scheduler` over every prefix of `data`, training each event and
/// charging the ledger. `observe` sees each event after it executes, with
/// the ledger already updated.
pub fn run_schedule(
    scheduler: &mut dyn Scheduler,
    data: &Dataset,
    cfg: ExecConfig,
    mut observe: impl FnMut(&ReleaseEvent, &Outcome, &Ledger, &dyn Scheduler) -> Result<()>,
) -> Result<RunOutput> {
    let mut exec = Executor::new(data, cfg);
    let mut out = RunOutput {
        events: Vec::new(),
        ledger: Ledger::with_uniform_budget(scheduler.eps()),
        released: Vec::new(),
        ledger_enabled: cfg.private,
    };
    for t in 1..=data.len() {
        for mut ev in scheduler.step(t)? {
            let outcome = exec.execute(&ev)?;
            if outcome.skipped {
                ev.eps = Ratio::from_integer(0);
                ev.released = false;
            }
            if cfg.private && ev.eps > Ratio::from_integer(0) {
                out.ledger.charge(ev.interval, ev.eps, ev.subsystem, ev.t, ev.mechanism)?;
            }
            observe(&ev, &outcome, &out.ledger, &*scheduler)?;
            if ev.released {
                out.released.push((out.events.len(), outcome.model));
            }
            out.events.push(ev);
        }
    }
    Ok(out)
}
