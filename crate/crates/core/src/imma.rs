//! Bi-level immunization: learn a model on which a given adaptation method
//! fails to pick up the target concept.
//!
//! Each outer iteration lets an adapter φ take `K` descent steps on the
//! target data (warm-started from the previous iteration), copies its
//! overlapping weights into the model, and then takes one Adam ascent step
//! on the selected model weights with φ held fixed. No second-order terms
//! are ever formed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation::{bind_effective, init_adapter, AdapterSet, AdapterSpec, BindOptions};
use crate::autodiff::{adam_update, sgd_update, AdamState, ParamStore, Tape};
use crate::concepts::{ConceptDataset, Point};
use crate::diffusion::{draw_noised, film_weight_names, NoiseSchedule, NoisedBatch};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImmaConfig {
    pub iterations: usize,
    pub inner_steps: usize,
    pub upper_lr: f32,
    /// `None` uses the inner method's adaptation lr.
    pub inner_lr: Option<f32>,
    pub inner_batch: usize,
    pub upper_batch: usize,
    /// Inner method, its settings and the token reserved for immunization.
    pub adapter: AdapterSpec,
    /// Model weights moved by the ascent step; empty means the FiLM projections.
    pub selector: Vec<String>,
    pub inner_optimizer: InnerOptimizer,
    pub no_warm_start: bool,
    pub no_overlap_assign: bool,
    pub direct_max: bool,
    pub seed: u64,
}

/// Optimizer for the inner descent on φ. Adam state follows φ: it carries
/// over with the warm start and is reset whenever φ is re-initialized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerOptimizer {
    Sgd,
    #[default]
    Adam,
}

impl Default for ImmaConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            inner_steps: 1,
            upper_lr: 1e-2,
            inner_lr: Some(1e-3),
            inner_batch: 128,
            upper_batch: 128,
            adapter: AdapterSpec::new(crate::adaptation::AdaptMethod::LoRA, crate::adaptation::Token::Row(1)),
            selector: Vec::new(),
            inner_optimizer: InnerOptimizer::default(),
            no_warm_start: false,
            no_overlap_assign: false,
            direct_max: false,
            seed: 0,
        }
    }
}

impl ImmaConfig {
    pub fn selector_names(&self) -> Vec<String> {
        if self.selector.is_empty() {
            film_weight_names()
        } else {
            self.selector.clone()
        }
    }

    pub fn inner_lr(&self) -> f32 {
        self.inner_lr.unwrap_or_else(|| self.adapter.method.default_lr())
    }

    /// Checks the config against `model`; also builds the initial adapter so
    /// method/token mismatches surface here.
    pub fn validate(&self, model: &ParamStore) -> Result<AdapterSet> {
        if self.inner_steps == 0 {
            return Err(Error::config("inner_steps must be ≥ 1"));
        }
        if self.inner_batch == 0 || self.upper_batch == 0 {
            return Err(Error::config("batch sizes must be ≥ 1"));
        }
        if !self.upper_lr.is_finite() || self.upper_lr < 0.0 {
            return Err(Error::config(format!("upper_lr must be finite and ≥ 0, got {}", self.upper_lr)));
        }
        let lr = self.inner_lr();
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::config(format!("inner_lr must be finite and ≥ 0, got {lr}")));
        }
        for name in self.selector_names() {
            model.get(&name)?;
        }
        init_adapter(&self.adapter, model, self.seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Adaptation loss on the inner batch after the inner steps.
    pub inner_loss: f32,
    /// Loss ascended by the outer step, before that step.
    pub upper_loss: f32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImmunizationTrace {
    pub records: Vec<TraceRecord>,
}

impl ImmunizationTrace {
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["iteration", "inner_loss", "upper_loss"])
            .map_err(|e| Error::config(e.to_string()))?;
        for r in &self.records {
            w.write_record([r.iteration.to_string(), r.inner_loss.to_string(), r.upper_loss.to_string()])
                .map_err(|e| Error::config(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::config(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    /// Mean inner loss over the records with `lo ≤ iteration < hi`.
    pub fn mean_inner_loss(&self, lo: usize, hi: usize) -> Option<f64> {
        let xs: Vec<f64> = self
            .records
            .iter()
            .filter(|r| (lo..hi).contains(&r.iteration))
            .map(|r| r.inner_loss as f64)
            .collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

fn draw_batch(data: &[Point], n: usize, sched: &NoiseSchedule, rng: &mut ChaCha8Rng) -> Result<NoisedBatch> {
    let x0: Vec<Point> = (0..n).map(|_| data[rng.random_range(0..data.len())]).collect();
    draw_noised(&x0, sched, rng)
}

fn adapter_loss(model: &ParamStore, phi: &AdapterSet, nb: &NoisedBatch) -> Result<f32> {
    let mut tape = Tape::<f32>::new();
    let eff = bind_effective(&mut tape, model, phi, BindOptions::FROZEN)?;
    let loss = eff.loss(&mut tape, nb)?;
    Ok(tape.value(loss).item())
}

/// One descent step on φ; `adam` selects Adam over plain descent. Returns
/// the loss before the step.
pub fn inner_step(model: &ParamStore, phi: &mut AdapterSet, nb: &NoisedBatch, lr: f32, adam: Option<&mut AdamState>) -> Result<f32> {
    let mut tape = Tape::<f32>::new();
    let eff = bind_effective(&mut tape, model, phi, BindOptions::ADAPTER_ONLY)?;
    let loss = eff.loss(&mut tape, nb)?;
    let grads = tape.backward(loss)?.named(&eff.adapter, &tape);
    match adam {
        Some(state) => adam_update(&mut phi.params, &grads, state, lr, false)?,
        None => sgd_update(&mut phi.params, &grads, lr)?,
    }
    Ok(tape.value(loss).item())
}

/// Adam ascent on the `selector` weights of `theta`, with φ fixed and the
/// overlapping weights read from `theta`. Returns the loss before the step.
pub fn gradient_ascent_step(
    theta: &mut ParamStore,
    phi: &AdapterSet,
    nb: &NoisedBatch,
    selector: &[String],
    adam: &mut AdamState,
    alpha: f32,
) -> Result<f32> {
    if selector.is_empty() {
        return Err(Error::config("ascent selector is empty"));
    }
    for name in selector {
        theta.get(name)?;
    }
    let mut tape = Tape::<f32>::new();
    let in_selector = |n: &str| selector.iter().any(|s| s == n);
    let opts = BindOptions {
        model_grad: &in_selector,
        adapter_grad: false,
        overlap_from_model: true,
    };
    let eff = bind_effective(&mut tape, theta, phi, opts)?;
    let loss = eff.loss(&mut tape, nb)?;
    let grads = tape.backward(loss)?.named(&eff.model, &tape);
    adam_update(theta, &grads, adam, alpha, true)?;
    Ok(tape.value(loss).item())
}

/// Runs the immunization loop and returns the immunized weights with a
/// per-iteration trace.
pub fn immunize(
    model: &ParamStore,
    dataset: &ConceptDataset,
    sched: &NoiseSchedule,
    cfg: &ImmaConfig,
) -> Result<(ParamStore, ImmunizationTrace)> {
    let mut phi = cfg.validate(model)?;
    if cfg.iterations > 0 && dataset.train.is_empty() {
        return Err(Error::Empty("immunization train split"));
    }
    let selector = cfg.selector_names();
    let overlaps = phi.overlap_names();
    let inner_lr = cfg.inner_lr();
    let mut theta = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::default();
    let mut inner_adam = AdamState::default();
    let use_adam = cfg.inner_optimizer == InnerOptimizer::Adam;
    let mut trace = ImmunizationTrace::default();

    for iteration in 0..cfg.iterations {
        let xa = draw_batch(&dataset.train, cfg.inner_batch, sched, &mut rng)?;
        let xi = draw_batch(&dataset.train, cfg.upper_batch, sched, &mut rng)?;

        if cfg.direct_max {
            // φ stays at its initial value: with zero LoRA factors and
            // copied overlaps this is the plain model loss.
            let upper = gradient_ascent_step(&mut theta, &phi, &xi, &selector, &mut adam, cfg.upper_lr)?;
            if !upper.is_finite() {
                return Err(Error::Diverged(format!("immunization iteration {iteration}")));
            }
            trace.records.push(TraceRecord { iteration, inner_loss: upper, upper_loss: upper });
            continue;
        }

        if cfg.no_warm_start {
            phi = init_adapter(&cfg.adapter, &theta, rng.random())?;
            inner_adam = AdamState::default();
        } else {
            // The attacker fine-tunes the current model, so overlaps start
            // from θ; the token and low-rank factors carry over.
            for name in &overlaps {
                phi.params.insert(name.clone(), theta.get(name)?.clone());
            }
        }
        for _ in 0..cfg.inner_steps {
            inner_step(&theta, &mut phi, &xa, inner_lr, use_adam.then_some(&mut inner_adam))?;
        }
        let inner_loss = adapter_loss(&theta, &phi, &xa)?;
        if !cfg.no_overlap_assign {
            for name in &overlaps {
                theta.insert(name.clone(), phi.params.get(name)?.clone());
            }
        }
        let upper_loss = gradient_ascent_step(&mut theta, &phi, &xi, &selector, &mut adam, cfg.upper_lr)?;
        if !(inner_loss.is_finite() && upper_loss.is_finite()) {
            return Err(Error::Diverged(format!("immunization iteration {iteration}")));
        }
        trace.records.push(TraceRecord { iteration, inner_loss, upper_loss });
    }
    Ok((theta, trace))
}
