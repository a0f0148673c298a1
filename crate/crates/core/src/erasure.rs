//! Fine-tuning that makes a concept's conditional prediction fall back to
//! unconditional behaviour.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_update, AdamState, ParamStore, Tape};
use crate::concepts::{ConceptDataset, Point};
use crate::diffusion::{
    denoise, draw_noised, embedding_rows, film_weight_names, lookup_rows, noise_mse, points_tensor, predict_rows,
    sample, NoiseSchedule, NoisedBatch, Weights, NULL_ROW,
};
use crate::error::{Error, Result};
use crate::metrics::{concept_accuracy, sgr, similarity, EvalClassifier, ReportRow, SimilarityMetric, SimilarityReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErasureConfig {
    pub target_row: usize,
    pub steps: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// Trainable weights; empty means the FiLM projections.
    pub selector: Vec<String>,
    /// Guidance away from the concept: the regression target is
    /// `ε*(∅) − η·(ε*(c′) − ε*(∅))`.
    pub negative_guidance: f32,
}

impl Default for ErasureConfig {
    fn default() -> Self {
        Self {
            target_row: 1,
            steps: 1000,
            lr: 1e-2,
            batch_size: 128,
            seed: 0,
            selector: Vec::new(),
            negative_guidance: 1.0,
        }
    }
}

impl ErasureConfig {
    pub fn selector_names(&self) -> Vec<String> {
        if self.selector.is_empty() {
            film_weight_names()
        } else {
            self.selector.clone()
        }
    }

    fn validate(&self, model: &ParamStore) -> Result<()> {
        if self.target_row == NULL_ROW {
            return Err(Error::config("cannot erase the null token"));
        }
        let rows = embedding_rows(model)?;
        if self.target_row >= rows {
            return Err(Error::Index { op: "erase", index: self.target_row, bound: rows });
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be ≥ 1"));
        }
        if !self.negative_guidance.is_finite() || self.negative_guidance < 0.0 {
            return Err(Error::config("negative_guidance must be finite and ≥ 0"));
        }
        for name in self.selector_names() {
            model.get(&name)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ErasureRun {
    pub params: ParamStore,
    pub losses: Vec<f32>,
}

fn guided_target(frozen: &ParamStore, nb: &NoisedBatch, row: usize, eta: f32) -> Result<Vec<Point>> {
    let n = nb.len();
    let uncond = predict_rows(frozen, &nb.x_t, &nb.t, &vec![NULL_ROW; n])?;
    if eta == 0.0 {
        return Ok(uncond);
    }
    let cond = predict_rows(frozen, &nb.x_t, &nb.t, &vec![row; n])?;
    Ok(uncond
        .iter()
        .zip(&cond)
        .map(|(u, c)| [u[0] - eta * (c[0] - u[0]), u[1] - eta * (c[1] - u[1])])
        .collect())
}

/// Regresses the target concept's prediction onto the frozen model's
/// (guided) unconditional prediction, training only the selected weights.
pub fn erase(model: &ParamStore, dataset: &ConceptDataset, sched: &NoiseSchedule, cfg: &ErasureConfig) -> Result<ErasureRun> {
    cfg.validate(model)?;
    if cfg.steps > 0 && dataset.train.is_empty() {
        return Err(Error::Empty("erasure train split"));
    }
    let frozen = model.clone();
    let selector = cfg.selector_names();
    let mut params = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::default();
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let x0: Vec<Point> = (0..cfg.batch_size)
            .map(|_| dataset.train[rng.random_range(0..dataset.train.len())])
            .collect();
        let nb = draw_noised(&x0, sched, &mut rng)?;
        let target = guided_target(&frozen, &nb, cfg.target_row, cfg.negative_guidance)?;

        let mut tape = Tape::<f32>::new();
        let bound = tape.bind(&params, |n| selector.iter().any(|s| s == n));
        let w = Weights::from_bound(&bound);
        let x = tape.constant(points_tensor(&nb.x_t));
        let cond = lookup_rows(&mut tape, &w, &vec![cfg.target_row; nb.len()])?;
        let pred = denoise(&mut tape, &w, x, &nb.t, cond)?;
        let tgt = tape.constant(points_tensor(&target));
        let loss = noise_mse(&mut tape, pred, tgt)?;
        losses.push(tape.value(loss).item());
        let grads = tape.backward(loss)?.named(&bound, &tape);
        adam_update(&mut params, &grads, &mut adam, cfg.lr, false)?;
    }
    Ok(ErasureRun { params, losses })
}

/// Mean `‖ε(x_t, a) − ε(x_t, b)‖²` of one model under two rows, on noised
/// `points` with a fixed draw.
pub fn prediction_gap(model: &ParamStore, points: &[Point], row_a: usize, row_b: usize, sched: &NoiseSchedule, seed: u64) -> Result<f64> {
    let nb = draw_noised(points, sched, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let n = nb.len();
    let a = predict_rows(model, &nb.x_t, &nb.t, &vec![row_a; n])?;
    let b = predict_rows(model, &nb.x_t, &nb.t, &vec![row_b; n])?;
    Ok(mean_sq(&a, &b))
}

/// Mean `‖ε_θ(x_t, c′) − target‖²` where the target is the frozen model's
/// guided unconditional prediction; with `eta = 0` this is the gap between
/// the conditional and unconditional predictions of `frozen`'s target.
pub fn guided_residual(
    model: &ParamStore,
    frozen: &ParamStore,
    points: &[Point],
    row: usize,
    eta: f32,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    let nb = draw_noised(points, sched, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let target = guided_target(frozen, &nb, row, eta)?;
    let pred = predict_rows(model, &nb.x_t, &nb.t, &vec![row; nb.len()])?;
    Ok(mean_sq(&pred, &target))
}

/// Mean `‖ε_a(x_t, row) − ε_b(x_t, row)‖²` between two models.
pub fn model_gap(a: &ParamStore, b: &ParamStore, points: &[Point], row: usize, sched: &NoiseSchedule, seed: u64) -> Result<f64> {
    let nb = draw_noised(points, sched, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let rows = vec![row; nb.len()];
    let pa = predict_rows(a, &nb.x_t, &nb.t, &rows)?;
    let pb = predict_rows(b, &nb.x_t, &nb.t, &rows)?;
    Ok(mean_sq(&pa, &pb))
}

fn mean_sq(a: &[Point], b: &[Point]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| ((p[0] - q[0]) as f64).powi(2) + ((p[1] - q[1]) as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

/// Per-concept similarity to reference and classifier accuracy for samples
/// of `base` and `erased`, plus the gap ratio between them.
#[allow(clippy::too_many_arguments)]
pub fn erasure_report(
    base: &ParamStore,
    erased: &ParamStore,
    datasets: &[ConceptDataset],
    clf: &EvalClassifier,
    sched: &NoiseSchedule,
    n_samples: usize,
    eval_seed: u64,
    run_id: &str,
) -> Result<SimilarityReport> {
    let mut rep = SimilarityReport::default();
    let mut row = |concept: &str, method: &str, metric: &str, value: f64| {
        rep.push(ReportRow {
            run_id: run_id.to_string(),
            protocol: "erasure-only".into(),
            concept: concept.to_string(),
            method: method.to_string(),
            epoch: None,
            metric: metric.to_string(),
            value,
        })
    };
    for ds in datasets {
        let id = ds.spec.concept_id;
        let name = ds.spec.name();
        let sb = sample(base, id, n_samples, sched, eval_seed)?;
        let se = sample(erased, id, n_samples, sched, eval_seed)?;
        row(name, "base", "accuracy", concept_accuracy(&sb, clf, id)?);
        row(name, "erased", "accuracy", concept_accuracy(&se, clf, id)?);
        for m in SimilarityMetric::ALL {
            let mb = similarity(&sb, &ds.reference, m)?;
            let me = similarity(&se, &ds.reference, m)?;
            row(name, "base", m.name(), mb);
            row(name, "erased", m.name(), me);
            row(name, "erased", &format!("sgr_{}", m.name()), sgr(mb, me)?);
        }
    }
    Ok(rep)
}
