use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::denoiser::{denoise, init_denoiser, lookup_rows, noise_mse, points_tensor, DenoiserConfig, Weights, EMBEDDING, NULL_ROW};
use super::schedule::{q_sample, NoiseSchedule};
use crate::autodiff::{adam_update, AdamState, Bound, Objective, ParamStore, Real, Tape, Var};
use crate::concepts::{ConceptDataset, Point};
use crate::error::{Error, Result};

/// A batch with its timesteps and noise already drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisedBatch {
    pub x_t: Vec<Point>,
    pub t: Vec<usize>,
    pub eps: Vec<Point>,
}

impl NoisedBatch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

pub fn gaussian_points(rng: &mut impl Rng, n: usize) -> Vec<Point> {
    (0..n)
        .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect()
}

/// Draws `t ~ U{1..T}` and `ε ~ N(0, I)` per point and noises the batch.
pub fn draw_noised(x0: &[Point], sched: &NoiseSchedule, rng: &mut impl Rng) -> Result<NoisedBatch> {
    if x0.is_empty() {
        return Err(Error::Empty("diffusion batch"));
    }
    let t: Vec<usize> = (0..x0.len()).map(|_| rng.random_range(1..=sched.steps())).collect();
    let eps = gaussian_points(rng, x0.len());
    let x_t = q_sample(x0, &t, &eps, sched)?;
    Ok(NoisedBatch { x_t, t, eps })
}

/// Noise-prediction loss of a pre-drawn batch under conditioning `cond`.
pub fn batch_loss<T: Real>(tape: &mut Tape<T>, w: &Weights, nb: &NoisedBatch, cond: Var) -> Result<Var> {
    let x = tape.constant(points_tensor(&nb.x_t));
    let eps = tape.constant(points_tensor(&nb.eps));
    let pred = denoise(tape, w, x, &nb.t, cond)?;
    noise_mse(tape, pred, eps)
}

/// Evaluates the training loss for `batch` conditioned on embedding rows.
pub fn loss_diffusion(
    params: &ParamStore,
    batch: &[Point],
    concept_rows: &[usize],
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<f32> {
    let nb = draw_noised(batch, sched, rng)?;
    let obj = RowLoss { batch: nb, rows: concept_rows.to_vec() };
    let mut tape = Tape::<f32>::new();
    let bound = tape.bind(params, |_| false);
    let l = obj.loss(&mut tape, &bound)?;
    Ok(tape.value(l).item())
}

/// Fixed-draw loss over embedding rows, usable with the gradient checker.
#[derive(Clone, Debug)]
pub struct RowLoss {
    pub batch: NoisedBatch,
    pub rows: Vec<usize>,
}

impl Objective for RowLoss {
    fn loss<T: Real>(&self, tape: &mut Tape<T>, params: &Bound) -> Result<Var> {
        if self.rows.len() != self.batch.len() {
            return Err(Error::shape("loss_diffusion", &[&[self.batch.len()], &[self.rows.len()]]));
        }
        let w = Weights::from_bound(params);
        let cond = lookup_rows(tape, &w, &self.rows)?;
        batch_loss(tape, &w, &self.batch, cond)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub cf_dropout_p: f32,
    /// Anneal the learning rate to zero along a half cosine.
    pub cosine_decay: bool,
    /// Exponential moving average of the weights returned instead of the
    /// raw iterate; 0 disables it.
    pub ema_decay: f32,
    /// Train the embedding table too. Off by default: the table plays the
    /// part of a frozen text encoder, so every concept keeps a fixed code.
    pub train_embedding: bool,
    pub seed: u64,
    pub denoiser: DenoiserConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 40_000,
            batch_size: 128,
            lr: 2e-3,
            cf_dropout_p: 0.1,
            cosine_decay: true,
            ema_decay: 0.0,
            train_embedding: false,
            seed: 0,
            denoiser: DenoiserConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.cf_dropout_p) {
            return Err(Error::config(format!("cf_dropout_p must lie in [0, 1), got {}", self.cf_dropout_p)));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::config(format!("ema_decay must lie in [0, 1), got {}", self.ema_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be ≥ 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be finite and ≥ 0, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Pretrained {
    pub params: ParamStore,
    /// Training loss at every step.
    pub losses: Vec<f32>,
}

/// Trains the conditional denoiser on every dataset at once. Each dataset's
/// `concept_id` is its embedding row.
pub fn pretrain(datasets: &[ConceptDataset], cfg: &TrainConfig, sched: &NoiseSchedule) -> Result<Pretrained> {
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(Error::Empty("pretraining datasets"));
    }
    if let Some(ds) = datasets.iter().find(|d| d.train.is_empty()) {
        return Err(Error::config(format!("concept {} has no training points", ds.spec.name())));
    }
    let rows = 1 + datasets.iter().map(|d| d.spec.concept_id).max().unwrap_or(0);
    let mut params = init_denoiser(&cfg.denoiser, rows, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d1ff);
    let mut adam = AdamState::default();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut ema = (cfg.ema_decay > 0.0).then(|| params.clone());

    for step in 0..cfg.steps {
        let lr = if cfg.cosine_decay {
            let f = step as f64 / cfg.steps as f64;
            (cfg.lr as f64 * 0.5 * (1.0 + (std::f64::consts::PI * f).cos())) as f32
        } else {
            cfg.lr
        };
        let mut x0 = Vec::with_capacity(cfg.batch_size);
        let mut cond_rows = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let ds = &datasets[rng.random_range(0..datasets.len())];
            x0.push(ds.train[rng.random_range(0..ds.train.len())]);
            let drop = rng.random::<f32>() < cfg.cf_dropout_p;
            cond_rows.push(if drop { NULL_ROW } else { ds.spec.concept_id });
        }
        let nb = draw_noised(&x0, sched, &mut rng)?;
        let obj = RowLoss { batch: nb, rows: cond_rows };

        let mut tape = Tape::<f32>::new();
        let bound = tape.bind(&params, |n| cfg.train_embedding || n != EMBEDDING);
        let loss = obj.loss(&mut tape, &bound)?;
        losses.push(tape.value(loss).item());
        let grads = tape.backward(loss)?.named(&bound, &tape);
        adam_update(&mut params, &grads, &mut adam, lr, false)?;
        if let Some(avg) = ema.as_mut() {
            let d = cfg.ema_decay;
            for (name, p) in params.iter() {
                for (a, &v) in avg.get_mut(name)?.data_mut().iter_mut().zip(p.data()) {
                    *a = d * *a + (1.0 - d) * v;
                }
            }
        }
    }
    Ok(Pretrained { params: ema.unwrap_or(params), losses })
}

/// Mean of `xs` over consecutive windows; the last partial window is kept.
pub fn window_means(xs: &[f32], window: usize) -> Vec<f32> {
    xs.chunks(window.max(1))
        .map(|c| c.iter().sum::<f32>() / c.len() as f32)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::concepts::{generate, pretraining_specs};

    #[test]
    fn zero_denoiser_loss_is_dimension() {
        let mut p = init_denoiser(&DenoiserConfig::default(), 2, 0).unwrap();
        for name in ["out.w", "out.b"] {
            p.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let batch = vec![[0.5, -0.5]; 4096];
        let rows = vec![1; 4096];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = loss_diffusion(&p, &batch, &rows, &NoiseSchedule::default(), &mut rng).unwrap();
        assert!((l - 2.0).abs() < 0.1, "{l}");
        assert!(loss_diffusion(&p, &[], &[], &NoiseSchedule::default(), &mut rng).is_err());
    }

    #[test]
    fn exact_prediction_gives_zero_loss() {
        let mut tape = Tape::<f32>::new();
        let eps = tape.constant(points_tensor(&[[0.3, -1.2], [2.0, 0.1]]));
        let same = tape.constant(points_tensor(&[[0.3, -1.2], [2.0, 0.1]]));
        let l = noise_mse(&mut tape, same, eps).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn denoiser_gradient_matches_finite_differences() {
        let cfg = DenoiserConfig { hidden: 12, depth: 3, ..DenoiserConfig::default() };
        let p = init_denoiser(&cfg, 4, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = vec![[0.4, -0.9], [1.5, 0.2], [-0.3, 0.7], [0.0, 1.1]];
        let obj = RowLoss {
            batch: draw_noised(&x0, &NoiseSchedule::default(), &mut rng).unwrap(),
            rows: vec![0, 1, 2, 3],
        };
        let err = finite_diff_check(&obj, &p, 1e-3).unwrap();
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn zero_steps_returns_init() {
        let ds: Vec<_> = pretraining_specs()[..2].iter().map(|s| generate(s, 16, 4, 0).unwrap()).collect();
        let cfg = TrainConfig { steps: 0, ..TrainConfig::default() };
        let out = pretrain(&ds, &cfg, &NoiseSchedule::default()).unwrap();
        let init = init_denoiser(&cfg.denoiser, 3, cfg.seed).unwrap();
        assert!(out.params.bit_eq(&init));
        assert!(out.losses.is_empty());
        let bad = TrainConfig { cf_dropout_p: 1.0, ..cfg };
        assert!(pretrain(&ds, &bad, &NoiseSchedule::default()).is_err());
    }
}
