use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::denoiser::{embedding_rows, predict_rows};
use super::schedule::NoiseSchedule;
use super::train::gaussian_points;
use crate::autodiff::ParamStore;
use crate::concepts::{Point, BOX};
use crate::error::{Error, Result};

/// Anything that predicts the noise in `x_t` at a single step `t`.
pub trait NoisePredictor {
    fn predict(&self, x_t: &[Point], t: usize) -> Result<Vec<Point>>;
}

/// The base model conditioned on one embedding row.
#[derive(Clone, Copy, Debug)]
pub struct RowConditioned<'a> {
    pub params: &'a ParamStore,
    pub row: usize,
}

impl NoisePredictor for RowConditioned<'_> {
    fn predict(&self, x_t: &[Point], t: usize) -> Result<Vec<Point>> {
        predict_rows(self.params, x_t, &vec![t; x_t.len()], &vec![self.row; x_t.len()])
    }
}

/// DDPM ancestral sampling from `x_T ~ N(0, I)`. Each step forms the
/// predicted clean point, clips it to the data box, and draws from the
/// posterior `q(x_{t−1} | x_t, x̂_0)` with variance
/// `β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`.
pub fn sample_with(model: &impl NoisePredictor, n: usize, sched: &NoiseSchedule, seed: u64) -> Result<Vec<Point>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian_points(&mut rng, n);
    for t in (1..=sched.steps()).rev() {
        let eps = model.predict(&x, t)?;
        let (beta, alpha, ab) = (sched.beta_at(t), sched.alpha_at(t), sched.alpha_bar_at(t));
        let ab_prev = if t > 1 { sched.alpha_bar_at(t - 1) } else { 1.0 };
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let z = if t > 1 { gaussian_points(&mut rng, n) } else { vec![[0.0; 2]; n] };
        for ((xi, ei), zi) in x.iter_mut().zip(&eps).zip(&z) {
            for d in 0..2 {
                let x0 = ((xi[d] - sb * ei[d]) / sa).clamp(-BOX, BOX);
                xi[d] = c0 * x0 + ct * xi[d] + sigma * zi[d];
            }
        }
    }
    Ok(x)
}

/// Samples `n` points conditioned on embedding row `row`.
pub fn sample(params: &ParamStore, row: usize, n: usize, sched: &NoiseSchedule, seed: u64) -> Result<Vec<Point>> {
    let rows = embedding_rows(params)?;
    if row >= rows {
        return Err(Error::Index { op: "sample", index: row, bound: rows });
    }
    sample_with(&RowConditioned { params, row }, n, sched, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{init_denoiser, DenoiserConfig};

    #[test]
    fn empty_and_deterministic() {
        let p = init_denoiser(&DenoiserConfig::default(), 3, 0).unwrap();
        let s = NoiseSchedule::default();
        assert!(sample(&p, 1, 0, &s, 9).unwrap().is_empty());
        let a = sample(&p, 1, 16, &s, 9).unwrap();
        assert_eq!(a, sample(&p, 1, 16, &s, 9).unwrap());
        assert_ne!(a, sample(&p, 1, 16, &s, 10).unwrap());
        assert!(sample(&p, 3, 4, &s, 0).is_err());
    }

    struct Oracle;
    impl NoisePredictor for Oracle {
        fn predict(&self, x_t: &[Point], _t: usize) -> Result<Vec<Point>> {
            Ok(x_t.to_vec())
        }
    }

    #[test]
    fn runs_with_custom_predictor() {
        let out = sample_with(&Oracle, 8, &NoiseSchedule::default(), 1).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|p| p[0].is_finite()));
    }

    /// Exact noise for data concentrated on a single point.
    struct PointMass(Point, NoiseSchedule);
    impl NoisePredictor for PointMass {
        fn predict(&self, x_t: &[Point], t: usize) -> Result<Vec<Point>> {
            let ab = self.1.alpha_bar_at(t);
            Ok(x_t
                .iter()
                .map(|x| [0, 1].map(|d| (x[d] - ab.sqrt() * self.0[d]) / (1.0 - ab).sqrt()))
                .collect())
        }
    }

    #[test]
    fn exact_predictor_recovers_point_mass() {
        let sched = NoiseSchedule::default();
        let target = [0.75, -1.5];
        for p in sample_with(&PointMass(target, sched.clone()), 64, &sched, 3).unwrap() {
            assert!((p[0] - target[0]).abs() < 1e-3 && (p[1] - target[1]).abs() < 1e-3, "{p:?}");
        }
    }

    struct Wild;
    impl NoisePredictor for Wild {
        fn predict(&self, x_t: &[Point], _t: usize) -> Result<Vec<Point>> {
            Ok(vec![[1e30, -1e30]; x_t.len()])
        }
    }

    #[test]
    fn samples_stay_in_the_box() {
        for p in sample_with(&Wild, 32, &NoiseSchedule::default(), 0).unwrap() {
            assert!(p[0].abs() <= BOX && p[1].abs() <= BOX, "{p:?}");
        }
    }
}
