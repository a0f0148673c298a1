use crate::concepts::Point;
use crate::error::{Error, Result};

/// Forward-process variances. Step indices run `1..=T`; arrays are stored
/// zero-based, so step `t` lives at index `t - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub beta: Vec<f32>,
    pub alpha: Vec<f32>,
    pub alpha_bar: Vec<f32>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_at(&self, t: usize) -> f32 {
        self.beta[t - 1]
    }

    pub fn alpha_at(&self, t: usize) -> f32 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar_at(&self, t: usize) -> f32 {
        self.alpha_bar[t - 1]
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Index {
                op: "q_sample",
                index: t,
                bound: self.steps(),
            });
        }
        Ok(())
    }
}

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA1: f32 = 1e-4;
/// Large enough that `ᾱ_T ≈ 2e-5`, so `x_T` is close to `N(0, I)` for data
/// centered away from the origin.
pub const DEFAULT_BETA_T: f32 = 0.2;

impl Default for NoiseSchedule {
    fn default() -> Self {
        schedule_linear(DEFAULT_STEPS, DEFAULT_BETA1, DEFAULT_BETA_T).expect("default schedule")
    }
}

/// Linearly spaced `β` from `beta1` to `beta_t`; cumulative products are
/// accumulated in `f64`.
pub fn schedule_linear(steps: usize, beta1: f32, beta_t: f32) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::config("schedule needs T ≥ 1"));
    }
    if !(beta1 > 0.0 && beta1 <= beta_t && beta_t < 1.0) {
        return Err(Error::config(format!(
            "schedule needs 0 < β1 ≤ βT < 1, got β1 = {beta1}, βT = {beta_t}"
        )));
    }
    let beta: Vec<f32> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta1
            } else {
                let f = i as f64 / (steps - 1) as f64;
                (beta1 as f64 + f * (beta_t as f64 - beta1 as f64)) as f32
            }
        })
        .collect();
    let alpha: Vec<f32> = beta.iter().map(|b| 1.0 - b).collect();
    let mut prod = 1.0f64;
    let alpha_bar = alpha
        .iter()
        .map(|&a| {
            prod *= a as f64;
            prod as f32
        })
        .collect();
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
    })
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`, one step index per point.
pub fn q_sample(x0: &[Point], t: &[usize], eps: &[Point], sched: &NoiseSchedule) -> Result<Vec<Point>> {
    if x0.len() != eps.len() || x0.len() != t.len() {
        return Err(Error::shape("q_sample", &[&[x0.len(), 2], &[eps.len(), 2], &[t.len()]]));
    }
    let mut out = Vec::with_capacity(x0.len());
    for ((x, &ti), e) in x0.iter().zip(t).zip(eps) {
        sched.check_step(ti)?;
        let ab = sched.alpha_bar_at(ti);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        out.push([a * x[0] + b * e[0], a * x[1] + b * e[1]]);
    }
    Ok(out)
}
