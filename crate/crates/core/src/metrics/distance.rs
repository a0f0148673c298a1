use serde::{Deserialize, Serialize};

use crate::concepts::Point;
use crate::error::{Error, Result};

fn dist(a: Point, b: Point) -> f64 {
    let dx = a[0] as f64 - b[0] as f64;
    let dy = a[1] as f64 - b[1] as f64;
    (dx * dx + dy * dy).sqrt()
}

fn mean_pairwise(xs: &[Point], ys: &[Point], f: impl Fn(f64) -> f64) -> f64 {
    let mut total = 0.0f64;
    for &x in xs {
        let mut row = 0.0f64;
        for &y in ys {
            row += f(dist(x, y));
        }
        total += row;
    }
    total / (xs.len() as f64 * ys.len() as f64)
}

fn all_finite(x: &[Point], y: &[Point]) -> bool {
    x.iter().chain(y).all(|p| p[0].is_finite() && p[1].is_finite())
}

fn non_empty(x: &[Point], y: &[Point]) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Empty("point set"));
    }
    Ok(())
}

/// V-statistic energy distance `2E‖x−y‖ − E‖x−x′‖ − E‖y−y′‖`, self-pairs
/// included.
pub fn energy_distance(x: &[Point], y: &[Point]) -> Result<f64> {
    non_empty(x, y)?;
    let xy = mean_pairwise(x, y, |d| d);
    let xx = mean_pairwise(x, x, |d| d);
    let yy = mean_pairwise(y, y, |d| d);
    // Summation order of the cross term depends on argument order, so
    // symmetrize explicitly.
    let yx = mean_pairwise(y, x, |d| d);
    Ok((xy + yx) - (xx + yy))
}

/// Median of all pairwise distances in the pooled sample.
pub fn median_bandwidth(x: &[Point], y: &[Point]) -> Result<f64> {
    non_empty(x, y)?;
    let pooled: Vec<Point> = x.iter().chain(y).copied().collect();
    let mut d = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(dist(pooled[i], pooled[j]));
        }
    }
    if d.is_empty() {
        return Ok(1.0);
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(if *m > 0.0 { *m } else { 1.0 })
}

/// Biased squared MMD under `k(a, b) = exp(−‖a−b‖² / 2σ²)`.
pub fn mmd_rbf(x: &[Point], y: &[Point], bandwidth: f64) -> Result<f64> {
    non_empty(x, y)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::config(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let g = 1.0 / (2.0 * bandwidth * bandwidth);
    let k = |d: f64| (-g * d * d).exp();
    let xy = mean_pairwise(x, y, k);
    let yx = mean_pairwise(y, x, k);
    Ok(((mean_pairwise(x, x, k) + mean_pairwise(y, y, k)) - (xy + yx)).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    EnergySim,
    /// Bandwidth from the median heuristic on each compared pair.
    RbfMmdSim,
}

impl SimilarityMetric {
    pub const ALL: [SimilarityMetric; 2] = [SimilarityMetric::EnergySim, SimilarityMetric::RbfMmdSim];

    pub fn name(self) -> &'static str {
        match self {
            Self::EnergySim => "energy_sim",
            Self::RbfMmdSim => "rbf_mmd_sim",
        }
    }

    /// Distance between two sets. A set holding a non-finite point (a
    /// diverged sampler) is infinitely far from everything.
    pub fn distance(self, x: &[Point], y: &[Point]) -> Result<f64> {
        non_empty(x, y)?;
        if !all_finite(x, y) {
            return Ok(f64::INFINITY);
        }
        let d = match self {
            Self::EnergySim => energy_distance(x, y)?,
            Self::RbfMmdSim => mmd_rbf(x, y, median_bandwidth(x, y)?)?,
        };
        Ok(if d.is_nan() { f64::INFINITY } else { d })
    }
}

/// `M = exp(−D)`, so identical sets score 1 and the score never reaches 0.
pub fn similarity(x: &[Point], y: &[Point], metric: SimilarityMetric) -> Result<f64> {
    Ok((-metric.distance(x, y)?).exp())
}

/// Similarity gap ratio `(m_no − m_imma) / m_no`; positive when immunization
/// pushed the adapted samples away from the reference.
pub fn sgr(m_ref_vs_noimma: f64, m_ref_vs_imma: f64) -> Result<f64> {
    if m_ref_vs_noimma == 0.0 {
        return Err(Error::config("sgr: zero baseline similarity"));
    }
    Ok((m_ref_vs_noimma - m_ref_vs_imma) / m_ref_vs_noimma)
}

/// Relative similarity gap ratio `(m_other − m_target) / m_other` between
/// with- and without-immunization generations.
pub fn rsgr(m_other_pair: f64, m_target_pair: f64) -> Result<f64> {
    if m_other_pair == 0.0 {
        return Err(Error::config("rsgr: zero other-concept similarity"));
    }
    Ok((m_other_pair - m_target_pair) / m_other_pair)
}
