//! FiLM-conditioned noise predictor.
//!
//! ```text
//! [x_t, temb(t)] → affine(l1) → SiLU → FiLM(film1, e) → affine(l2) → SiLU → FiLM(film2, e)
//!                → [affine(lk) → SiLU for k = 3..=depth] → affine(out)
//! ```
//!
//! FiLM computes `h + h ⊙ (e·W_scale + b_scale) + (e·W_shift + b_shift)` and is
//! the only place the concept embedding `e` enters the network.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamStore, Real, Tape, Tensor, Var};
use crate::concepts::Point;
use crate::error::{Error, Result};

pub const EMBEDDING: &str = "embedding";
/// The trunk layers feeding the FiLM blocks.
pub const TRUNK_LAYERS: [&str; 2] = ["l1.w", "l2.w"];
pub const FILM_BLOCKS: [&str; 2] = ["film1", "film2"];

/// Row 0 of the embedding table is the null token `∅`.
pub const NULL_ROW: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub hidden: usize,
    /// Hidden affine layers; the first two carry FiLM.
    pub depth: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            depth: 4,
            embed_dim: 8,
            time_dim: 16,
        }
    }
}

/// Names of the FiLM projection matrices (the concept-dependent conditioning
/// weights); biases are excluded since they act on every concept alike.
pub fn film_weight_names() -> Vec<String> {
    FILM_BLOCKS
        .iter()
        .flat_map(|b| [format!("{b}.w_scale"), format!("{b}.w_shift")])
        .collect()
}

/// Every FiLM tensor, projections and biases.
pub fn film_param_names() -> Vec<String> {
    FILM_BLOCKS
        .iter()
        .flat_map(|b| {
            ["w_scale", "b_scale", "w_shift", "b_shift"]
                .into_iter()
                .map(move |p| format!("{b}.{p}"))
        })
        .collect()
}

/// Fresh parameters with `rows` embedding rows (null token plus concepts).
///
/// Concept rows start as scaled unit vectors when they fit in the embedding
/// dimension, so distinct concepts begin with orthogonal codes; the null row
/// starts at zero.
pub fn init_denoiser(cfg: &DenoiserConfig, rows: usize, seed: u64) -> Result<ParamStore> {
    if rows == 0 || cfg.hidden == 0 || cfg.embed_dim == 0 || !cfg.time_dim.is_multiple_of(2) || cfg.depth < FILM_BLOCKS.len() {
        return Err(Error::config(
            "denoiser needs ≥ 1 row, non-zero widths, an even time_dim and depth ≥ 2",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |shape: &[usize], std: f64| -> Tensor {
        let n: usize = shape.iter().product();
        let d = Normal::new(0.0, std).expect("finite std");
        let data = (0..n).map(|_| d.sample(&mut rng) as f32).collect();
        Tensor::new(shape.to_vec(), data).expect("shape")
    };
    let (h, e, input) = (cfg.hidden, cfg.embed_dim, 2 + cfg.time_dim);
    let mut p = ParamStore::new();

    let mut emb = vec![0.0f32; rows * e];
    if rows - 1 <= e {
        for r in 1..rows {
            emb[r * e + (r - 1)] = 1.0;
        }
    } else {
        let g = gauss(&[rows - 1, e], 1.0);
        emb[e..].copy_from_slice(g.data());
    }
    p.insert(EMBEDDING, Tensor::new(vec![rows, e], emb)?);

    p.insert("l1.w", gauss(&[input, h], (1.0 / input as f64).sqrt()));
    p.insert("l1.b", Tensor::zeros(&[h]));
    for k in 2..=cfg.depth {
        p.insert(format!("l{k}.w"), gauss(&[h, h], (1.0 / h as f64).sqrt()));
        p.insert(format!("l{k}.b"), Tensor::zeros(&[h]));
    }
    p.insert("out.w", gauss(&[h, 2], (1.0 / h as f64).sqrt()));
    p.insert("out.b", Tensor::zeros(&[2]));
    for b in FILM_BLOCKS {
        p.insert(format!("{b}.w_scale"), gauss(&[e, h], 0.3 / (e as f64).sqrt()));
        p.insert(format!("{b}.b_scale"), Tensor::zeros(&[h]));
        p.insert(format!("{b}.w_shift"), gauss(&[e, h], 1.0 / (e as f64).sqrt()));
        p.insert(format!("{b}.b_shift"), Tensor::zeros(&[h]));
    }
    Ok(p)
}

/// Reads the architecture back from a parameter store.
pub fn config_of(params: &ParamStore) -> Result<DenoiserConfig> {
    let emb = params.get(EMBEDDING)?;
    let l1 = params.get("l1.w")?;
    let depth = (1..).take_while(|k| params.contains(&format!("l{k}.w"))).count();
    Ok(DenoiserConfig {
        hidden: l1.cols(),
        depth,
        embed_dim: emb.cols(),
        time_dim: l1.rows() - 2,
    })
}

pub fn embedding_rows(params: &ParamStore) -> Result<usize> {
    Ok(params.get(EMBEDDING)?.rows())
}

/// Sinusoidal features of integer timesteps.
pub fn time_embedding<T: Real>(t: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &ti in t {
        let ti = ti as f64;
        let freqs = (0..half).map(|k| (-(1000f64.ln()) * k as f64 / half as f64).exp());
        let (sin, cos): (Vec<f64>, Vec<f64>) = freqs.map(|f| ((ti * f).sin(), (ti * f).cos())).unzip();
        data.extend(sin.into_iter().chain(cos).map(T::lit));
    }
    Tensor::new(vec![t.len(), dim], data).expect("time embedding shape")
}

pub fn points_tensor<T: Real>(pts: &[Point]) -> Tensor<T> {
    let data = pts.iter().flat_map(|p| [T::lit(p[0] as f64), T::lit(p[1] as f64)]).collect();
    Tensor::new(vec![pts.len(), 2], data).expect("points shape")
}

pub fn tensor_points<T: Real>(t: &Tensor<T>) -> Vec<Point> {
    t.data()
        .chunks(2)
        .map(|c| [c[0].as_f64() as f32, c[1].as_f64() as f32])
        .collect()
}

/// Name → tape variable for every weight the forward pass reads. Adapters
/// substitute entries (e.g. `W + A·B`) before calling [`denoise`].
#[derive(Clone, Debug, Default)]
pub struct Weights {
    map: BTreeMap<String, Var>,
}

impl Weights {
    pub fn from_bound(b: &Bound) -> Self {
        Self {
            map: b.iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn set(&mut self, name: impl Into<String>, v: Var) {
        self.map.insert(name.into(), v);
    }
}

/// Embedding rows for a batch, gathered from the table.
pub fn lookup_rows<T: Real>(tape: &mut Tape<T>, w: &Weights, rows: &[usize]) -> Result<Var> {
    let table = w.get(EMBEDDING)?;
    tape.gather_rows(table, rows)
}

fn film<T: Real>(tape: &mut Tape<T>, w: &Weights, block: &str, h: Var, cond: Var) -> Result<Var> {
    let scale = tape.affine(
        cond,
        w.get(&format!("{block}.w_scale"))?,
        w.get(&format!("{block}.b_scale"))?,
    )?;
    let shift = tape.affine(
        cond,
        w.get(&format!("{block}.w_shift"))?,
        w.get(&format!("{block}.b_shift"))?,
    )?;
    let modulated = tape.mul(h, scale)?;
    let h = tape.add(h, modulated)?;
    tape.add(h, shift)
}

/// Predicted noise `ε_θ(x_t, e, t)` for a batch. `cond` is the `n × embed_dim`
/// matrix of concept embeddings.
pub fn denoise<T: Real>(tape: &mut Tape<T>, w: &Weights, x_t: Var, t: &[usize], cond: Var) -> Result<Var> {
    let time_dim = tape.value(w.get("l1.w")?).rows() - 2;
    let temb = tape.constant(time_embedding(t, time_dim));
    let input = tape.concat_cols(x_t, temb)?;

    let h = tape.affine(input, w.get("l1.w")?, w.get("l1.b")?)?;
    let h = tape.silu(h)?;
    let h = film(tape, w, "film1", h, cond)?;
    let h = tape.affine(h, w.get("l2.w")?, w.get("l2.b")?)?;
    let h = tape.silu(h)?;
    let mut h = film(tape, w, "film2", h, cond)?;
    for k in 3.. {
        let Ok(wk) = w.get(&format!("l{k}.w")) else { break };
        h = tape.affine(h, wk, w.get(&format!("l{k}.b"))?)?;
        h = tape.silu(h)?;
    }
    tape.affine(h, w.get("out.w")?, w.get("out.b")?)
}

/// Mean over the batch of `‖ε̂ − ε‖²` (uniform loss weights).
pub fn noise_mse<T: Real>(tape: &mut Tape<T>, pred: Var, eps: Var) -> Result<Var> {
    let dim = tape.value(eps).cols();
    let d = tape.sub(pred, eps)?;
    let sq = tape.square(d)?;
    let m = tape.mean(sq)?;
    tape.scale(m, dim as f64)
}

/// Forward pass without gradients, conditioned on embedding rows.
pub fn predict_rows(params: &ParamStore, x_t: &[Point], t: &[usize], rows: &[usize]) -> Result<Vec<Point>> {
    let mut tape = Tape::<f32>::new();
    let w = Weights::from_bound(&tape.bind(params, |_| false));
    let x = tape.constant(points_tensor(x_t));
    let cond = lookup_rows(&mut tape, &w, rows)?;
    let out = denoise(&mut tape, &w, x, t, cond)?;
    Ok(tensor_points(tape.value(out)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_and_null_row() {
        let cfg = DenoiserConfig::default();
        let p = init_denoiser(&cfg, 9, 0).unwrap();
        assert_eq!(p.get(EMBEDDING).unwrap().shape(), &[9, 8]);
        assert!(p.get(EMBEDDING).unwrap().row(NULL_ROW).iter().all(|&v| v == 0.0));
        for b in FILM_BLOCKS {
            assert_eq!(p.get(&format!("{b}.w_scale")).unwrap().cols(), cfg.hidden);
            assert_eq!(p.get(&format!("{b}.b_shift")).unwrap().len(), cfg.hidden);
        }
        assert_eq!(config_of(&p).unwrap(), cfg);
        assert!(p.contains("l4.w") && !p.contains("l5.w"));
        let bad = DenoiserConfig { depth: 1, ..cfg };
        assert!(init_denoiser(&bad, 9, 0).is_err());
        assert_eq!(film_weight_names().len(), 4);
        assert_eq!(film_param_names().len(), 8);
    }

    #[test]
    fn forward_shapes() {
        let p = init_denoiser(&DenoiserConfig::default(), 9, 1).unwrap();
        let out = predict_rows(&p, &[[0.1, 0.2], [1.0, -1.0], [0.0, 0.0]], &[1, 50, 100], &[0, 3, 8]).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|p| p[0].is_finite() && p[1].is_finite()));
        assert!(predict_rows(&p, &[[0.0, 0.0]], &[1], &[9]).is_err());
    }
}
