//! Token inversion, subset fine-tuning and low-rank adapters over a frozen
//! base model.
//!
//! An [`AdapterSet`] holds the adaptation variables φ in its own
//! [`ParamStore`]:
//!
//! | entry              | meaning                                   |
//! |--------------------|-------------------------------------------|
//! | `token`            | embedding of a novel token, shape `[e]`   |
//! | `lora.<layer>.a/b` | factors of `W + A·B`                      |
//! | base name          | fine-tuned copy of an overlapping weight  |

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_update, AdamState, Bound, ParamStore, Real, Tape, Tensor, Var};
use crate::concepts::{ConceptDataset, Point};
use crate::diffusion::{
    batch_loss, config_of, denoise, draw_noised, embedding_rows, film_weight_names, points_tensor, tensor_points,
    NoisePredictor, NoiseSchedule, NoisedBatch, Weights, EMBEDDING,
};
use crate::error::{Error, Result};

pub const TOKEN: &str = "token";
const INIT_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptMethod {
    TokenInversion,
    SubsetFineTune,
    #[serde(rename = "lora")]
    LoRA,
}

impl AdaptMethod {
    pub const ALL: [AdaptMethod; 3] = [Self::TokenInversion, Self::SubsetFineTune, Self::LoRA];

    pub fn name(self) -> &'static str {
        match self {
            Self::TokenInversion => "token_inversion",
            Self::SubsetFineTune => "subset_fine_tune",
            Self::LoRA => "lora",
        }
    }

    pub fn default_lr(self) -> f32 {
        match self {
            Self::TokenInversion => 5e-2,
            Self::SubsetFineTune => 1e-3,
            Self::LoRA => 1e-2,
        }
    }
}

impl fmt::Display for AdaptMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdaptMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown adaptation method `{s}`")))
    }
}

/// What the adapted model is conditioned on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Token {
    /// An existing embedding row of the base model.
    Row(usize),
    /// A fresh learned embedding, told apart from other novel tokens by id.
    Novel(u32),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Row(r) => write!(f, "row:{r}"),
            Token::Novel(id) => write!(f, "novel:{id}"),
        }
    }
}

impl FromStr for Token {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownToken(s.to_string());
        let (kind, n) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "row" => n.parse().map(Token::Row).map_err(|_| bad()),
            "novel" => n.parse().map(Token::Novel).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

/// Method plus its settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSpec {
    pub method: AdaptMethod,
    pub token: Token,
    /// LoRA rank.
    #[serde(default = "default_rank")]
    pub rank: usize,
    /// Layers wrapped by LoRA; empty means the FiLM projections.
    #[serde(default)]
    pub lora_layers: Vec<String>,
    /// Base weights fine-tuned in place; empty means the FiLM projections.
    #[serde(default)]
    pub subset: Vec<String>,
}

fn default_rank() -> usize {
    4
}

impl AdapterSpec {
    pub fn new(method: AdaptMethod, token: Token) -> Self {
        Self {
            method,
            token,
            rank: default_rank(),
            lora_layers: Vec::new(),
            subset: Vec::new(),
        }
    }

    pub fn lora_layer_names(&self) -> Vec<String> {
        match self.method {
            AdaptMethod::LoRA if self.lora_layers.is_empty() => film_weight_names(),
            AdaptMethod::LoRA => self.lora_layers.clone(),
            _ => Vec::new(),
        }
    }

    /// The overlap set: base weights that φ also owns.
    pub fn overlap_names(&self) -> Vec<String> {
        match self.method {
            AdaptMethod::SubsetFineTune if self.subset.is_empty() => film_weight_names(),
            AdaptMethod::SubsetFineTune => self.subset.clone(),
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterSet {
    pub spec: AdapterSpec,
    /// φ.
    pub params: ParamStore,
    /// Fingerprint of the base store this adapter was initialized against.
    pub base_fingerprint: String,
}

impl AdapterSet {
    pub fn method(&self) -> AdaptMethod {
        self.spec.method
    }

    pub fn token(&self) -> Token {
        self.spec.token
    }

    pub fn overlap_names(&self) -> Vec<String> {
        self.spec.overlap_names()
    }

    pub fn lora_names(layer: &str) -> (String, String) {
        (format!("lora.{layer}.a"), format!("lora.{layer}.b"))
    }

    /// The explicit low-rank update `A·B` of one wrapped layer.
    pub fn lora_delta(&self, layer: &str) -> Result<Tensor> {
        let (a, b) = Self::lora_names(layer);
        let mut tape = Tape::<f32>::new();
        let bound = tape.bind(&self.params, |_| false);
        let d = tape.matmul(bound.get(&a)?, bound.get(&b)?)?;
        Ok(tape.value(d).clone())
    }
}

/// Fresh φ for `spec`: `A ~ N(0, 0.01²)`, `B = 0`, novel token `~ N(0, 0.01²)`,
/// overlaps copied from `model`.
pub fn init_adapter(spec: &AdapterSpec, model: &ParamStore, seed: u64) -> Result<AdapterSet> {
    let rows = embedding_rows(model)?;
    let e = config_of(model)?.embed_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("finite std");
    let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| normal.sample(&mut rng) as f32).collect() };
    let mut phi = ParamStore::new();

    match spec.token {
        Token::Row(r) if r >= rows => return Err(Error::UnknownToken(spec.token.to_string())),
        Token::Row(_) if spec.method == AdaptMethod::TokenInversion => {
            return Err(Error::config("token inversion needs a novel token"));
        }
        Token::Row(_) => {}
        Token::Novel(_) => phi.insert(TOKEN, Tensor::new(vec![e], draw(e))?),
    }
    for layer in spec.lora_layer_names() {
        let w = model.get(&layer)?;
        let (n, d) = (w.rows(), w.cols());
        if spec.rank == 0 || spec.rank >= n.min(d) {
            return Err(Error::config(format!(
                "LoRA rank {} on `{layer}` ({n}×{d}) must satisfy 1 ≤ r < {}",
                spec.rank,
                n.min(d)
            )));
        }
        let (a, b) = AdapterSet::lora_names(&layer);
        phi.insert(a, Tensor::new(vec![n, spec.rank], draw(n * spec.rank))?);
        phi.insert(b, Tensor::zeros(&[spec.rank, d]));
    }
    for name in spec.overlap_names() {
        phi.insert(name.clone(), model.get(&name)?.clone());
    }
    Ok(AdapterSet {
        spec: spec.clone(),
        params: phi,
        base_fingerprint: model.fingerprint(),
    })
}

/// How the base and adapter stores are placed on a tape.
#[derive(Clone, Copy)]
pub struct BindOptions<'a> {
    /// Which base parameters receive gradients.
    pub model_grad: &'a dyn Fn(&str) -> bool,
    pub adapter_grad: bool,
    /// Read overlapping weights from the base store instead of φ.
    pub overlap_from_model: bool,
}

impl BindOptions<'_> {
    pub const ADAPTER_ONLY: BindOptions<'static> = BindOptions {
        model_grad: &|_| false,
        adapter_grad: true,
        overlap_from_model: false,
    };

    pub const FROZEN: BindOptions<'static> = BindOptions {
        model_grad: &|_| false,
        adapter_grad: false,
        overlap_from_model: false,
    };
}

/// Base and adapter bound on one tape, with the effective weights resolved.
pub struct Effective {
    pub weights: Weights,
    pub model: Bound,
    pub adapter: Bound,
    token: Token,
}

pub fn bind_effective<T: Real>(
    tape: &mut Tape<T>,
    model: &ParamStore,
    adapter: &AdapterSet,
    opts: BindOptions<'_>,
) -> Result<Effective> {
    let model_b = tape.bind(model, opts.model_grad);
    let adapter_b = tape.bind(&adapter.params, |_| opts.adapter_grad);
    let mut weights = Weights::from_bound(&model_b);
    if !opts.overlap_from_model {
        for name in adapter.overlap_names() {
            weights.set(name.clone(), adapter_b.get(&name)?);
        }
    }
    for layer in adapter.spec.lora_layer_names() {
        let (a, b) = AdapterSet::lora_names(&layer);
        let delta = tape.matmul(adapter_b.get(&a)?, adapter_b.get(&b)?)?;
        let w = tape.add(weights.get(&layer)?, delta)?;
        weights.set(layer, w);
    }
    Ok(Effective {
        weights,
        model: model_b,
        adapter: adapter_b,
        token: adapter.spec.token,
    })
}

impl Effective {
    /// Conditioning matrix for `n` items.
    pub fn condition<T: Real>(&self, tape: &mut Tape<T>, n: usize) -> Result<Var> {
        match self.token {
            Token::Row(r) => {
                let table = self.weights.get(EMBEDDING)?;
                tape.gather_rows(table, &vec![r; n])
            }
            Token::Novel(_) => {
                let v = self.adapter.get(TOKEN)?;
                tape.broadcast_rows(v, n)
            }
        }
    }

    pub fn loss<T: Real>(&self, tape: &mut Tape<T>, nb: &NoisedBatch) -> Result<Var> {
        let cond = self.condition(tape, nb.len())?;
        batch_loss(tape, &self.weights, nb, cond)
    }
}

/// Noise prediction of the adapted model.
pub fn effective_forward(model: &ParamStore, adapter: &AdapterSet, x_t: &[Point], t: &[usize]) -> Result<Vec<Point>> {
    let mut tape = Tape::<f32>::new();
    let eff = bind_effective(&mut tape, model, adapter, BindOptions::FROZEN)?;
    let x = tape.constant(points_tensor(x_t));
    let cond = eff.condition(&mut tape, x_t.len())?;
    let out = denoise(&mut tape, &eff.weights, x, t, cond)?;
    Ok(tensor_points(tape.value(out)))
}

/// A base model seen through an adapter.
#[derive(Clone, Copy, Debug)]
pub struct Adapted<'a> {
    pub model: &'a ParamStore,
    pub adapter: &'a AdapterSet,
}

impl NoisePredictor for Adapted<'_> {
    fn predict(&self, x_t: &[Point], t: usize) -> Result<Vec<Point>> {
        effective_forward(self.model, self.adapter, x_t, &vec![t; x_t.len()])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    /// Full passes over the training split.
    pub epochs: usize,
    /// `None` uses the method's default.
    pub lr: Option<f32>,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: None,
            batch_size: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdaptRun {
    /// φ after every epoch; entry 0 is the initial adapter.
    pub checkpoints: Vec<AdapterSet>,
    pub losses: Vec<f32>,
}

impl AdaptRun {
    pub fn last(&self) -> &AdapterSet {
        self.checkpoints.last().expect("epoch 0 is always recorded")
    }
}

/// Minimizes the noise-prediction loss over `dataset.train` with Adam on φ
/// only. The base store is never touched.
pub fn adapt(
    model: &ParamStore,
    adapter: &AdapterSet,
    dataset: &ConceptDataset,
    sched: &NoiseSchedule,
    cfg: &AdaptConfig,
) -> Result<AdaptRun> {
    if adapter.base_fingerprint != model.fingerprint() {
        return Err(Error::AdapterMismatch("adapter was initialized against a different model".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be ≥ 1"));
    }
    let lr = cfg.lr.unwrap_or_else(|| adapter.method().default_lr());
    let mut phi = adapter.clone();
    let mut checkpoints = vec![phi.clone()];
    let mut losses = Vec::new();
    if cfg.epochs > 0 && dataset.train.is_empty() {
        return Err(Error::Empty("adaptation train split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::default();
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let x0: Vec<Point> = chunk.iter().map(|&i| dataset.train[i]).collect();
            let nb = draw_noised(&x0, sched, &mut rng)?;
            losses.push(adapter_step(model, &mut phi, &nb, &mut adam, lr)?);
        }
        checkpoints.push(phi.clone());
    }
    Ok(AdaptRun { checkpoints, losses })
}

/// One Adam step on φ; returns the loss before the step.
pub fn adapter_step(model: &ParamStore, phi: &mut AdapterSet, nb: &NoisedBatch, adam: &mut AdamState, lr: f32) -> Result<f32> {
    let mut tape = Tape::<f32>::new();
    let eff = bind_effective(&mut tape, model, phi, BindOptions::ADAPTER_ONLY)?;
    let loss = eff.loss(&mut tape, nb)?;
    let grads = tape.backward(loss)?.named(&eff.adapter, &tape);
    adam_update(&mut phi.params, &grads, adam, lr, false)?;
    Ok(tape.value(loss).item())
}

/// Folds φ into a copy of `model`: `W ← W + A·B`, overlaps written in place,
/// and a novel token appended as a new embedding row. Returns the store and
/// the row that now carries the adapter's token.
pub fn merge(model: &ParamStore, adapter: &AdapterSet) -> Result<(ParamStore, usize)> {
    if adapter.base_fingerprint != model.fingerprint() {
        return Err(Error::AdapterMismatch(
            "model differs from the adapter's base (already merged?)".into(),
        ));
    }
    let mut out = model.clone();
    for layer in adapter.spec.lora_layer_names() {
        let delta = adapter.lora_delta(&layer)?;
        for (w, d) in out.get_mut(&layer)?.data_mut().iter_mut().zip(delta.data()) {
            *w += d;
        }
    }
    for name in adapter.overlap_names() {
        out.insert(name.clone(), adapter.params.get(&name)?.clone());
    }
    let row = match adapter.token() {
        Token::Row(r) => r,
        Token::Novel(_) => {
            let table = out.get(EMBEDDING)?;
            let rows = table.rows();
            let mut data = table.data().to_vec();
            data.extend_from_slice(adapter.params.get(TOKEN)?.data());
            out.insert(EMBEDDING, Tensor::new(vec![rows + 1, table.cols()], data)?);
            rows
        }
    };
    Ok((out, row))
}

/// Random probe inputs for transparency checks.
pub fn random_probe(n: usize, steps: usize, seed: u64) -> (Vec<Point>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..n).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
    let t = (0..n).map(|_| rng.random_range(1..=steps)).collect();
    (x, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{init_denoiser, predict_rows, DenoiserConfig};

    fn model() -> ParamStore {
        let cfg = DenoiserConfig { hidden: 16, depth: 3, ..DenoiserConfig::default() };
        let mut p = init_denoiser(&cfg, 4, 3).unwrap();
        // Non-trivial embedding rows so gathers are informative.
        for v in p.get_mut(EMBEDDING).unwrap().data_mut().iter_mut().skip(8) {
            *v += 0.3;
        }
        p
    }

    #[test]
    fn init_is_transparent() {
        let m = model();
        let (x, t) = random_probe(100, 100, 1);
        let base = predict_rows(&m, &x, &t, &[2; 100]).unwrap();
        for method in AdaptMethod::ALL {
            if method != AdaptMethod::TokenInversion {
                let a = init_adapter(&AdapterSpec::new(method, Token::Row(2)), &m, 5).unwrap();
                assert_eq!(effective_forward(&m, &a, &x, &t).unwrap(), base, "{method}");
            }
        }
    }

    #[test]
    fn parameter_counts() {
        let m = model();
        let ti = init_adapter(&AdapterSpec::new(AdaptMethod::TokenInversion, Token::Novel(1)), &m, 0).unwrap();
        assert_eq!(ti.params.names().collect::<Vec<_>>(), vec![TOKEN]);
        assert!(init_adapter(&AdapterSpec::new(AdaptMethod::TokenInversion, Token::Row(1)), &m, 0).is_err());

        let lora = init_adapter(&AdapterSpec::new(AdaptMethod::LoRA, Token::Row(1)), &m, 0).unwrap();
        // Four 8×16 FiLM projections at rank 4.
        assert_eq!(lora.params.num_scalars(), 4 * 4 * (8 + 16));
        assert!(lora.lora_delta("film1.w_scale").unwrap().data().iter().all(|&v| v == 0.0));

        let mut trunk = AdapterSpec::new(AdaptMethod::LoRA, Token::Row(1));
        trunk.lora_layers = vec!["l1.w".into()];
        let t = init_adapter(&trunk, &m, 0).unwrap();
        assert_eq!(t.params.num_scalars(), 4 * (18 + 16));

        let mut spec = AdapterSpec::new(AdaptMethod::LoRA, Token::Row(1));
        spec.rank = 16;
        assert!(init_adapter(&spec, &m, 0).is_err());
        assert!(init_adapter(&AdapterSpec::new(AdaptMethod::LoRA, Token::Row(4)), &m, 0).is_err());
    }

    #[test]
    fn perturbing_a_with_zero_b_changes_nothing() {
        let m = model();
        let mut a = init_adapter(&AdapterSpec::new(AdaptMethod::LoRA, Token::Row(1)), &m, 0).unwrap();
        let (x, t) = random_probe(20, 100, 2);
        let before = effective_forward(&m, &a, &x, &t).unwrap();
        a.params.get_mut("lora.film1.w_scale.a").unwrap().data_mut().iter_mut().for_each(|v| *v += 1.0);
        assert_eq!(effective_forward(&m, &a, &x, &t).unwrap(), before);
    }

    #[test]
    fn merge_matches_effective_forward() {
        let m = model();
        let sched = NoiseSchedule::default();
        let ds = crate::concepts::generate(&crate::concepts::held_out_specs()[0], 64, 8, 0).unwrap();
        for method in AdaptMethod::ALL {
            let spec = AdapterSpec::new(method, Token::Novel(7));
            let a = init_adapter(&spec, &m, 1).unwrap();
            let cfg = AdaptConfig { epochs: 2, batch_size: 16, ..AdaptConfig::default() };
            let run = adapt(&m, &a, &ds, &sched, &cfg).unwrap();
            assert_eq!(run.checkpoints.len(), 3);
            let fin = run.last();
            let (merged, row) = merge(&m, fin).unwrap();
            assert_eq!(row, 4);
            let (x, t) = random_probe(100, 100, 3);
            let eff = effective_forward(&m, fin, &x, &t).unwrap();
            let direct = predict_rows(&merged, &x, &t, &[row; 100]).unwrap();
            let worst = eff
                .iter()
                .zip(&direct)
                .flat_map(|(a, b)| [(a[0] - b[0]).abs(), (a[1] - b[1]).abs()])
                .fold(0.0f32, f32::max);
            assert!(worst <= 1e-6, "{method}: {worst}");
            assert!(matches!(merge(&merged, fin), Err(Error::AdapterMismatch(_))));
        }
    }

    #[test]
    fn merge_of_init_appends_one_row() {
        let m = model();
        let a = init_adapter(&AdapterSpec::new(AdaptMethod::LoRA, Token::Novel(2)), &m, 0).unwrap();
        let (merged, row) = merge(&m, &a).unwrap();
        assert_eq!(row, 4);
        assert_eq!(merged.diff_names(&m), vec![EMBEDDING.to_string()]);
        assert_eq!(&merged.get(EMBEDDING).unwrap().data()[..m.get(EMBEDDING).unwrap().len()], m.get(EMBEDDING).unwrap().data());
    }

    #[test]
    fn adapt_leaves_base_untouched() {
        let m = model();
        let snapshot = m.clone();
        let ds = crate::concepts::generate(&crate::concepts::held_out_specs()[1], 32, 8, 0).unwrap();
        let a = init_adapter(&AdapterSpec::new(AdaptMethod::SubsetFineTune, Token::Novel(3)), &m, 0).unwrap();
        let cfg = AdaptConfig { epochs: 1, batch_size: 8, ..AdaptConfig::default() };
        let run = adapt(&m, &a, &ds, &NoiseSchedule::default(), &cfg).unwrap();
        assert!(m.bit_eq(&snapshot));
        assert!(!run.last().params.bit_eq(&a.params));
        let zero = AdaptConfig { epochs: 0, ..cfg };
        let run = adapt(&m, &a, &ds, &NoiseSchedule::default(), &zero).unwrap();
        assert!(run.last().params.bit_eq(&a.params));
    }

    #[test]
    fn token_and_method_parse() {
        for t in [Token::Row(3), Token::Novel(12)] {
            assert_eq!(t.to_string().parse::<Token>().unwrap(), t);
        }
        assert!("row:x".parse::<Token>().is_err());
        for m in AdaptMethod::ALL {
            assert_eq!(m.name().parse::<AdaptMethod>().unwrap(), m);
        }
    }
}
