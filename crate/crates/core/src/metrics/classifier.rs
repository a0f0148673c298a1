use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_update, AdamState, ParamStore, Tape, Tensor, Var};
use crate::concepts::{ConceptDataset, Point};
use crate::diffusion::{points_tensor, Weights, NULL_ROW};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            steps: 3000,
            batch_size: 256,
            lr: 1e-2,
            seed: 7,
        }
    }
}

/// Small frozen `2 → hidden → C` network that labels points with a concept id.
#[derive(Clone, Debug)]
pub struct EvalClassifier {
    pub params: ParamStore,
    /// Concept id of each output class.
    pub classes: Vec<usize>,
}

fn logits(tape: &mut Tape<f32>, w: &Weights, x: Var) -> Result<Var> {
    let h = tape.affine(x, w.get("fc1.w")?, w.get("fc1.b")?)?;
    let h = tape.silu(h)?;
    tape.affine(h, w.get("fc2.w")?, w.get("fc2.b")?)
}

impl EvalClassifier {
    /// Trains on each dataset's reference split.
    pub fn train(datasets: &[ConceptDataset], cfg: &ClassifierConfig) -> Result<Self> {
        if datasets.is_empty() || datasets.iter().any(|d| d.reference.is_empty()) {
            return Err(Error::Empty("classifier reference data"));
        }
        let c = datasets.len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut gauss = |r: usize, k: usize| {
            let d = Normal::new(0.0, (1.0 / r as f64).sqrt()).expect("finite std");
            Tensor::new(vec![r, k], (0..r * k).map(|_| d.sample(&mut rng) as f32).collect()).expect("shape")
        };
        let mut params = ParamStore::new();
        params.insert("fc1.w", gauss(2, cfg.hidden));
        params.insert("fc1.b", Tensor::zeros(&[cfg.hidden]));
        params.insert("fc2.w", gauss(cfg.hidden, c));
        params.insert("fc2.b", Tensor::zeros(&[c]));

        let pool: Vec<(Point, usize)> = datasets
            .iter()
            .enumerate()
            .flat_map(|(k, d)| d.reference.iter().map(move |&p| (p, k)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let mut adam = AdamState::default();
        for _ in 0..cfg.steps {
            let (x, y): (Vec<Point>, Vec<usize>) = (0..cfg.batch_size)
                .map(|_| pool[rng.random_range(0..pool.len())])
                .unzip();
            let mut tape = Tape::<f32>::new();
            let bound = tape.bind(&params, |_| true);
            let w = Weights::from_bound(&bound);
            let xv = tape.constant(points_tensor(&x));
            let z = logits(&mut tape, &w, xv)?;
            let loss = tape.softmax_xent(z, &y)?;
            let grads = tape.backward(loss)?.named(&bound, &tape);
            adam_update(&mut params, &grads, &mut adam, cfg.lr, false)?;
        }
        Ok(Self {
            params,
            classes: datasets.iter().map(|d| d.spec.concept_id).collect(),
        })
    }

    /// Predicted concept id for each point. Non-finite points get the null
    /// id 0, which no concept uses.
    pub fn predict(&self, pts: &[Point]) -> Result<Vec<usize>> {
        if pts.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::<f32>::new();
        let w = Weights::from_bound(&tape.bind(&self.params, |_| false));
        let xv = tape.constant(points_tensor(pts));
        let z = logits(&mut tape, &w, xv)?;
        let z = tape.value(z);
        Ok((0..pts.len())
            .map(|i| {
                if !(pts[i][0].is_finite() && pts[i][1].is_finite()) {
                    return NULL_ROW;
                }
                let row = z.row(i);
                let k = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
                self.classes[k]
            })
            .collect())
    }

    /// Rebuilds a classifier from a checkpointed store; the class list is
    /// stored alongside as metadata.
    pub fn from_parts(params: ParamStore, classes: Vec<usize>) -> Result<Self> {
        let out = params.get("fc2.b")?.len();
        if out != classes.len() {
            return Err(Error::config(format!("classifier has {out} outputs but {} classes", classes.len())));
        }
        Ok(Self { params, classes })
    }
}

/// Fraction of `samples` classified as `target`.
pub fn concept_accuracy(samples: &[Point], clf: &EvalClassifier, target: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("accuracy samples"));
    }
    let hits = clf.predict(samples)?.into_iter().filter(|&c| c == target).count();
    Ok(hits as f64 / samples.len() as f64)
}
