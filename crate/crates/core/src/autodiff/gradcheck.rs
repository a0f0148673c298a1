use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::params::ParamStore;
use super::tape::{Bound, Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::Result;

/// A scalar objective that can be built on a tape of any precision.
pub trait Objective {
    fn loss<T: Real>(&self, tape: &mut Tape<T>, params: &Bound) -> Result<Var>;
}

/// Evaluates `obj` on an `f64` tape without gradients.
pub fn eval_f64<O: Objective>(obj: &O, params: &ParamStore) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let bound = tape.bind(params, |_| false);
    let l = obj.loss(&mut tape, &bound)?;
    Ok(tape.value(l).item())
}

/// Compares the reverse-mode gradient of `obj` against central differences
/// with half-width `step`, and returns the worst relative error
/// `|a − n| / max(|a|, |n|, 1e-8)` over every coordinate of `params`.
///
/// Both sides run on `f64` tapes, so the check measures the derivative rules
/// rather than `f32` rounding, which alone exceeds 1e-3 relative error on
/// gradient components near zero. [`precision_gap`] covers the `f32` side.
pub fn finite_diff_check<O: Objective>(obj: &O, params: &ParamStore, step: f64) -> Result<f64> {
    let analytic = gradients::<f64, O>(obj, params)?;

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for name in params.names() {
        for i in 0..params.get(name)?.len() {
            let wide = central_difference(obj, &mut probe, name, i, step)?;
            let narrow = central_difference(obj, &mut probe, name, i, step / 2.0)?;
            // One Richardson step cancels the h² truncation term, which would
            // otherwise dominate gradient components near zero.
            let numeric = (4.0 * narrow - wide) / 3.0;
            let a = analytic[name].data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn central_difference<O: Objective>(obj: &O, probe: &mut ParamStore, name: &str, i: usize, h: f64) -> Result<f64> {
    let orig = probe.get(name)?.data()[i];
    let x0 = orig as f64;
    probe.get_mut(name)?.data_mut()[i] = (x0 + h) as f32;
    let hi_step = probe.get(name)?.data()[i] as f64 - x0;
    let plus = eval_f64(obj, probe)?;
    probe.get_mut(name)?.data_mut()[i] = (x0 - h) as f32;
    let lo_step = x0 - probe.get(name)?.data()[i] as f64;
    let minus = eval_f64(obj, probe)?;
    probe.get_mut(name)?.data_mut()[i] = orig;
    // f32 rounding of x0 ± h changes the effective step.
    Ok((plus - minus) / (hi_step + lo_step))
}

fn gradients<T: Real, O: Objective>(obj: &O, params: &ParamStore) -> Result<std::collections::BTreeMap<String, Tensor<T>>> {
    let mut tape = Tape::<T>::new();
    let bound = tape.bind(params, |_| true);
    let loss = obj.loss(&mut tape, &bound)?;
    Ok(tape.backward(loss)?.named(&bound, &tape))
}

/// Largest gap between the `f32` and `f64` gradients of `obj`, relative to
/// the largest `f64` gradient component (1 if all are smaller).
pub fn precision_gap<O: Objective>(obj: &O, params: &ParamStore) -> Result<f64> {
    let lo = gradients::<f32, O>(obj, params)?;
    let hi = gradients::<f64, O>(obj, params)?;
    let scale = hi.values().flat_map(|t| t.data()).fold(1.0f64, |m, g| m.max(g.abs()));
    let gap = lo
        .iter()
        .flat_map(|(name, t)| t.data().iter().zip(hi[name].data()))
        .fold(0.0f64, |m, (&a, &b)| m.max((a as f64 - b).abs()));
    Ok(gap / scale)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Step {
    Silu,
    Square,
    Scale(f64),
    Add(usize),
    Sub(usize),
    Mul(usize),
    MatMul,
    Affine,
    Gather,
    ConcatProject(usize),
    Bias,
}

/// A random composite objective for gradient checking: a chain of up to six
/// operations (at most two of them products) over `rows × width` activations, each of which may reach back
/// to any earlier activation, reduced by a mean and (sometimes) a softmax
/// cross-entropy. Every parameter is trainable.
#[derive(Clone, Debug)]
pub struct RandomGraph {
    steps: Vec<Step>,
    gather: Vec<usize>,
    labels: Vec<usize>,
    xent: bool,
}

impl RandomGraph {
    pub const MAX_DEPTH: usize = 6;
    pub const MAX_WIDTH: usize = 16;

    /// Draws a graph and its parameters from `seed`.
    pub fn new(seed: u64) -> (Self, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = rng.random_range(1..=6);
        let width = rng.random_range(1..=Self::MAX_WIDTH);
        let table = rng.random_range(1..=4);
        let depth = rng.random_range(1..=Self::MAX_DEPTH);
        let mut steps = Vec::with_capacity(depth);
        // Products raise the polynomial degree; past two of them the loss can
        // span more orders of magnitude than f64 differences resolve.
        let mut products = 0;
        for k in 0..depth {
            let earlier = rng.random_range(0..=k);
            let mut pick = rng.random_range(0..11);
            if products == 2 && matches!(pick, 1 | 5 | 8) {
                pick = 2;
            }
            products += matches!(pick, 1 | 5 | 8) as usize;
            let step = match pick {
                0 => Step::Silu,
                1 => Step::Square,
                2 => Step::Scale(rng.random_range(-2.0..2.0)),
                3 => Step::Add(earlier),
                4 => Step::Sub(earlier),
                5 => Step::Mul(earlier),
                6 => Step::MatMul,
                7 => Step::Affine,
                8 => Step::Gather,
                9 => Step::ConcatProject(earlier),
                _ => Step::Bias,
            };
            steps.push(step);
        }
        let gather = (0..rows).map(|_| rng.random_range(0..table)).collect();
        let labels = (0..rows).map(|_| rng.random_range(0..width)).collect();
        let xent = rng.random_bool(0.5);

        let mut normal = |shape: &[usize], std: f64| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| (rng.sample::<f64, _>(StandardNormal) * std) as f32).collect();
            Tensor::new(shape.to_vec(), data).expect("shape matches data")
        };
        let wstd = 1.0 / (width as f64).sqrt();
        let mut params = ParamStore::new();
        params.insert("x", normal(&[rows, width], 1.0));
        params.insert("w", normal(&[width, width], wstd));
        params.insert("b", normal(&[1, width], 0.5));
        params.insert("table", normal(&[table, width], 1.0));
        params.insert("w2", normal(&[2 * width, width], wstd));
        (Self { steps, gather, labels, xent }, params)
    }

    pub fn depth(&self) -> usize {
        self.steps.len()
    }
}

impl Objective for RandomGraph {
    fn loss<T: Real>(&self, tape: &mut Tape<T>, p: &Bound) -> Result<Var> {
        let rows = self.gather.len();
        let mut history = vec![p.get("x")?];
        for &step in &self.steps {
            let h = *history.last().expect("history starts with the input");
            let next = match step {
                Step::Silu => tape.silu(h)?,
                Step::Square => tape.square(h)?,
                Step::Scale(c) => tape.scale(h, c)?,
                Step::Add(j) => tape.add(h, history[j])?,
                Step::Sub(j) => tape.sub(h, history[j])?,
                Step::Mul(j) => tape.mul(h, history[j])?,
                Step::MatMul => tape.matmul(h, p.get("w")?)?,
                Step::Affine => tape.affine(h, p.get("w")?, p.get("b")?)?,
                Step::Gather => {
                    let g = tape.gather_rows(p.get("table")?, &self.gather)?;
                    tape.mul(h, g)?
                }
                Step::ConcatProject(j) => {
                    let c = tape.concat_cols(h, history[j])?;
                    tape.matmul(c, p.get("w2")?)?
                }
                Step::Bias => {
                    let b = tape.broadcast_rows(p.get("b")?, rows)?;
                    tape.add(h, b)?
                }
            };
            history.push(next);
        }
        let out = *history.last().expect("non-empty");
        let m = tape.mean(out)?;
        if self.xent {
            let x = tape.softmax_xent(out, &self.labels)?;
            tape.add(m, x)
        } else {
            Ok(m)
        }
    }
}
