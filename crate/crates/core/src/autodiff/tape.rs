//! Wengert-list reverse-mode differentiation.
//!
//! Every primitive evaluates eagerly and appends a node; `backward` walks the
//! list in reverse. Nodes whose inputs carry no gradient are marked
//! untracked and skipped during the reverse sweep.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Affine { x: Var, w: Var, b: Var },
    Silu(Var),
    Square(Var),
    Mean(Var),
    Scale(Var, f64),
    ConcatCols(Var, Var),
    BroadcastRows(Var, usize),
    GatherRows { table: Var, rows: Vec<usize> },
    StopGrad(Var),
    SoftmaxXent { logits: Var, labels: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Affine { .. } => "affine",
            Op::Silu(_) => "silu",
            Op::Square(_) => "square",
            Op::Mean(_) => "mean",
            Op::Scale(..) => "scale",
            Op::ConcatCols(..) => "concat",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::GatherRows { .. } => "gather_rows",
            Op::StopGrad(_) => "stop_grad",
            Op::SoftmaxXent { .. } => "softmax_xent",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::ConcatCols(a, b) => vec![*a, *b],
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::Silu(a) | Op::Square(a) | Op::Mean(a) | Op::Scale(a, _) => vec![*a],
            Op::BroadcastRows(a, _) | Op::StopGrad(a) => vec![*a],
            Op::GatherRows { table, .. } => vec![*table],
            Op::SoftmaxXent { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op,
    tracked: bool,
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

/// Row width of a vector-like operand (`[m]` or `[1, m]`).
fn vector_len(shape: &[usize]) -> Option<usize> {
    match shape {
        [m] => Some(*m),
        [1, m] => Some(*m),
        _ => None,
    }
}

fn compute<T: Real>(nodes: &[Node<T>], op: &Op) -> Result<Tensor<T>> {
    let v = |x: &Var| &nodes[x.0].value;
    let out = match op {
        Op::Leaf => unreachable!("leaves are not recomputed"),
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (a, b) = (v(a), v(b));
            if a.shape() != b.shape() {
                return Err(Error::shape(op.name(), &[a.shape(), b.shape()]));
            }
            let data = a.data().iter().zip(b.data());
            let data: Vec<T> = match op {
                Op::Add(..) => data.map(|(&x, &y)| x + y).collect(),
                Op::Sub(..) => data.map(|(&x, &y)| x - y).collect(),
                _ => data.map(|(&x, &y)| x * y).collect(),
            };
            Tensor::new(a.shape().to_vec(), data)?
        }
        Op::MatMul(a, b) => {
            let (a, b) = (v(a), v(b));
            match (as_matrix(a.shape()), as_matrix(b.shape())) {
                (Some((n, k)), Some((k2, m))) if k == k2 => {
                    Tensor::new(vec![n, m], matmul_raw(a.data(), b.data(), n, k, m))?
                }
                _ => return Err(Error::shape("matmul", &[a.shape(), b.shape()])),
            }
        }
        Op::Affine { x, w, b } => {
            let (x, w, b) = (v(x), v(w), v(b));
            let dims = (as_matrix(x.shape()), as_matrix(w.shape()), vector_len(b.shape()));
            match dims {
                (Some((n, k)), Some((k2, m)), Some(m2)) if k == k2 && m == m2 => {
                    let mut data = matmul_raw(x.data(), w.data(), n, k, m);
                    for row in data.chunks_mut(m) {
                        for (o, &bv) in row.iter_mut().zip(b.data()) {
                            *o = *o + bv;
                        }
                    }
                    Tensor::new(vec![n, m], data)?
                }
                _ => return Err(Error::shape("affine", &[x.shape(), w.shape(), b.shape()])),
            }
        }
        Op::Silu(a) => v(a).map(|x| x * sigmoid(x)),
        Op::Square(a) => v(a).map(|x| x * x),
        Op::Mean(a) => {
            let a = v(a);
            if a.is_empty() {
                return Err(Error::Empty("mean of an empty tensor"));
            }
            let s: T = a.data().iter().copied().sum();
            Tensor::scalar(s / T::lit(a.len() as f64))
        }
        Op::Scale(a, c) => {
            let c = T::lit(*c);
            v(a).map(|x| x * c)
        }
        Op::ConcatCols(a, b) => {
            let (a, b) = (v(a), v(b));
            match (as_matrix(a.shape()), as_matrix(b.shape())) {
                (Some((n, ca)), Some((n2, cb))) if n == n2 => {
                    let mut data = Vec::with_capacity(n * (ca + cb));
                    for i in 0..n {
                        data.extend_from_slice(&a.data()[i * ca..(i + 1) * ca]);
                        data.extend_from_slice(&b.data()[i * cb..(i + 1) * cb]);
                    }
                    Tensor::new(vec![n, ca + cb], data)?
                }
                _ => return Err(Error::shape("concat", &[a.shape(), b.shape()])),
            }
        }
        Op::BroadcastRows(a, n) => {
            let a = v(a);
            let m = vector_len(a.shape())
                .ok_or_else(|| Error::shape("broadcast_rows", &[a.shape()]))?;
            let mut data = Vec::with_capacity(n * m);
            for _ in 0..*n {
                data.extend_from_slice(a.data());
            }
            Tensor::new(vec![*n, m], data)?
        }
        Op::GatherRows { table, rows } => {
            let t = v(table);
            let (r, c) =
                as_matrix(t.shape()).ok_or_else(|| Error::shape("gather_rows", &[t.shape()]))?;
            let mut data = Vec::with_capacity(rows.len() * c);
            for &i in rows {
                if i >= r {
                    return Err(Error::Index {
                        op: "gather_rows",
                        index: i,
                        bound: r,
                    });
                }
                data.extend_from_slice(t.row(i));
            }
            Tensor::new(vec![rows.len(), c], data)?
        }
        Op::StopGrad(a) => v(a).clone().with_grad(false),
        Op::SoftmaxXent { logits, labels } => {
            let z = v(logits);
            let (n, c) = as_matrix(z.shape())
                .filter(|(n, _)| *n == labels.len() && *n > 0)
                .ok_or_else(|| Error::shape("softmax_xent", &[z.shape(), &[labels.len()]]))?;
            let mut total = T::zero();
            for (i, &y) in labels.iter().enumerate() {
                if y >= c {
                    return Err(Error::Index {
                        op: "softmax_xent",
                        index: y,
                        bound: c,
                    });
                }
                let row = z.row(i);
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<T>().ln();
                total = total + lse - row[y];
            }
            Tensor::scalar(total / T::lit(n as f64))
        }
    };
    Ok(out)
}

/// Ordered record of primitive operations.
#[derive(Clone, Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Records a leaf; gradients are reported for it when `requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let tracked = t.requires_grad;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_grad(false))
    }

    /// Binds every tensor of `store` as a leaf. `trainable` decides which
    /// leaves receive gradients.
    pub fn bind(&mut self, store: &ParamStore, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = store
            .iter()
            .map(|(name, t)| {
                let leaf = t.cast::<T>().with_grad(trainable(name));
                (name.to_string(), self.leaf(leaf))
            })
            .collect();
        Bound { vars }
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = compute(&self.nodes, &op)?;
        let tracked = !matches!(op, Op::StopGrad(_))
            && op.inputs().iter().any(|i| self.nodes[i.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    /// `x·W + b` with `b` broadcast across rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.push(Op::Affine { x, w, b })
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Silu(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Square(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Mean(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(a, c))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::ConcatCols(a, b))
    }

    pub fn broadcast_rows(&mut self, v: Var, rows: usize) -> Result<Var> {
        self.push(Op::BroadcastRows(v, rows))
    }

    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        self.push(Op::GatherRows {
            table,
            rows: rows.to_vec(),
        })
    }

    pub fn stop_grad(&mut self, a: Var) -> Result<Var> {
        self.push(Op::StopGrad(a))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.push(Op::SoftmaxXent {
            logits,
            labels: labels.to_vec(),
        })
    }

    /// Recomputes every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Result<Tape<T>> {
        let mut out: Vec<Node<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => compute(&out, op)?,
            };
            out.push(Node {
                value,
                op: node.op.clone(),
                tracked: node.tracked,
            });
        }
        Ok(Tape { nodes: out })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.nodes[..=loss.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let tracked = |v: Var| self.nodes[v.0].tracked;
        let mut acc = |v: Var, delta: Vec<T>| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.iter_mut().zip(delta) {
                        *e = *e + d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                if tracked(*b) {
                    acc(*b, g.iter().map(|&x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                if tracked(*a) {
                    let d = g.iter().zip(val(*b).data()).map(|(&x, &y)| x * y);
                    acc(*a, d.collect());
                }
                if tracked(*b) {
                    let d = g.iter().zip(val(*a).data()).map(|(&x, &y)| x * y);
                    acc(*b, d.collect());
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k) = (av.rows(), av.cols());
                let m = bv.cols();
                if tracked(*a) {
                    acc(*a, matmul_nt(g, bv.data(), n, m, k));
                }
                if tracked(*b) {
                    acc(*b, matmul_tn(av.data(), g, n, k, m));
                }
            }
            Op::Affine { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (n, k) = (xv.rows(), xv.cols());
                let m = wv.cols();
                if tracked(*x) {
                    acc(*x, matmul_nt(g, wv.data(), n, m, k));
                }
                if tracked(*w) {
                    acc(*w, matmul_tn(xv.data(), g, n, k, m));
                }
                if tracked(*b) {
                    let mut db = vec![T::zero(); m];
                    for row in g.chunks(m) {
                        for (d, &x) in db.iter_mut().zip(row) {
                            *d = *d + x;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Silu(a) => {
                let d = g.iter().zip(val(*a).data()).map(|(&gi, &x)| {
                    let s = sigmoid(x);
                    gi * s * (T::one() + x * (T::one() - s))
                });
                acc(*a, d.collect());
            }
            Op::Square(a) => {
                let two = T::lit(2.0);
                let d = g.iter().zip(val(*a).data()).map(|(&gi, &x)| gi * two * x);
                acc(*a, d.collect());
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                acc(*a, vec![g[0] / T::lit(n as f64); n]);
            }
            Op::Scale(a, c) => {
                let c = T::lit(*c);
                acc(*a, g.iter().map(|&x| x * c).collect());
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (val(*a).cols(), val(*b).cols());
                let width = ca + cb;
                let mut da = Vec::with_capacity(g.len() / width * ca);
                let mut db = Vec::with_capacity(g.len() / width * cb);
                for row in g.chunks(width) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::BroadcastRows(a, _) => {
                let m = val(*a).len();
                let mut d = vec![T::zero(); m];
                for row in g.chunks(m) {
                    for (o, &x) in d.iter_mut().zip(row) {
                        *o = *o + x;
                    }
                }
                acc(*a, d);
            }
            Op::GatherRows { table, rows } => {
                let t = val(*table);
                let c = t.cols();
                let mut d = vec![T::zero(); t.len()];
                for (i, &r) in rows.iter().enumerate() {
                    for (o, &x) in d[r * c..(r + 1) * c].iter_mut().zip(&g[i * c..(i + 1) * c]) {
                        *o = *o + x;
                    }
                }
                acc(*table, d);
            }
            Op::StopGrad(_) => {}
            Op::SoftmaxXent { logits, labels } => {
                let z = val(*logits);
                let (n, c) = (z.rows(), z.cols());
                let scale = g[0] / T::lit(n as f64);
                let mut d = Vec::with_capacity(n * c);
                for (i, &y) in labels.iter().enumerate() {
                    let row = z.row(i);
                    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let denom: T = row.iter().map(|&x| (x - mx).exp()).sum();
                    for (j, &x) in row.iter().enumerate() {
                        let p = (x - mx).exp() / denom;
                        let onehot = if j == y { T::one() } else { T::zero() };
                        d.push((p - onehot) * scale);
                    }
                }
                acc(*logits, d);
            }
        }
    }
}

/// Name → leaf mapping produced by [`Tape::bind`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Result of a reverse sweep.
#[derive(Clone, Debug)]
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor<T> {
        let shape = self
            .shapes
            .get(v.0)
            .cloned()
            .unwrap_or_default();
        match self.grads.get(v.0).and_then(|g| g.clone()) {
            Some(data) => Tensor::new(shape, data).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Gradients for every bound leaf that asked for one, keyed by name.
    pub fn named(&self, bound: &Bound, tape: &Tape<T>) -> BTreeMap<String, Tensor<T>> {
        bound
            .iter()
            .filter(|(_, v)| tape.value(*v).requires_grad)
            .map(|(name, v)| {
                let g = if v.0 < self.shapes.len() {
                    self.get(v)
                } else {
                    Tensor::zeros(tape.value(v).shape())
                };
                (name.to_string(), g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_leaf(tape: &mut Tape<f64>, x: f64) -> Var {
        tape.leaf(Tensor::scalar(x).with_grad(true))
    }

    #[test]
    fn square_forward_and_backward() {
        let mut tape = Tape::<f64>::new();
        let x = scalar_leaf(&mut tape, 3.0);
        let y = tape.square(x).unwrap();
        assert_eq!(tape.value(y).item(), 9.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).item(), 6.0);
    }

    #[test]
    fn silu_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = scalar_leaf(&mut tape, 0.0);
        let y = tape.silu(x).unwrap();
        assert_eq!(tape.value(y).item(), 0.0);
        assert_eq!(tape.backward(y).unwrap().get(x).item(), 0.5);
    }

    #[test]
    fn gather_row_scatters_into_selected_row_only() {
        let mut tape = Tape::<f64>::new();
        let e = tape.leaf(
            Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
                .unwrap()
                .with_grad(true),
        );
        let r = tape.gather_rows(e, &[1]).unwrap();
        assert_eq!(tape.value(r).data(), &[3.0, 4.0]);
        let s = tape.mean(r).unwrap();
        let g = tape.backward(s).unwrap().get(e);
        assert_eq!(g.data(), &[0.0, 0.0, 0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let mut tape = Tape::<f64>::new();
        let x = scalar_leaf(&mut tape, 2.0);
        let sg = tape.stop_grad(x).unwrap();
        let y = tape.mul(x, sg).unwrap();
        assert_eq!(tape.value(y).item(), 4.0);
        // d/dx [x · sg(x)] = sg(x) = 2
        assert_eq!(tape.backward(y).unwrap().get(x).item(), 2.0);
    }

    #[test]
    fn unreached_leaf_has_zero_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::scalar(1.5).with_grad(true));
        let unused = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad(true));
        let y = tape.square(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]).with_grad(true));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b) {
            Err(Error::Shape { op, shapes }) => {
                assert_eq!(op, "matmul");
                assert_eq!(shapes, vec![vec![2, 3], vec![2, 3]]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(tape.add(a, c), Err(Error::Shape { op: "add", .. })));
    }

    #[test]
    fn softmax_xent_matches_hand_value() {
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(
            Tensor::new(vec![1, 2], vec![0.0, 0.0])
                .unwrap()
                .with_grad(true),
        );
        let l = tape.softmax_xent(z, &[1]).unwrap();
        assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-12);
        let g = tape.backward(l).unwrap().get(z);
        assert_eq!(g.data(), &[0.5, -0.5]);
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(
            Tensor::new(vec![2, 2], vec![0.3, -1.2, 0.7, 0.05])
                .unwrap()
                .with_grad(true),
        );
        let b = tape.leaf(Tensor::new(vec![2], vec![0.1, -0.2]).unwrap());
        let x = tape.constant(Tensor::new(vec![3, 2], vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap());
        let h = tape.affine(x, w, b).unwrap();
        let h = tape.silu(h).unwrap();
        let l = tape.mean(h).unwrap();
        let again = tape.replay().unwrap();
        assert!(tape.value(l).bit_eq(again.value(l)));
    }
}
