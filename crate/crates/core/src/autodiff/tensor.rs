use std::fmt::Debug;

use crate::error::{Error, Result};

/// Scalar element type of a tensor. Production code runs on `f32`; `f64` is
/// used by the finite-difference oracle.
pub trait Real:
    num_traits::Float + std::iter::Sum + Default + Debug + Send + Sync + 'static
{
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C = A·B` for an `m×k` A and `k×n` B given as (row, column) strides;
    /// `c` is row-major `m×n` and is overwritten.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_strides: (usize, usize), b: &[Self], b_strides: (usize, usize), c: &mut [Self]);
}

macro_rules! gemm_via {
    ($f:ident) => {
        fn gemm(m: usize, k: usize, n: usize, a: &[Self], (rsa, csa): (usize, usize), b: &[Self], (rsb, csb): (usize, usize), c: &mut [Self]) {
            assert!(c.len() >= m * n);
            if m == 0 || n == 0 {
                return;
            }
            if k == 0 {
                c[..m * n].fill(0.0);
                return;
            }
            assert!(a.len() > (m - 1) * rsa + (k - 1) * csa && b.len() > (k - 1) * rsb + (n - 1) * csb);
            // SAFETY: the asserts above keep every strided access in bounds.
            unsafe {
                matrixmultiply::$f(
                    m, k, n, 1.0,
                    a.as_ptr(), rsa as isize, csa as isize,
                    b.as_ptr(), rsb as isize, csb as isize,
                    0.0, c.as_mut_ptr(), n as isize, 1,
                );
            }
        }
    };
}

impl Real for f32 {
    gemm_via!(sgemm);

    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    gemm_via!(dgemm);

    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major array. A scalar has an empty shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    pub requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                shapes: vec![shape, vec![data.len()]],
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
            requires_grad: false,
        }
    }

    pub fn scalar(x: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![x],
            requires_grad: false,
        }
    }

    pub fn from_rows(rows: &[[T; 2]]) -> Self {
        Self {
            shape: vec![rows.len(), 2],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Columns of a 2-D tensor (length of a vector).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: self.requires_grad,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// `true` when shapes match and every element has the same bit pattern.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

impl Tensor<f32> {
    /// Writes the payload as little-endian bytes.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// `(n×k)·(k×m)` into a fresh buffer.
pub(crate) fn matmul_raw<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    T::gemm(n, k, m, a, (k, 1), b, (m, 1), &mut out);
    out
}

/// `aᵀ·b` for `a: n×k`, `b: n×m` → `k×m`.
pub(crate) fn matmul_tn<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * m];
    T::gemm(k, n, m, a, (1, k), b, (m, 1), &mut out);
    out
}

/// `a·bᵀ` for `a: n×m`, `b: k×m` → `n×k`.
pub(crate) fn matmul_nt<T: Real>(a: &[T], b: &[T], n: usize, m: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * k];
    T::gemm(n, m, k, a, (m, 1), b, (1, m), &mut out);
    out
}
