//! Dense row-major `f64` tensors with the handful of linear-algebra kernels
//! the models need. Rank 1 and rank 2 only in practice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            _ => 1,
        }
    }

    /// Row `i` of a matrix.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    fn check_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, a: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| a * v).collect(),
        }
    }

    /// `a * x + y`
    pub fn axpy(a: f64, x: &Tensor, y: &Tensor) -> Result<Tensor> {
        x.zip_with(y, "axpy", |xi, yi| a * xi + yi)
    }

    /// In-place `self += a * x`.
    pub fn add_scaled(&mut self, a: f64, x: &Tensor) -> Result<()> {
        self.check_same(x, "add_scaled")?;
        for (s, &xi) in self.data.iter_mut().zip(&x.data) {
            *s += a * xi;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same(other, "dot")?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm2_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `A x` for `A: [r, c]`, `x: [c]`.
    pub fn matvec(&self, x: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || x.rank() != 1 || self.cols() != x.len() {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                left: self.shape.clone(),
                right: x.shape.clone(),
            });
        }
        let out = (0..self.rows()).map(|i| dot(self.row(i), &x.data)).collect();
        Ok(Tensor::vector(out))
    }

    /// `Aᵀ y` for `A: [r, c]`, `y: [r]`.
    pub fn matvec_t(&self, y: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || y.rank() != 1 || self.rows() != y.len() {
            return Err(Error::ShapeMismatch {
                op: "matvec_t",
                left: self.shape.clone(),
                right: y.shape.clone(),
            });
        }
        let mut out = vec![0.0; self.cols()];
        for (i, &yi) in y.data.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * yi;
            }
        }
        Ok(Tensor::vector(out))
    }

    /// `A B` for `A: [m, k]`, `B: [k, n]`.
    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || b.rank() != 2 || self.cols() != b.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: b.shape.clone(),
            });
        }
        let (m, n) = (self.rows(), b.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &bv) in orow.iter_mut().zip(b.row(k)) {
                    *o += a * bv;
                }
            }
        }
        Tensor::matrix(m, n, out)
    }

    /// `A Bᵀ` for `A: [m, k]`, `B: [n, k]`.
    pub fn matmul_nt(&self, b: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || b.rank() != 2 || self.cols() != b.cols() {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                left: self.shape.clone(),
                right: b.shape.clone(),
            });
        }
        let (m, n) = (self.rows(), b.rows());
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let arow = self.row(i);
            for j in 0..n {
                out.push(dot(arow, b.row(j)));
            }
        }
        Tensor::matrix(m, n, out)
    }

    /// `Aᵀ B` for `A: [k, m]`, `B: [k, n]`.
    pub fn matmul_tn(&self, b: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || b.rank() != 2 || self.rows() != b.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul_tn",
                left: self.shape.clone(),
                right: b.shape.clone(),
            });
        }
        let (m, n) = (self.cols(), b.cols());
        let mut out = vec![0.0; m * n];
        for k in 0..self.rows() {
            let brow = b.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        Tensor::matrix(m, n, out)
    }

    /// Column sums of a matrix.
    pub fn sum_rows(&self) -> Tensor {
        let c = self.cols();
        let mut out = vec![0.0; c];
        for i in 0..self.rows() {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        Tensor::vector(out)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cross-entropy of one example and its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct LogLoss {
    pub loss: f64,
    pub dlogits: Tensor,
}

/// `-log softmax(logits)[label]` via a max-shifted log-sum-exp, with
/// gradient `softmax(logits) - onehot(label)`.
pub fn softmax_logloss(logits: &Tensor, label: usize) -> Result<LogLoss> {
    let k = logits.len();
    if label >= k {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let (loss, d) = softmax_logloss_slice(logits.data(), label);
    Ok(LogLoss {
        loss,
        dlogits: Tensor {
            shape: logits.shape.clone(),
            data: d,
        },
    })
}

pub(crate) fn softmax_logloss_slice(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    let lse = max + total.ln();
    for p in probs.iter_mut() {
        *p /= total;
    }
    let loss = lse - logits[label];
    probs[label] -= 1.0;
    (loss, probs)
}
