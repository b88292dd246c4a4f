use std::sync::Arc;

use crate::error::{Error, Result};
use crate::models::{quantize_all, Objective, QuantizerSet};
use crate::rng::RngStream;
use crate::tensor::{dot, Tensor};

/// Design matrix, targets, and the weights that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct LinRegDataset {
    pub x: Tensor,
    pub y: Tensor,
    pub w_init: Tensor,
}

impl LinRegDataset {
    pub fn new(x: Tensor, y: Tensor, w_init: Tensor) -> Result<Self> {
        if x.rank() != 2 || y.rank() != 1 || w_init.rank() != 1 || x.rows() != y.len() || x.cols() != w_init.len() {
            return Err(Error::ShapeMismatch {
                op: "linear regression dataset",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::InvalidArgument("dataset needs n > 0 and d > 0".into()));
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::non_finite("linear regression dataset"));
        }
        Ok(Self { x, y, w_init })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }
}

/// Mean over `batch` of `2(wᵀx_i - y_i) x_i`.
pub fn linreg_grad_sample(data: &LinRegDataset, w: &Tensor, batch: &[usize]) -> Result<Tensor> {
    if w.shape() != [data.d()] {
        return Err(Error::ShapeMismatch {
            op: "linreg_grad_sample",
            left: w.shape().to_vec(),
            right: vec![data.d()],
        });
    }
    let mut g = Tensor::zeros(&[data.d()]);
    grad_into(data, w.data(), batch, g.data_mut())?;
    Ok(g)
}

fn grad_into(data: &LinRegDataset, w: &[f64], batch: &[usize], out: &mut [f64]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = data.n();
    if let Some(&bad) = batch.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!(
            "batch index {bad} out of range for {n} rows"
        )));
    }
    out.fill(0.0);
    let scale = 2.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &i in batch {
        let x = data.x.row(i);
        let r = dot(w, x) - data.y.data()[i];
        loss += r * r;
        let s = scale * r;
        for (o, &xi) in out.iter_mut().zip(x) {
            *o += s * xi;
        }
    }
    Ok(loss / batch.len() as f64)
}

/// `(1/n) Σ (wᵀx_i - y_i)²`
pub fn linreg_loss(data: &LinRegDataset, w: &Tensor) -> f64 {
    let n = data.n();
    (0..n)
        .map(|i| {
            let r = dot(w.data(), data.x.row(i)) - data.y.data()[i];
            r * r
        })
        .sum::<f64>()
        / n as f64
}

/// Least-squares solution of the normal equations `XᵀX w = Xᵀy` by Cholesky.
pub fn linreg_solve_exact(data: &LinRegDataset) -> Result<Tensor> {
    let d = data.d();
    let mut a = data.x.matmul_tn(&data.x)?.into_data();
    let b = data.x.matvec_t(&data.y)?.into_data();
    let max_diag = (0..d).map(|i| a[i * d + i]).fold(0.0f64, f64::max);
    let tol = max_diag * d as f64 * f64::EPSILON;
    // lower factor written into the lower triangle of `a`
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if !(diag > tol) {
            return Err(Error::Singular(format!("XᵀX is not positive definite at pivot {j}")));
        }
        let ljj = diag.sqrt();
        a[j * d + j] = ljj;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / ljj;
        }
    }
    let mut z = b;
    for i in 0..d {
        let mut s = z[i];
        for k in 0..i {
            s -= a[i * d + k] * z[k];
        }
        z[i] = s / a[i * d + i];
    }
    for i in (0..d).rev() {
        let mut s = z[i];
        for k in i + 1..d {
            s -= a[k * d + i] * z[k];
        }
        z[i] = s / a[i * d + i];
    }
    Ok(Tensor::vector(z))
}

/// Linear regression with single-row (or mini-batch) gradient samples.
#[derive(Debug, Clone)]
pub struct LinRegObjective {
    data: Arc<LinRegDataset>,
    w_star: Vec<Tensor>,
    w0: Tensor,
}

impl LinRegObjective {
    /// Solves for the minimizer up front; starts from zeros.
    pub fn new(data: Arc<LinRegDataset>) -> Result<Self> {
        let w_star = linreg_solve_exact(&data)?;
        let w0 = Tensor::zeros(&[data.d()]);
        Ok(Self {
            data,
            w_star: vec![w_star],
            w0,
        })
    }

    pub fn data(&self) -> &LinRegDataset {
        &self.data
    }

    pub fn w_star(&self) -> &Tensor {
        &self.w_star[0]
    }
}

impl Objective for LinRegObjective {
    fn name(&self) -> &'static str {
        "linreg"
    }

    fn init_params(&self, _rng: &mut RngStream) -> Vec<Tensor> {
        vec![self.w0.clone()]
    }

    fn num_examples(&self) -> Option<usize> {
        Some(self.data.n())
    }

    fn stochastic_grad(
        &self,
        params: &[Tensor],
        batch: &[usize],
        quant: &QuantizerSet,
        _noise: &mut RngStream,
        qrng: &mut RngStream,
        grads: &mut [Tensor],
    ) -> Result<f64> {
        let loss = grad_into(&self.data, params[0].data(), batch, grads[0].data_mut())?;
        quantize_all(&quant.gradient, grads, qrng)?;
        Ok(loss)
    }

    fn full_grad(&self, params: &[Tensor]) -> Result<Vec<Tensor>> {
        let all: Vec<usize> = (0..self.data.n()).collect();
        Ok(vec![linreg_grad_sample(&self.data, &params[0], &all)?])
    }

    fn loss(&self, params: &[Tensor]) -> Result<f64> {
        Ok(linreg_loss(&self.data, &params[0]))
    }

    fn optimum(&self) -> Option<&[Tensor]> {
        Some(&self.w_star)
    }
}
