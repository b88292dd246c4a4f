//! Objectives and their stochastic gradient oracles.
//!
//! Parameters are a list of tensors (`[w]` for the convex models,
//! `[W, b]` for softmax regression, `[W1, b1, W2, b2]` for the MLP).

mod linreg;
mod logreg;
mod mlp;
mod quadratic;

pub use linreg::{linreg_grad_sample, linreg_loss, linreg_solve_exact, LinRegDataset, LinRegObjective};
pub use logreg::{logreg_loss_grad, LogRegGrad, LogRegModel, LogRegObjective, MNIST_CLASSES, MNIST_FEATURES};
pub use mlp::{mlp_forward_backward, MlpGrad, MlpModel, MlpObjective};
pub use quadratic::{quadratic_grad_sample, QuadraticObjective};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::quant::QuantizerSpec;
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Quantizer bindings: weights, activations, gradients, backpropagated
/// errors, momentum, and the averaged model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerSet {
    pub weight: QuantizerSpec,
    pub activation: QuantizerSpec,
    pub gradient: QuantizerSpec,
    pub error: QuantizerSpec,
    pub momentum: QuantizerSpec,
    pub average: QuantizerSpec,
}

impl QuantizerSet {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Low-precision weights only (the simple-model setting).
    pub fn weights_only(q: QuantizerSpec) -> Self {
        Self {
            weight: q,
            ..Self::default()
        }
    }

    /// The same policy on every quantizer except the averaged model.
    pub fn all_but_average(q: QuantizerSpec) -> Self {
        Self {
            weight: q,
            activation: q,
            gradient: q,
            error: q,
            momentum: q,
            average: QuantizerSpec::Identity,
        }
    }
}

/// Metrics computed at a checkpoint. Absent values are not applicable to
/// the objective or were not requested.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub dist_sq: Option<f64>,
    pub grad_norm: Option<f64>,
    pub train_err: Option<f64>,
    pub test_err: Option<f64>,
    pub loss: Option<f64>,
}

/// Which of the (possibly costly) metrics to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub grad_norm: bool,
    pub errors: bool,
    pub loss: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            grad_norm: true,
            errors: true,
            loss: true,
        }
    }
}

pub trait Objective: Sync {
    fn name(&self) -> &'static str;

    /// Fresh parameters (before any weight quantization).
    fn init_params(&self, rng: &mut RngStream) -> Vec<Tensor>;

    /// Training-set size, or `None` for objectives without a dataset.
    fn num_examples(&self) -> Option<usize>;

    /// Writes a stochastic gradient for `batch` into `grads` and returns the
    /// batch loss. `noise` feeds gradient noise; `qrng` feeds every rounding
    /// of activations, errors and gradients.
    fn stochastic_grad(
        &self,
        params: &[Tensor],
        batch: &[usize],
        quant: &QuantizerSet,
        noise: &mut RngStream,
        qrng: &mut RngStream,
        grads: &mut [Tensor],
    ) -> Result<f64>;

    /// Exact full-objective gradient in working precision.
    fn full_grad(&self, params: &[Tensor]) -> Result<Vec<Tensor>>;

    /// Full-objective loss in working precision.
    fn loss(&self, params: &[Tensor]) -> Result<f64>;

    /// The minimizer, when known.
    fn optimum(&self) -> Option<&[Tensor]> {
        None
    }

    /// Classification error rates on the training and test sets, in percent.
    fn error_rates(&self, _params: &[Tensor]) -> Result<(Option<f64>, Option<f64>)> {
        Ok((None, None))
    }

    fn evaluate(&self, params: &[Tensor], opts: EvalOptions) -> Result<Metrics> {
        let dist_sq = self.optimum().map(|opt| dist_sq(params, opt));
        let grad_norm = if opts.grad_norm {
            Some(full_grad_norm(self, params)?)
        } else {
            None
        };
        let (train_err, test_err) = if opts.errors {
            self.error_rates(params)?
        } else {
            (None, None)
        };
        let loss = if opts.loss { Some(self.loss(params)?) } else { None };
        Ok(Metrics {
            dist_sq,
            grad_norm,
            train_err,
            test_err,
            loss,
        })
    }
}

/// `‖∇f(params)‖₂` over all parameter tensors.
pub fn full_grad_norm<O: Objective + ?Sized>(objective: &O, params: &[Tensor]) -> Result<f64> {
    let g = objective.full_grad(params)?;
    Ok(g.iter().map(Tensor::norm2_sq).sum::<f64>().sqrt())
}

/// Squared Euclidean distance between two parameter lists.
pub fn dist_sq(a: &[Tensor], b: &[Tensor]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            x.data()
                .iter()
                .zip(y.data())
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
        })
        .sum()
}

pub fn zeros_like(params: &[Tensor]) -> Vec<Tensor> {
    params.iter().map(|p| Tensor::zeros(p.shape())).collect()
}

fn quantize_all(q: &QuantizerSpec, tensors: &mut [Tensor], rng: &mut RngStream) -> Result<()> {
    if q.is_identity() {
        return Ok(());
    }
    for t in tensors {
        q.quantize_in_place(t, rng)?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod fd {
    use super::*;

    /// Central finite-difference gradient of `f` at `params`.
    pub fn numeric_grad(params: &[Tensor], f: impl Fn(&[Tensor]) -> f64) -> Vec<Tensor> {
        let mut work = params.to_vec();
        let mut out = zeros_like(params);
        for k in 0..params.len() {
            for i in 0..params[k].len() {
                let x = params[k].data()[i];
                let h = 1e-5 * x.abs().max(1.0);
                work[k].data_mut()[i] = x + h;
                let fp = f(&work);
                work[k].data_mut()[i] = x - h;
                let fm = f(&work);
                work[k].data_mut()[i] = x;
                out[k].data_mut()[i] = (fp - fm) / (2.0 * h);
            }
        }
        out
    }

    /// Largest relative error `|a - n| / max(|n|, floor)` across all entries.
    pub fn max_rel_err(analytic: &[Tensor], numeric: &[Tensor], floor: f64) -> f64 {
        let scale = numeric
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(floor);
        analytic
            .iter()
            .zip(numeric)
            .flat_map(|(a, n)| a.data().iter().zip(n.data()))
            .map(|(a, n)| (a - n).abs() / n.abs().max(scale * 1e-3))
            .fold(0.0, f64::max)
    }
}
