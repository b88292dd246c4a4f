use crate::error::{Error, Result};
use crate::models::{quantize_all, Objective, QuantizerSet};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// `f(w) = ½ (w - w*)ᵀ A (w - w*)` with additive Gaussian gradient noise.
///
/// `noise_sigma` is the root-mean-square norm of the noise vector: each
/// coordinate draws `σ/√d · z`, so `E‖∇f̃ - ∇f‖² = σ²`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    a: Tensor,
    w_star: Vec<Tensor>,
    mu: f64,
    noise_sigma: f64,
    w0: Tensor,
    diagonal: Option<Vec<f64>>,
}

impl QuadraticObjective {
    pub fn new(a: Tensor, w_star: Tensor, mu: f64, noise_sigma: f64) -> Result<Self> {
        let d = w_star.len();
        if a.shape() != [d, d] || w_star.rank() != 1 || d == 0 {
            return Err(Error::ShapeMismatch {
                op: "quadratic objective",
                left: a.shape().to_vec(),
                right: w_star.shape().to_vec(),
            });
        }
        if !(mu > 0.0) || !(noise_sigma >= 0.0) || !a.is_finite() || !w_star.is_finite() {
            return Err(Error::InvalidArgument(
                "quadratic needs finite A, w*, mu > 0 and sigma >= 0".into(),
            ));
        }
        for i in 0..d {
            for j in 0..i {
                if a.data()[i * d + j] != a.data()[j * d + i] {
                    return Err(Error::InvalidArgument("A must be symmetric".into()));
                }
            }
        }
        let is_diag = (0..d).all(|i| (0..d).all(|j| i == j || a.data()[i * d + j] == 0.0));
        let diagonal = is_diag.then(|| (0..d).map(|i| a.data()[i * d + i]).collect::<Vec<_>>());
        if let Some(diag) = &diagonal {
            if diag.iter().any(|&l| l < mu) {
                return Err(Error::InvalidArgument(format!(
                    "smallest eigenvalue of A is below mu = {mu}"
                )));
            }
        }
        Ok(Self {
            a,
            w0: Tensor::zeros(&[d]),
            w_star: vec![w_star],
            mu,
            noise_sigma,
            diagonal,
        })
    }

    /// `A = diag(eigs)`, `μ = min(eigs)`.
    pub fn diagonal(eigs: &[f64], w_star: Tensor, noise_sigma: f64) -> Result<Self> {
        let d = eigs.len();
        let mut a = Tensor::zeros(&[d, d]);
        for (i, &l) in eigs.iter().enumerate() {
            a.data_mut()[i * d + i] = l;
        }
        let mu = eigs.iter().copied().fold(f64::INFINITY, f64::min);
        Self::new(a, w_star, mu, noise_sigma)
    }

    /// Starting point returned by `init_params` (zeros by default).
    pub fn with_init(mut self, w0: Tensor) -> Result<Self> {
        if w0.shape() != self.w_star[0].shape() {
            return Err(Error::ShapeMismatch {
                op: "quadratic init",
                left: w0.shape().to_vec(),
                right: self.w_star[0].shape().to_vec(),
            });
        }
        self.w0 = w0;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.w_star[0].len()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn a(&self) -> &Tensor {
        &self.a
    }

    pub fn w_star(&self) -> &Tensor {
        &self.w_star[0]
    }

    /// Largest eigenvalue for diagonal `A`, else the Frobenius norm (an
    /// upper bound on the spectral norm).
    pub fn spectral_norm_bound(&self) -> f64 {
        match &self.diagonal {
            Some(diag) => diag.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            None => self.a.norm2_sq().sqrt(),
        }
    }

    fn exact_grad_into(&self, w: &[f64], out: &mut [f64]) {
        let ws = self.w_star[0].data();
        match &self.diagonal {
            Some(diag) => {
                for i in 0..w.len() {
                    out[i] = diag[i] * (w[i] - ws[i]);
                }
            }
            None => {
                let diff: Vec<f64> = w.iter().zip(ws).map(|(a, b)| a - b).collect();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = crate::tensor::dot(self.a.row(i), &diff);
                }
            }
        }
    }
}

/// `A(w - w*) + (σ/√d)·z` with `z` standard normal, one draw per coordinate.
pub fn quadratic_grad_sample(obj: &QuadraticObjective, w: &Tensor, rng: &mut RngStream) -> Result<Tensor> {
    if w.shape() != obj.w_star().shape() {
        return Err(Error::ShapeMismatch {
            op: "quadratic_grad_sample",
            left: w.shape().to_vec(),
            right: obj.w_star().shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(w.shape());
    sample_into(obj, w.data(), rng, out.data_mut());
    Ok(out)
}

fn sample_into(obj: &QuadraticObjective, w: &[f64], rng: &mut RngStream, out: &mut [f64]) {
    obj.exact_grad_into(w, out);
    if obj.noise_sigma > 0.0 {
        let s = obj.noise_sigma / (w.len() as f64).sqrt();
        for o in out.iter_mut() {
            *o += s * rng.normal();
        }
    }
}

impl Objective for QuadraticObjective {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn init_params(&self, _rng: &mut RngStream) -> Vec<Tensor> {
        vec![self.w0.clone()]
    }

    fn num_examples(&self) -> Option<usize> {
        None
    }

    fn stochastic_grad(
        &self,
        params: &[Tensor],
        _batch: &[usize],
        quant: &QuantizerSet,
        noise: &mut RngStream,
        qrng: &mut RngStream,
        grads: &mut [Tensor],
    ) -> Result<f64> {
        let w = params[0].data();
        sample_into(self, w, noise, grads[0].data_mut());
        quantize_all(&quant.gradient, grads, qrng)?;
        Ok(f64::NAN)
    }

    fn full_grad(&self, params: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut g = Tensor::zeros(params[0].shape());
        self.exact_grad_into(params[0].data(), g.data_mut());
        Ok(vec![g])
    }

    fn loss(&self, params: &[Tensor]) -> Result<f64> {
        let g = self.full_grad(params)?;
        let diff = params[0].sub(self.w_star())?;
        Ok(0.5 * diff.dot(&g[0])?)
    }

    fn optimum(&self) -> Option<&[Tensor]> {
        Some(&self.w_star)
    }
}
