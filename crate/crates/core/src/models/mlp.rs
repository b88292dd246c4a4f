//! Fully connected ReLU network trained with every number quantized:
//! activations by `Q_A`, backpropagated errors by `Q_E`, weight and bias
//! gradients by `Q_G`. Biases are parameters, so they pass through `Q_W`
//! and `Q_G` but never `Q_A` or `Q_E`.

use std::sync::Arc;

use crate::data::MnistDataset;
use crate::error::{Error, Result};
use crate::models::{Objective, QuantizerSet};
use crate::rng::RngStream;
use crate::tensor::{softmax_logloss_slice, Tensor};

/// Network weights `[W1, b1, W2, b2, ...]` with their quantizer bindings.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub params: Vec<Tensor>,
    pub quant: QuantizerSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    /// Mean cross-entropy of the (quantized) logits.
    pub loss: f64,
    /// Gradients in parameter order.
    pub grads: Vec<Tensor>,
    /// Stored layer outputs `a^(1..=L)` after `Q_A`.
    pub activations: Vec<Tensor>,
}

impl MlpModel {
    /// Uniform `±1/√fan_in` weights and zero biases for `sizes = [in, h.., out]`.
    pub fn init(sizes: &[usize], quant: QuantizerSet, rng: &mut RngStream) -> Result<Self> {
        Ok(Self {
            params: init_layers(sizes, rng)?,
            quant,
        })
    }

    pub fn layers(&self) -> usize {
        self.params.len() / 2
    }
}

fn init_layers(sizes: &[usize], rng: &mut RngStream) -> Result<Vec<Tensor>> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
    }
    let mut params = Vec::new();
    for pair in sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let r = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.uniform_range(-r, r)).collect();
        params.push(Tensor::matrix(fan_out, fan_in, w)?);
        params.push(Tensor::zeros(&[fan_out]));
    }
    Ok(params)
}

fn check_params(params: &[Tensor], inputs: usize) -> Result<()> {
    if params.is_empty() || !params.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument("MLP parameters come in (W, b) pairs".into()));
    }
    let mut width = inputs;
    for (l, pair) in params.chunks(2).enumerate() {
        let (w, b) = (&pair[0], &pair[1]);
        if w.rank() != 2 || w.cols() != width || b.shape() != [w.rows()] {
            return Err(Error::ShapeMismatch {
                op: if l == 0 { "mlp layer 1" } else { "mlp layer chain" },
                left: w.shape().to_vec(),
                right: vec![width],
            });
        }
        width = w.rows();
    }
    Ok(())
}

fn finite_or(t: &Tensor, what: impl FnOnce() -> String) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::non_finite(what()))
    }
}

/// One quantized forward/backward pass over the rows of `x`.
pub fn mlp_forward_backward(model: &MlpModel, x: &Tensor, labels: &[usize], rng: &mut RngStream) -> Result<MlpGrad> {
    forward_backward(&model.params, &model.quant, x, labels, rng)
}

fn forward_backward(
    params: &[Tensor],
    quant: &QuantizerSet,
    x: &Tensor,
    labels: &[usize],
    rng: &mut RngStream,
) -> Result<MlpGrad> {
    if x.rank() != 2 || x.rows() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "mlp batch",
            left: x.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_params(params, x.cols())?;
    let layers = params.len() / 2;
    let batch = labels.len();

    // forward: pre-activations z^(l) and stored outputs a^(l)
    let mut pre = Vec::with_capacity(layers);
    let mut acts: Vec<Tensor> = Vec::with_capacity(layers);
    for l in 0..layers {
        let (w, b) = (&params[2 * l], &params[2 * l + 1]);
        let input = if l == 0 { x } else { &acts[l - 1] };
        let mut z = input.matmul_nt(w)?;
        let width = w.rows();
        for row in z.data_mut().chunks_mut(width) {
            for (v, &bi) in row.iter_mut().zip(b.data()) {
                *v += bi;
            }
        }
        finite_or(&z, || format!("layer {} forward", l + 1))?;
        let mut a = z.clone();
        if l + 1 < layers {
            for v in a.data_mut() {
                *v = v.max(0.0);
            }
        }
        quant.activation.quantize_in_place(&mut a, rng)?;
        pre.push(z);
        acts.push(a);
    }

    // loss on the stored logits; the output error is left unquantized
    let logits = &acts[layers - 1];
    let classes = logits.cols();
    let inv = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut err = Tensor::zeros(&[batch, classes]);
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let (l, d) = softmax_logloss_slice(logits.row(i), label);
        loss += l;
        for (e, dv) in err.data_mut()[i * classes..(i + 1) * classes].iter_mut().zip(d) {
            *e = dv * inv;
        }
    }
    loss *= inv;
    if !loss.is_finite() {
        return Err(Error::non_finite(format!("layer {layers} loss")));
    }

    // backward
    let mut grads = vec![Tensor::zeros(&[0]); params.len()];
    for l in (0..layers).rev() {
        if l + 1 < layers {
            for (e, &z) in err.data_mut().iter_mut().zip(pre[l].data()) {
                if z <= 0.0 {
                    *e = 0.0;
                }
            }
        }
        let input = if l == 0 { x } else { &acts[l - 1] };
        let mut gw = err.matmul_tn(input)?;
        let mut gb = err.sum_rows();
        finite_or(&gw, || format!("layer {} weight gradient", l + 1))?;
        quant.gradient.quantize_in_place(&mut gw, rng)?;
        quant.gradient.quantize_in_place(&mut gb, rng)?;
        if l > 0 {
            let mut prev = err.matmul(&params[2 * l])?;
            finite_or(&prev, || format!("layer {} backward error", l + 1))?;
            quant.error.quantize_in_place(&mut prev, rng)?;
            err = prev;
        }
        grads[2 * l] = gw;
        grads[2 * l + 1] = gb;
    }
    Ok(MlpGrad {
        loss,
        grads,
        activations: acts,
    })
}

/// Unquantized forward pass returning the logits.
fn forward_plain(params: &[Tensor], x: &Tensor) -> Result<Tensor> {
    let layers = params.len() / 2;
    let mut a = x.clone();
    for l in 0..layers {
        let (w, b) = (&params[2 * l], &params[2 * l + 1]);
        let mut z = a.matmul_nt(w)?;
        for row in z.data_mut().chunks_mut(w.rows()) {
            for (v, &bi) in row.iter_mut().zip(b.data()) {
                *v += bi;
                if l + 1 < layers {
                    *v = v.max(0.0);
                }
            }
        }
        a = z;
    }
    Ok(a)
}

fn gather(ds: &MnistDataset, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let f = ds.features();
    let mut data = Vec::with_capacity(idx.len() * f);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        if i >= ds.len() {
            return Err(Error::InvalidArgument(format!("batch index {i} out of range")));
        }
        data.extend_from_slice(ds.image(i));
        labels.push(ds.labels[i] as usize);
    }
    Ok((Tensor::matrix(idx.len(), f, data)?, labels))
}

const EVAL_CHUNK: usize = 1000;

/// Classifier objective over an image dataset. Evaluation (loss, gradient
/// norm, error rates) runs in working precision.
pub struct MlpObjective {
    train: Arc<MnistDataset>,
    test: Option<Arc<MnistDataset>>,
    sizes: Vec<usize>,
}

impl std::fmt::Debug for MlpObjective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MlpObjective")
            .field("train", &self.train.len())
            .field("sizes", &self.sizes)
            .finish()
    }
}

impl MlpObjective {
    /// `hidden` lists the hidden widths; output width is 10.
    pub fn new(train: Arc<MnistDataset>, test: Option<Arc<MnistDataset>>, hidden: &[usize]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let mut sizes = vec![train.features()];
        sizes.extend_from_slice(hidden);
        sizes.push(super::MNIST_CLASSES);
        Ok(Self { train, test, sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn chunks(&self, ds: &MnistDataset) -> impl Iterator<Item = Vec<usize>> {
        let n = ds.len();
        (0..n.div_ceil(EVAL_CHUNK)).map(move |c| (c * EVAL_CHUNK..((c + 1) * EVAL_CHUNK).min(n)).collect())
    }

    fn error_rate(&self, ds: &MnistDataset, params: &[Tensor]) -> Result<f64> {
        let mut wrong = 0usize;
        for idx in self.chunks(ds) {
            let (x, labels) = gather(ds, &idx)?;
            let logits = forward_plain(params, &x)?;
            for (i, &label) in labels.iter().enumerate() {
                let row = logits.row(i);
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                if best != label {
                    wrong += 1;
                }
            }
        }
        Ok(100.0 * wrong as f64 / ds.len() as f64)
    }
}

impl Objective for MlpObjective {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn init_params(&self, rng: &mut RngStream) -> Vec<Tensor> {
        init_layers(&self.sizes, rng).expect("sizes validated at construction")
    }

    fn num_examples(&self) -> Option<usize> {
        Some(self.train.len())
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
        let (x, labels) = gather(&self.train, batch)?;
        let out = forward_backward(params, quant, &x, &labels, qrng)?;
        for (g, o) in grads.iter_mut().zip(out.grads) {
            *g = o;
        }
        Ok(out.loss)
    }

    fn full_grad(&self, params: &[Tensor]) -> Result<Vec<Tensor>> {
        let n = self.train.len() as f64;
        let mut total: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut rng = RngStream::new(0);
        let identity = QuantizerSet::identity();
        for idx in self.chunks(&self.train) {
            let (x, labels) = gather(&self.train, &idx)?;
            let out = forward_backward(params, &identity, &x, &labels, &mut rng)?;
            let w = idx.len() as f64 / n;
            for (t, g) in total.iter_mut().zip(&out.grads) {
                t.add_scaled(w, g)?;
            }
        }
        Ok(total)
    }

    fn loss(&self, params: &[Tensor]) -> Result<f64> {
        let mut total = 0.0;
        for idx in self.chunks(&self.train) {
            let (x, labels) = gather(&self.train, &idx)?;
            let logits = forward_plain(params, &x)?;
            for (i, &label) in labels.iter().enumerate() {
                total += softmax_logloss_slice(logits.row(i), label).0;
            }
        }
        Ok(total / self.train.len() as f64)
    }

    fn error_rates(&self, params: &[Tensor]) -> Result<(Option<f64>, Option<f64>)> {
        let train = self.error_rate(&self.train, params)?;
        let test = match &self.test {
            Some(t) => Some(self.error_rate(t, params)?),
            None => None,
        };
        Ok((Some(train), test))
    }
}
