use std::sync::Arc;

use crate::data::MnistDataset;
use crate::error::{Error, Result};
use crate::models::{quantize_all, Objective, QuantizerSet};
use crate::rng::RngStream;
use crate::tensor::{softmax_logloss_slice, Tensor};

pub const MNIST_CLASSES: usize = 10;
pub const MNIST_FEATURES: usize = 784;

/// Multinomial logistic regression `softmax(W x + b)` with an L2 penalty
/// `(λ/2)‖W‖²` on the weights (not the bias).
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub w: Tensor,
    pub b: Tensor,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegGrad {
    pub loss: f64,
    pub gw: Tensor,
    pub gb: Tensor,
}

impl LogRegModel {
    pub fn zeros(classes: usize, features: usize, lambda: f64) -> Result<Self> {
        Self::new(Tensor::zeros(&[classes, features]), Tensor::zeros(&[classes]), lambda)
    }

    pub fn new(w: Tensor, b: Tensor, lambda: f64) -> Result<Self> {
        if w.rank() != 2 || b.shape() != [w.rows()] {
            return Err(Error::ShapeMismatch {
                op: "logistic model",
                left: w.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        if !w.is_finite() || !b.is_finite() {
            return Err(Error::non_finite("logistic model parameters"));
        }
        Ok(Self { w, b, lambda })
    }
}

/// Mean cross-entropy over `batch` plus `(λ/2)‖W‖²`, with gradients.
pub fn logreg_loss_grad(model: &LogRegModel, batch: &[(&[f64], usize)]) -> Result<LogRegGrad> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (k, f) = (model.w.rows(), model.w.cols());
    let mut gw = model.w.scale(model.lambda);
    let mut gb = Tensor::zeros(&[k]);
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut logits = vec![0.0; k];
    for &(x, label) in batch {
        if x.len() != f {
            return Err(Error::ShapeMismatch {
                op: "logreg_loss_grad",
                left: vec![x.len()],
                right: vec![f],
            });
        }
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        for (c, z) in logits.iter_mut().enumerate() {
            *z = crate::tensor::dot(model.w.row(c), x) + model.b.data()[c];
        }
        let (l, d) = softmax_logloss_slice(&logits, label);
        loss += l;
        for c in 0..k {
            let s = inv * d[c];
            gb.data_mut()[c] += s;
            for (g, &xi) in gw.data_mut()[c * f..(c + 1) * f].iter_mut().zip(x) {
                *g += s * xi;
            }
        }
    }
    loss = loss * inv + 0.5 * model.lambda * model.w.norm2_sq();
    Ok(LogRegGrad { loss, gw, gb })
}

/// Nonzero pixel positions per example.
#[derive(Debug, Clone)]
struct SparseRows {
    offsets: Vec<usize>,
    cols: Vec<u16>,
}

impl SparseRows {
    fn build(images: &Tensor) -> Self {
        let mut offsets = Vec::with_capacity(images.rows() + 1);
        let mut cols = Vec::new();
        offsets.push(0);
        for i in 0..images.rows() {
            for (j, &v) in images.row(i).iter().enumerate() {
                if v != 0.0 {
                    cols.push(j as u16);
                }
            }
            offsets.push(cols.len());
        }
        Self { offsets, cols }
    }

    fn row(&self, i: usize) -> &[u16] {
        &self.cols[self.offsets[i]..self.offsets[i + 1]]
    }
}

struct Split {
    data: Arc<MnistDataset>,
    sparse: SparseRows,
}

/// Softmax regression on an image dataset, parameters `[W, b]`, zero init.
pub struct LogRegObjective {
    train: Split,
    test: Option<Split>,
    lambda: f64,
    classes: usize,
}

impl std::fmt::Debug for LogRegObjective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogRegObjective")
            .field("train", &self.train.data.len())
            .field("test", &self.test.as_ref().map(|s| s.data.len()))
            .field("lambda", &self.lambda)
            .finish()
    }
}

impl LogRegObjective {
    pub fn new(train: Arc<MnistDataset>, test: Option<Arc<MnistDataset>>, lambda: f64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        if let Some(t) = &test {
            if t.features() != train.features() {
                return Err(Error::ShapeMismatch {
                    op: "logistic test set",
                    left: t.images.shape().to_vec(),
                    right: train.images.shape().to_vec(),
                });
            }
        }
        let classes = MNIST_CLASSES;
        let wrap = |data: Arc<MnistDataset>| Split {
            sparse: SparseRows::build(&data.images),
            data,
        };
        Ok(Self {
            train: wrap(train),
            test: test.map(wrap),
            lambda,
            classes,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn features(&self) -> usize {
        self.train.data.features()
    }

    fn logits(&self, split: &Split, i: usize, w: &Tensor, b: &Tensor, out: &mut [f64]) {
        let x = split.data.image(i);
        let f = self.features();
        let wd = w.data();
        for (c, z) in out.iter_mut().enumerate() {
            let row = &wd[c * f..(c + 1) * f];
            let mut s = b.data()[c];
            for &j in split.sparse.row(i) {
                s += row[j as usize] * x[j as usize];
            }
            *z = s;
        }
    }

    fn error_rate(&self, split: &Split, params: &[Tensor]) -> f64 {
        let mut logits = vec![0.0; self.classes];
        let mut wrong = 0usize;
        for i in 0..split.data.len() {
            self.logits(split, i, &params[0], &params[1], &mut logits);
            // first maximal logit wins ties
            let mut best = 0;
            for c in 1..self.classes {
                if logits[c] > logits[best] {
                    best = c;
                }
            }
            if best != split.data.labels[i] as usize {
                wrong += 1;
            }
        }
        100.0 * wrong as f64 / split.data.len() as f64
    }

    /// Adds the batch-mean data term to `gw`, `gb` (already holding the
    /// penalty) and returns the mean cross-entropy.
    fn accumulate(&self, params: &[Tensor], batch: &[usize], gw: &mut [f64], gb: &mut [f64]) -> Result<f64> {
        let f = self.features();
        let inv = 1.0 / batch.len() as f64;
        let mut logits = vec![0.0; self.classes];
        let mut loss = 0.0;
        for &i in batch {
            if i >= self.train.data.len() {
                return Err(Error::InvalidArgument(format!("batch index {i} out of range")));
            }
            self.logits(&self.train, i, &params[0], &params[1], &mut logits);
            let label = self.train.data.labels[i] as usize;
            let (l, d) = softmax_logloss_slice(&logits, label);
            if !l.is_finite() {
                return Err(Error::non_finite("logistic loss"));
            }
            loss += l;
            let x = self.train.data.image(i);
            for c in 0..self.classes {
                let s = inv * d[c];
                gb[c] += s;
                let row = &mut gw[c * f..(c + 1) * f];
                for &j in self.train.sparse.row(i) {
                    row[j as usize] += s * x[j as usize];
                }
            }
        }
        Ok(loss * inv)
    }
}

impl Objective for LogRegObjective {
    fn name(&self) -> &'static str {
        "logreg"
    }

    fn init_params(&self, _rng: &mut RngStream) -> Vec<Tensor> {
        vec![
            Tensor::zeros(&[self.classes, self.features()]),
            Tensor::zeros(&[self.classes]),
        ]
    }

    fn num_examples(&self) -> Option<usize> {
        Some(self.train.data.len())
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
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let (gw, rest) = grads.split_at_mut(1);
        let gw = gw[0].data_mut();
        for (g, &w) in gw.iter_mut().zip(params[0].data()) {
            *g = self.lambda * w;
        }
        let gb = rest[0].data_mut();
        gb.fill(0.0);
        let loss = self.accumulate(params, batch, gw, gb)?;
        quantize_all(&quant.gradient, grads, qrng)?;
        Ok(loss + 0.5 * self.lambda * params[0].norm2_sq())
    }

    fn full_grad(&self, params: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut gw = params[0].scale(self.lambda);
        let mut gb = Tensor::zeros(&[self.classes]);
        let all: Vec<usize> = (0..self.train.data.len()).collect();
        self.accumulate(params, &all, gw.data_mut(), gb.data_mut())?;
        Ok(vec![gw, gb])
    }

    fn loss(&self, params: &[Tensor]) -> Result<f64> {
        let mut logits = vec![0.0; self.classes];
        let n = self.train.data.len();
        let mut total = 0.0;
        for i in 0..n {
            self.logits(&self.train, i, &params[0], &params[1], &mut logits);
            total += softmax_logloss_slice(&logits, self.train.data.labels[i] as usize).0;
        }
        Ok(total / n as f64 + 0.5 * self.lambda * params[0].norm2_sq())
    }

    fn error_rates(&self, params: &[Tensor]) -> Result<(Option<f64>, Option<f64>)> {
        let train = self.error_rate(&self.train, params);
        let test = self.test.as_ref().map(|t| self.error_rate(t, params));
        Ok((Some(train), test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split as DataSplit;
    use crate::models::{fd, full_grad_norm, zeros_like};

    fn fixture(n: usize, features: usize, seed: u64) -> MnistDataset {
        let mut rng = RngStream::new(seed);
        let data = (0..n * features)
            .map(|_| if rng.uniform() < 0.4 { 0.0 } else { rng.uniform() })
            .collect();
        MnistDataset {
            images: Tensor::matrix(n, features, data).unwrap(),
            labels: (0..n).map(|i| (i % 10) as u8).collect(),
            split: DataSplit::Train,
        }
    }

    #[test]
    fn zero_weights_give_ln_ten() {
        let m = LogRegModel::zeros(10, 4, 1e-4).unwrap();
        let x = [0.2, 0.0, 1.0, 0.5];
        let g = logreg_loss_grad(&m, &[(&x, 3), (&x, 7)]).unwrap();
        assert!((g.loss - 10f64.ln()).abs() < 1e-15);
        assert!(matches!(logreg_loss_grad(&m, &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn penalty_difference_is_exact() {
        let mut rng = RngStream::new(1);
        let w = Tensor::matrix(10, 3, (0..30).map(|_| rng.normal()).collect()).unwrap();
        let b = Tensor::vector((0..10).map(|_| rng.normal()).collect());
        let x = [0.1, 0.7, 0.3];
        let with = LogRegModel::new(w.clone(), b.clone(), 1e-4).unwrap();
        let without = LogRegModel::new(w.clone(), b, 0.0).unwrap();
        let l1 = logreg_loss_grad(&with, &[(&x, 2)]).unwrap();
        let l0 = logreg_loss_grad(&without, &[(&x, 2)]).unwrap();
        assert!((l1.loss - l0.loss - 0.5e-4 * w.norm2_sq()).abs() < 1e-15);
        assert_eq!(l1.gb, l0.gb);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngStream::new(2);
        let features = 5;
        let w = Tensor::matrix(10, features, (0..10 * features).map(|_| 0.3 * rng.normal()).collect()).unwrap();
        let b = Tensor::vector((0..10).map(|_| 0.1 * rng.normal()).collect());
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..features).map(|_| rng.uniform()).collect()).collect();
        let batch: Vec<(&[f64], usize)> = vec![(&xs[0], 1), (&xs[1], 4), (&xs[2], 9)];
        let loss = |p: &[Tensor]| {
            let m = LogRegModel::new(p[0].clone(), p[1].clone(), 0.01).unwrap();
            logreg_loss_grad(&m, &batch).unwrap().loss
        };
        let params = vec![w.clone(), b.clone()];
        let g = logreg_loss_grad(&LogRegModel::new(w, b, 0.01).unwrap(), &batch).unwrap();
        let num = fd::numeric_grad(&params, loss);
        assert!(fd::max_rel_err(&[g.gw, g.gb], &num, 1e-8) < 1e-6);
    }

    #[test]
    fn objective_agrees_with_reference_function() {
        let ds = Arc::new(fixture(30, 12, 3));
        let obj = LogRegObjective::new(ds.clone(), None, 1e-3).unwrap();
        let mut rng = RngStream::new(4);
        let params = vec![
            Tensor::matrix(10, 12, (0..120).map(|_| 0.2 * rng.normal()).collect()).unwrap(),
            Tensor::vector((0..10).map(|_| 0.2 * rng.normal()).collect()),
        ];
        let model = LogRegModel::new(params[0].clone(), params[1].clone(), 1e-3).unwrap();
        let idx = [3usize, 17, 4];
        let batch: Vec<(&[f64], usize)> = idx.iter().map(|&i| (ds.image(i), ds.labels[i] as usize)).collect();
        let reference = logreg_loss_grad(&model, &batch).unwrap();
        let mut grads = zeros_like(&params);
        let (mut r1, mut r2) = (RngStream::new(0), RngStream::new(0));
        let loss = obj
            .stochastic_grad(&params, &idx, &QuantizerSet::identity(), &mut r1, &mut r2, &mut grads)
            .unwrap();
        assert!((loss - reference.loss).abs() < 1e-12);
        for (a, b) in grads[0].data().iter().zip(reference.gw.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in grads[1].data().iter().zip(reference.gb.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let num = fd::numeric_grad(&params, |p| obj.loss(p).unwrap());
        let full = obj.full_grad(&params).unwrap();
        assert!(fd::max_rel_err(&full, &num, 1e-8) < 1e-5);
    }

    #[test]
    fn grad_norm_at_zero_by_brute_force() {
        // four examples, two features, balanced over labels 0 and 1
        let ds = MnistDataset {
            images: Tensor::matrix(4, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 1.0, 1.0]).unwrap(),
            labels: vec![0, 1, 0, 1],
            split: DataSplit::Train,
        };
        let obj = LogRegObjective::new(Arc::new(ds.clone()), None, 1e-4).unwrap();
        let params = obj.init_params(&mut RngStream::new(0));
        let mut sq = 0.0;
        for c in 0..10 {
            let mut gb = 0.0;
            let mut gw = [0.0; 2];
            for i in 0..4 {
                let r = 0.1 - if ds.labels[i] as usize == c { 1.0 } else { 0.0 };
                gb += r / 4.0;
                for j in 0..2 {
                    gw[j] += r * ds.image(i)[j] / 4.0;
                }
            }
            sq += gb * gb + gw[0] * gw[0] + gw[1] * gw[1];
        }
        let got = full_grad_norm(&obj, &params).unwrap();
        assert!((got - sq.sqrt()).abs() < 1e-14, "{got} vs {}", sq.sqrt());
        assert!((obj.loss(&params).unwrap() - 10f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn error_rate_counts_mistakes() {
        let ds = Arc::new(fixture(20, 4, 5));
        let obj = LogRegObjective::new(ds, None, 0.0).unwrap();
        let mut params = obj.init_params(&mut RngStream::new(0));
        // all logits equal: class 0 predicted, labels cycle 0..9
        assert_eq!(obj.error_rates(&params).unwrap(), (Some(90.0), None));
        params[1].data_mut()[3] = 1.0;
        assert_eq!(obj.error_rates(&params).unwrap().0, Some(90.0));
    }
}
