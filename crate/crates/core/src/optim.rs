//! Low-precision SGD, SGD with momentum, and stochastic weight averaging of
//! the low-precision iterates (optionally with a quantized average).

use serde::{Deserialize, Serialize};

use crate::data::BatchIter;
use crate::error::{Error, Result};
use crate::models::{EvalOptions, Metrics, Objective, QuantizerSet};
use crate::quant::QuantizerSpec;
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Learning rate as a function of the 1-based step `t` and warm-up length `S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant {
        alpha: f64,
    },
    /// `alpha1` for the first half of warm-up, linear decay to
    /// `floor * alpha1` at 90% of warm-up, constant after that; `alpha_swa`
    /// once averaging has started.
    WarmupLinear {
        alpha1: f64,
        alpha_swa: f64,
        #[serde(default = "default_floor")]
        floor: f64,
    },
}

fn default_floor() -> f64 {
    0.01
}

impl LrSchedule {
    pub fn alpha(&self, t: usize, warmup: usize) -> f64 {
        match *self {
            LrSchedule::Constant { alpha } => alpha,
            LrSchedule::WarmupLinear {
                alpha1,
                alpha_swa,
                floor,
            } => {
                if t > warmup || warmup == 0 {
                    return alpha_swa;
                }
                let u = t as f64 / warmup as f64;
                if u <= 0.5 {
                    alpha1
                } else if u <= 0.9 {
                    alpha1 * (1.0 - (1.0 - floor) * (u - 0.5) / 0.4)
                } else {
                    alpha1 * floor
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant { alpha } => alpha > 0.0 && alpha.is_finite(),
            LrSchedule::WarmupLinear {
                alpha1,
                alpha_swa,
                floor,
            } => alpha1 > 0.0 && alpha_swa > 0.0 && floor > 0.0 && floor <= 1.0 && alpha1.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("learning rates must be positive: {self:?}")))
        }
    }
}

/// When to evaluate metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckpointPolicy {
    /// Steps `⌈ratio^k⌉` for `k = 0, 1, ...`, plus the final step.
    Geometric {
        ratio: f64,
    },
    Every {
        interval: usize,
    },
    Final,
    At {
        steps: Vec<usize>,
    },
}

impl Default for CheckpointPolicy {
    fn default() -> Self {
        CheckpointPolicy::Geometric { ratio: 1.3 }
    }
}

impl CheckpointPolicy {
    /// Sorted distinct steps in `1..=total`, always including `total`.
    pub fn steps(&self, total: usize) -> Vec<usize> {
        let mut out: Vec<usize> = match self {
            CheckpointPolicy::Geometric { ratio } => {
                let mut v = Vec::new();
                let mut x = 1.0f64;
                while x.ceil() as usize <= total {
                    v.push(x.ceil() as usize);
                    x *= ratio.max(1.0 + 1e-9);
                }
                v
            }
            CheckpointPolicy::Every { interval } => (1..=total).filter(|t| t % interval.max(&1) == 0).collect(),
            CheckpointPolicy::Final => Vec::new(),
            CheckpointPolicy::At { steps } => steps.iter().copied().filter(|&t| t >= 1 && t <= total).collect(),
        };
        out.push(total);
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// An additional averaging state fed by the same trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AveragerSpec {
    pub name: String,
    pub cycle: usize,
    #[serde(default)]
    pub quant: QuantizerSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Total iterations `T`.
    pub steps: usize,
    /// Warm-up iterations `S` before averaging starts.
    pub warmup: usize,
    /// Cycle length `c`: capture every `c` steps after warm-up.
    pub cycle: usize,
    #[serde(default)]
    pub momentum: f64,
    pub schedule: LrSchedule,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub quant: QuantizerSet,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub checkpoints: CheckpointPolicy,
    #[serde(default)]
    pub eval: EvalOptions,
    /// Evaluate the current iterate at checkpoints (the average is always
    /// evaluated once it exists).
    #[serde(default = "yes")]
    pub eval_iterate: bool,
    /// Fail the run if a parameter ever leaves the weight grid.
    #[serde(default)]
    pub verify_grid: bool,
    #[serde(default)]
    pub extra_averagers: Vec<AveragerSpec>,
    /// Name of the primary averager; its rounding stream is derived from it.
    #[serde(default = "default_average_name")]
    pub average_name: String,
}

fn default_average_name() -> String {
    "swa".into()
}

fn default_batch() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    /// Constant step size, everything else at its default.
    pub fn constant(steps: usize, warmup: usize, cycle: usize, alpha: f64, quant: QuantizerSet, seed: u64) -> Self {
        Self {
            steps,
            warmup,
            cycle,
            momentum: 0.0,
            schedule: LrSchedule::Constant { alpha },
            batch_size: 1,
            quant,
            seed,
            checkpoints: CheckpointPolicy::default(),
            eval: EvalOptions::default(),
            eval_iterate: true,
            verify_grid: false,
            extra_averagers: Vec::new(),
            average_name: default_average_name(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.cycle == 0 || self.cycle > self.steps {
            return Err(Error::Config(format!(
                "need 1 <= cycle <= steps (cycle={}, steps={})",
                self.cycle, self.steps
            )));
        }
        if self.warmup >= self.steps {
            return Err(Error::Config(format!(
                "warm-up {} must be below total steps {}",
                self.warmup, self.steps
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        for (i, a) in self.extra_averagers.iter().enumerate() {
            if a.name == self.average_name || self.extra_averagers[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::Config(format!("duplicate averager name `{}`", a.name)));
            }
            if a.cycle == 0 || a.cycle > self.steps {
                return Err(Error::Config(format!(
                    "averager `{}` has invalid cycle {}",
                    a.name, a.cycle
                )));
            }
        }
        self.schedule.validate()
    }

    fn averagers(&self) -> Vec<AveragerSpec> {
        let mut v = vec![AveragerSpec {
            name: self.average_name.clone(),
            cycle: self.cycle,
            quant: self.quant.average,
        }];
        v.extend(self.extra_averagers.iter().cloned());
        v
    }
}

/// Running mean of captured iterates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragingState {
    pub w_bar: Vec<Tensor>,
    pub m: usize,
}

impl AveragingState {
    pub fn new(like: &[Tensor]) -> Self {
        Self {
            w_bar: like.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            m: 0,
        }
    }

    /// `w̄ ← (w̄·m + w)/(m + 1)`, `m ← m + 1`.
    pub fn swa_update(&mut self, w: &[Tensor]) -> Result<()> {
        check_shapes(&self.w_bar, w, "swa_update")?;
        let m = self.m as f64;
        let inv = 1.0 / (m + 1.0);
        for (bar, x) in self.w_bar.iter_mut().zip(w) {
            for (b, &v) in bar.data_mut().iter_mut().zip(x.data()) {
                *b = (*b * m + v) * inv;
            }
        }
        self.m += 1;
        Ok(())
    }

    /// As [`swa_update`](Self::swa_update), then round the new average
    /// onto `q`'s grid.
    pub fn swa_update_quantized(&mut self, w: &[Tensor], q: &QuantizerSpec, rng: &mut RngStream) -> Result<()> {
        self.swa_update(w)?;
        for t in &mut self.w_bar {
            q.quantize_in_place(t, rng)?;
        }
        Ok(())
    }
}

fn check_shapes(a: &[Tensor], b: &[Tensor], op: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op,
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    for (x, y) in a.iter().zip(b) {
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// `Q_W(w - α·grad)`.
pub fn sgd_step_lp(w: &Tensor, grad: &Tensor, alpha: f64, q_w: &QuantizerSpec, rng: &mut RngStream) -> Result<Tensor> {
    let mut out = w.clone();
    sgd_step_lp_in_place(
        std::slice::from_mut(&mut out),
        std::slice::from_ref(grad),
        alpha,
        q_w,
        rng,
    )?;
    Ok(out)
}

/// In-place [`sgd_step_lp`] over a parameter list.
pub fn sgd_step_lp_in_place(
    params: &mut [Tensor],
    grads: &[Tensor],
    alpha: f64,
    q_w: &QuantizerSpec,
    rng: &mut RngStream,
) -> Result<()> {
    check_shapes(params, grads, "sgd_step_lp")?;
    for (w, g) in params.iter_mut().zip(grads) {
        if !g.is_finite() {
            return Err(Error::non_finite("gradient"));
        }
        for (wi, &gi) in w.data_mut().iter_mut().zip(g.data()) {
            *wi -= alpha * gi;
        }
        q_w.quantize_in_place(w, rng)?;
    }
    Ok(())
}

/// `v' = ρ·Q_M(v) + grad`, `w' = Q_W(w - α·v')`. `v'` is returned unquantized.
#[allow(clippy::too_many_arguments)]
pub fn sgd_step_momentum_lp(
    w: &Tensor,
    v: &Tensor,
    grad: &Tensor,
    alpha: f64,
    rho: f64,
    q_m: &QuantizerSpec,
    q_w: &QuantizerSpec,
    rng: &mut RngStream,
) -> Result<(Tensor, Tensor)> {
    let mut w = w.clone();
    let mut v = v.clone();
    momentum_in_place(
        std::slice::from_mut(&mut w),
        std::slice::from_mut(&mut v),
        std::slice::from_ref(grad),
        alpha,
        rho,
        q_m,
        q_w,
        rng,
    )?;
    Ok((w, v))
}

#[allow(clippy::too_many_arguments)]
fn momentum_in_place(
    params: &mut [Tensor],
    velocity: &mut [Tensor],
    grads: &[Tensor],
    alpha: f64,
    rho: f64,
    q_m: &QuantizerSpec,
    q_w: &QuantizerSpec,
    rng: &mut RngStream,
) -> Result<()> {
    check_shapes(params, grads, "sgd_step_momentum_lp")?;
    check_shapes(params, velocity, "sgd_step_momentum_lp")?;
    for ((w, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        if !g.is_finite() || !v.is_finite() {
            return Err(Error::non_finite("momentum step input"));
        }
        q_m.quantize_in_place(v, rng)?;
        for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
            *vi = rho * *vi + gi;
        }
        for (wi, &vi) in w.data_mut().iter_mut().zip(v.data()) {
            *wi -= alpha * vi;
        }
        q_w.quantize_in_place(w, rng)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: usize,
    pub iterate: Option<Metrics>,
    /// One entry per averager; `None` before its first capture.
    pub averages: Vec<Option<Metrics>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageOutcome {
    pub spec: AveragerSpec,
    pub state: AveragingState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Trajectory label the RNG streams were derived from.
    pub label: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub checkpoints: Vec<Checkpoint>,
    /// The final low-precision iterate.
    pub final_params: Vec<Tensor>,
    /// Averaging results, in the order primary then extras. Empty for SGD.
    pub averages: Vec<AverageOutcome>,
    /// Set when the run stopped early; the checkpoints cover the completed
    /// prefix.
    pub aborted: Option<String>,
}

impl RunRecord {
    /// The high-precision SWALP average (primary averager).
    pub fn w_bar(&self) -> Option<&[Tensor]> {
        self.averages.first().map(|a| a.state.w_bar.as_slice())
    }

    /// `(t, iterate metrics)` rows.
    pub fn iterate_series(&self) -> Vec<(usize, Metrics)> {
        self.checkpoints
            .iter()
            .filter_map(|c| c.iterate.map(|m| (c.t, m)))
            .collect()
    }

    /// `(t, average metrics)` rows for averager `k`.
    pub fn average_series(&self, k: usize) -> Vec<(usize, Metrics)> {
        self.checkpoints
            .iter()
            .filter_map(|c| c.averages.get(k).copied().flatten().map(|m| (c.t, m)))
            .collect()
    }

    pub fn final_iterate(&self) -> Option<Metrics> {
        self.checkpoints.last().and_then(|c| c.iterate)
    }

    pub fn final_average(&self, k: usize) -> Option<Metrics> {
        self.checkpoints
            .last()
            .and_then(|c| c.averages.get(k).copied().flatten())
    }
}

/// Low-precision SGD with averaging after warm-up. The label selects the
/// RNG streams, so `run_sgd` and `run_swalp` with the same label and config
/// follow the same trajectory.
pub fn run_swalp<O: Objective + ?Sized>(objective: &O, config: &TrainConfig, label: &str) -> Result<RunRecord> {
    run(objective, config, label, true)
}

/// The same loop without averaging.
pub fn run_sgd<O: Objective + ?Sized>(objective: &O, config: &TrainConfig, label: &str) -> Result<RunRecord> {
    run(objective, config, label, false)
}

struct Streams {
    init: RngStream,
    batch: RngStream,
    noise: RngStream,
    model: RngStream,
    weight: RngStream,
}

impl Streams {
    fn new(seed: u64, label: &str) -> Self {
        Self {
            init: RngStream::derive(seed, label, "init"),
            batch: RngStream::derive(seed, label, "batch"),
            noise: RngStream::derive(seed, label, "noise"),
            model: RngStream::derive(seed, label, "model-quant"),
            weight: RngStream::derive(seed, label, "weight-quant"),
        }
    }
}

fn run<O: Objective + ?Sized>(objective: &O, config: &TrainConfig, label: &str, average: bool) -> Result<RunRecord> {
    config.validate()?;
    let mut rngs = Streams::new(config.seed, label);
    let specs = if average { config.averagers() } else { Vec::new() };
    let mut avg_rngs: Vec<RngStream> = specs
        .iter()
        .map(|s| RngStream::derive(config.seed, label, &format!("average:{}", s.name)))
        .collect();

    let mut params = objective.init_params(&mut rngs.init);
    for p in &mut params {
        config.quant.weight.quantize_in_place(p, &mut rngs.weight)?;
    }
    let mut states: Vec<AveragingState> = specs.iter().map(|_| AveragingState::new(&params)).collect();
    let mut grads = crate::models::zeros_like(&params);
    let mut velocity = crate::models::zeros_like(&params);
    let mut batches = match objective.num_examples() {
        Some(n) => Some(BatchIter::new(n, config.batch_size, rngs.batch.clone())?),
        None => None,
    };
    let schedule = config.checkpoints.steps(config.steps);
    let mut next_ck = 0;
    let mut record = RunRecord {
        label: label.to_string(),
        seed: config.seed,
        config: config.clone(),
        checkpoints: Vec::with_capacity(schedule.len()),
        final_params: Vec::new(),
        averages: Vec::new(),
        aborted: None,
    };

    let result = (|| -> Result<()> {
        for t in 1..=config.steps {
            let batch: &[usize] = match batches.as_mut() {
                Some(it) => it.next_batch(),
                None => &[],
            };
            objective.stochastic_grad(
                &params,
                batch,
                &config.quant,
                &mut rngs.noise,
                &mut rngs.model,
                &mut grads,
            )?;
            let alpha = config.schedule.alpha(t, config.warmup);
            if config.momentum == 0.0 {
                sgd_step_lp_in_place(&mut params, &grads, alpha, &config.quant.weight, &mut rngs.weight)?;
            } else {
                momentum_in_place(
                    &mut params,
                    &mut velocity,
                    &grads,
                    alpha,
                    config.momentum,
                    &config.quant.momentum,
                    &config.quant.weight,
                    &mut rngs.weight,
                )?;
            }
            if config.verify_grid || cfg!(debug_assertions) {
                if let Some(k) = params.iter().position(|p| !config.quant.weight.is_on_grid(p)) {
                    let msg = format!("parameter {k} left the weight grid at step {t}");
                    debug_assert!(!cfg!(debug_assertions) || config.verify_grid, "{msg}");
                    return Err(Error::InvalidArgument(msg));
                }
            }
            if t > config.warmup {
                for ((spec, state), rng) in specs.iter().zip(&mut states).zip(&mut avg_rngs) {
                    if (t - config.warmup).is_multiple_of(spec.cycle) {
                        state.swa_update_quantized(&params, &spec.quant, rng)?;
                    }
                }
            }
            if schedule.get(next_ck) == Some(&t) {
                next_ck += 1;
                let iterate = if config.eval_iterate {
                    Some(finite_metrics(objective.evaluate(&params, config.eval)?, t)?)
                } else {
                    None
                };
                let mut averages = Vec::with_capacity(states.len());
                for s in &states {
                    averages.push(if s.m > 0 {
                        Some(finite_metrics(objective.evaluate(&s.w_bar, config.eval)?, t)?)
                    } else {
                        None
                    });
                }
                record.checkpoints.push(Checkpoint { t, iterate, averages });
            }
        }
        Ok(())
    })();

    record.final_params = params;
    record.averages = specs
        .into_iter()
        .zip(states)
        .map(|(spec, state)| AverageOutcome { spec, state })
        .collect();
    match result {
        Ok(()) => Ok(record),
        Err(e) => {
            record.aborted = Some(e.to_string());
            Err(Error::Aborted {
                message: e.to_string(),
                partial: Box::new(record),
            })
        }
    }
}

fn finite_metrics(m: Metrics, t: usize) -> Result<Metrics> {
    let all = [m.dist_sq, m.grad_norm, m.train_err, m.test_err, m.loss];
    if all.iter().flatten().all(|v| v.is_finite()) {
        Ok(m)
    } else {
        Err(Error::non_finite(format!("metrics at step {t}")))
    }
}
