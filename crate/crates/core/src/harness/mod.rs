//! Experiment runner: configuration, arms, output files, sweeps and curve
//! analysis.
//!
//! Configuration precedence, highest first: command-line flags, the
//! `SWALP_DATA_DIR` environment variable (for the data directory only), keys
//! in the config file, built-in defaults.
//!
//! Every arm writes `<out>/<arm>.csv` with header
//! `t,dist_sq,grad_norm,train_err,test_err` (empty cell = metric not
//! available). SGD arms report the iterate, SWALP arms report the average.
//! `<out>/summary.json` holds final metrics and the resolved configuration,
//! which is also written as `<out>/resolved.toml`.
//!
//! Arms that name the same `trajectory` share one training run (same RNG
//! streams, derived from the seed and trajectory name), so an SGD-LP arm and
//! a SWALP arm on the same trajectory see identical iterates. Each SWALP
//! arm's averaging stream is named after the arm.

pub mod analysis;
pub mod plot;
mod sweep;

pub use analysis::{estimate_floor, fit_loglog_slope, FloorEstimate};
pub use plot::{emit_plot_data, PlotSpec};
pub use sweep::{run_sweep, SweepParameter, SweepSection, SweepSpec};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::bounds::thm_quadratic_bound;
use crate::data::{self, SyntheticSpec};
use crate::error::{Error, Result};
use crate::models::{
    dist_sq, LinRegObjective, LogRegObjective, Metrics, MlpObjective, Objective, QuadraticObjective, QuantizerSet,
};
use crate::optim::{run_sgd, run_swalp, AveragerSpec, LrSchedule, RunRecord, TrainConfig};
use crate::quant::{QuantizerSpec, RoundingMode};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const CSV_HEADER: [&str; 5] = ["t", "dist_sq", "grad_norm", "train_err", "test_err"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `½(w - w*)ᵀ diag(eigs) (w - w*)` with Gaussian gradient noise of
    /// root-mean-square norm `sigma`.
    Quadratic {
        eigs: Vec<f64>,
        #[serde(default)]
        w_star: Option<Vec<f64>>,
        sigma: f64,
        /// Starting point; all ones by default.
        #[serde(default)]
        w0: Option<Vec<f64>>,
    },
    /// Synthetic linear regression, generated or read from a cache file.
    Linreg {
        #[serde(default = "default_d")]
        d: usize,
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "one")]
        sigma_x: f64,
        #[serde(default = "one")]
        sigma_u: f64,
        #[serde(default)]
        data_seed: u64,
        #[serde(default)]
        cache: Option<PathBuf>,
    },
    /// L2-regularized softmax regression on MNIST.
    Logreg {
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default)]
        train_subset: Option<usize>,
    },
    /// ReLU network on MNIST.
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default)]
        train_subset: Option<usize>,
    },
}

fn default_d() -> usize {
    256
}
fn default_n() -> usize {
    4096
}
fn one() -> f64 {
    1.0
}
fn default_lambda() -> f64 {
    1e-4
}
fn default_hidden() -> Vec<usize> {
    vec![32]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Report the iterate.
    #[default]
    Sgd,
    /// Report the running average.
    Swalp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub name: String,
    #[serde(default)]
    pub algorithm: Algorithm,
    /// Shared-run key; defaults to the arm name.
    #[serde(default)]
    pub trajectory: Option<String>,
    #[serde(default)]
    pub quant: QuantizerSet,
    #[serde(default)]
    pub schedule: Option<LrSchedule>,
    #[serde(default)]
    pub cycle: Option<usize>,
}

impl ArmSpec {
    pub fn trajectory(&self) -> &str {
        self.trajectory.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub jobs: Option<usize>,
    /// Free-form remark echoed into the summary.
    #[serde(default)]
    pub note: Option<String>,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub arms: Vec<ArmSpec>,
    /// Named tolerances for downstream comparisons.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub bfp_literal_exponent: bool,
    pub batch_size: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(j) = o.jobs {
            self.jobs = Some(j);
        }
        if let Some(d) = data::resolve_data_dir(o.data_dir.as_deref()) {
            self.data_dir = Some(d);
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(b) = o.batch_size {
            self.train.batch_size = b;
        }
        if o.bfp_literal_exponent {
            for arm in &mut self.arms {
                for q in quantizers_mut(&mut arm.quant) {
                    *q = q.with_literal_exponent(true);
                }
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Config("experiment id is empty".into()));
        }
        if self.arms.is_empty() {
            return Err(Error::Config("experiment has no arms".into()));
        }
        for (i, arm) in self.arms.iter().enumerate() {
            let ok = !arm.name.is_empty()
                && arm
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
            if !ok {
                return Err(Error::Config(format!(
                    "arm name `{}` must be non-empty and use only [A-Za-z0-9._-]",
                    arm.name
                )));
            }
            if self.arms[..i].iter().any(|a| a.name == arm.name) {
                return Err(Error::Config(format!("duplicate arm `{}`", arm.name)));
            }
        }
        for group in self.groups()? {
            group.train.validate()?;
        }
        Ok(())
    }

    /// Arms bucketed by trajectory, each with the resolved training config.
    fn groups(&self) -> Result<Vec<Group>> {
        let mut groups: Vec<Group> = Vec::new();
        for (i, arm) in self.arms.iter().enumerate() {
            let key = arm.trajectory();
            match groups.iter_mut().find(|g| g.trajectory == key) {
                Some(g) => {
                    let lead = &self.arms[g.arms[0]];
                    let same_path =
                        strip_average(&lead.quant) == strip_average(&arm.quant) && lead.schedule == arm.schedule;
                    if !same_path {
                        return Err(Error::Config(format!(
                            "arms `{}` and `{}` share trajectory `{key}` but train differently",
                            lead.name, arm.name
                        )));
                    }
                    g.arms.push(i);
                }
                None => groups.push(Group {
                    trajectory: key.to_string(),
                    arms: vec![i],
                    train: TrainConfig::constant(1, 0, 1, 1.0, QuantizerSet::identity(), 0),
                    averaged: false,
                }),
            }
        }
        for g in &mut groups {
            let lead = &self.arms[g.arms[0]];
            let mut train = self.train.clone();
            train.seed = self.seed;
            train.quant = strip_average(&lead.quant);
            if let Some(s) = lead.schedule {
                train.schedule = s;
            }
            train.extra_averagers.clear();
            let swalp: Vec<&ArmSpec> = g
                .arms
                .iter()
                .map(|&i| &self.arms[i])
                .filter(|a| a.algorithm == Algorithm::Swalp)
                .collect();
            if let Some(first) = swalp.first() {
                train.cycle = first.cycle.unwrap_or(self.train.cycle);
                train.quant.average = first.quant.average;
                train.average_name = first.name.clone();
                for a in &swalp[1..] {
                    train.extra_averagers.push(AveragerSpec {
                        name: a.name.clone(),
                        cycle: a.cycle.unwrap_or(self.train.cycle),
                        quant: a.quant.average,
                    });
                }
            }
            train.eval_iterate = g.arms.iter().any(|&i| self.arms[i].algorithm == Algorithm::Sgd);
            g.averaged = !swalp.is_empty();
            g.train = train;
        }
        Ok(groups)
    }
}

fn strip_average(q: &QuantizerSet) -> QuantizerSet {
    QuantizerSet {
        average: QuantizerSpec::Identity,
        ..q.clone()
    }
}

fn quantizers_mut(q: &mut QuantizerSet) -> [&mut QuantizerSpec; 6] {
    [
        &mut q.weight,
        &mut q.activation,
        &mut q.gradient,
        &mut q.error,
        &mut q.momentum,
        &mut q.average,
    ]
}

#[derive(Debug, Clone)]
struct Group {
    trajectory: String,
    arms: Vec<usize>,
    train: TrainConfig,
    averaged: bool,
}

/// Build the objective named by `model`, loading data as needed.
pub fn build_objective(model: &ModelSpec, data_dir: Option<&Path>) -> Result<Box<dyn Objective>> {
    Ok(match model {
        ModelSpec::Quadratic {
            eigs,
            w_star,
            sigma,
            w0,
        } => {
            let d = eigs.len();
            let w_star = Tensor::vector(w_star.clone().unwrap_or_else(|| vec![0.0; d]));
            let w0 = Tensor::vector(w0.clone().unwrap_or_else(|| vec![1.0; d]));
            Box::new(QuadraticObjective::diagonal(eigs, w_star, *sigma)?.with_init(w0)?)
        }
        ModelSpec::Linreg {
            d,
            n,
            sigma_x,
            sigma_u,
            data_seed,
            cache,
        } => {
            let spec = SyntheticSpec {
                d: *d,
                n: *n,
                sigma_x: *sigma_x,
                sigma_u: *sigma_u,
                seed: *data_seed,
            };
            let ds = match cache {
                Some(p) if p.exists() => data::read_synthetic(p)?,
                Some(p) => {
                    let ds = data::gen_synthetic_linreg(&spec)?;
                    data::write_synthetic(p, &ds)?;
                    ds
                }
                None => data::gen_synthetic_linreg(&spec)?,
            };
            Box::new(LinRegObjective::new(Arc::new(ds))?)
        }
        ModelSpec::Logreg { lambda, train_subset } => {
            let (train, test) = load_mnist(data_dir, *train_subset)?;
            Box::new(LogRegObjective::new(train, Some(test), *lambda)?)
        }
        ModelSpec::Mlp { hidden, train_subset } => {
            let (train, test) = load_mnist(data_dir, *train_subset)?;
            Box::new(MlpObjective::new(train, Some(test), hidden)?)
        }
    })
}

fn load_mnist(dir: Option<&Path>, subset: Option<usize>) -> Result<(Arc<data::MnistDataset>, Arc<data::MnistDataset>)> {
    let dir = dir.ok_or_else(|| {
        Error::Config(format!(
            "MNIST models need a data directory (--data-dir or {})",
            data::DATA_DIR_ENV
        ))
    })?;
    let mut train = data::load_mnist_dir(dir, data::Split::Train)?;
    if let Some(n) = subset {
        train = train.take(n);
    }
    let test = data::load_mnist_dir(dir, data::Split::Test)?;
    Ok((Arc::new(train), Arc::new(test)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub name: String,
    pub algorithm: Algorithm,
    pub trajectory: String,
    pub csv: String,
    #[serde(rename = "final")]
    pub final_metrics: Option<Metrics>,
    pub averaged_models: Option<usize>,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub quantizer: String,
    /// `‖Q_nearest(w*) - w*‖²`
    pub q_nearest_dist_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub id: String,
    pub seed: u64,
    pub rng: String,
    pub arms: Vec<ArmSummary>,
    pub reference: Option<Reference>,
    pub note: Option<String>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub summary: ExperimentSummary,
    /// Per-arm checkpoint rows, keyed by arm name.
    pub series: BTreeMap<String, Vec<(usize, Metrics)>>,
    pub records: Vec<RunRecord>,
}

/// Run every arm, write the CSVs and summary, and return everything.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let out = config
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory (set `out` or pass --out)".into()))?;
    let objective = build_objective(&config.model, config.data_dir.as_deref())?;
    run_experiment_with(config, objective.as_ref(), &out)
}

/// As [`run_experiment`] with a prebuilt objective.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    objective: &dyn Objective,
    out: &Path,
) -> Result<ExperimentResult> {
    config.validate()?;
    let groups = config.groups()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let jobs = config.jobs.unwrap_or(1).max(1).min(groups.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunRecord>>>> = Mutex::new(groups.iter().map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(g) = groups.get(k) else { break };
                let r = if g.averaged {
                    run_swalp(objective, &g.train, &g.trajectory)
                } else {
                    run_sgd(objective, &g.train, &g.trajectory)
                };
                results.lock().expect("result slot")[k] = Some(r);
            });
        }
    });

    let mut records = Vec::with_capacity(groups.len());
    let mut first_error = None;
    for r in results.into_inner().expect("results") {
        match r.expect("every group ran") {
            Ok(rec) => records.push(rec),
            Err(Error::Aborted { message, partial }) => {
                records.push((*partial).clone());
                first_error.get_or_insert(Error::Aborted { message, partial });
            }
            Err(e) => return Err(e),
        }
    }

    let mut series = BTreeMap::new();
    let mut arms = Vec::new();
    for (g, rec) in groups.iter().zip(&records) {
        for &i in &g.arms {
            let arm = &config.arms[i];
            let (rows, m) = match arm.algorithm {
                Algorithm::Sgd => (rec.iterate_series(), None),
                Algorithm::Swalp => {
                    let k = rec
                        .averages
                        .iter()
                        .position(|a| a.spec.name == arm.name)
                        .expect("averager per swalp arm");
                    (rec.average_series(k), Some(rec.averages[k].state.m))
                }
            };
            let csv_name = format!("{}.csv", arm.name);
            write_run_csv(&out.join(&csv_name), &rows)?;
            arms.push(ArmSummary {
                name: arm.name.clone(),
                algorithm: arm.algorithm,
                trajectory: g.trajectory.clone(),
                csv: csv_name,
                final_metrics: rows.last().filter(|r| r.0 == g.train.steps).map(|r| r.1),
                averaged_models: m,
                aborted: rec.aborted.clone(),
            });
            if let Some(bound) = bound_overlay(config, objective, &g.train, arm, &rows)? {
                let path = out.join(format!("{}.bound.csv", arm.name));
                write_bound_csv(&path, &bound)?;
            }
            series.insert(arm.name.clone(), rows);
        }
    }
    // keep the configured arm order
    arms.sort_by_key(|a| config.arms.iter().position(|c| c.name == a.name));

    let reference = reference_point(config, objective)?;
    let summary = ExperimentSummary {
        id: config.id.clone(),
        seed: config.seed,
        rng: crate::rng::ALGORITHM_ID.to_string(),
        arms,
        reference,
        note: config.note.clone(),
        config: config.clone(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    let path = out.join("summary.json");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    let path = out.join("resolved.toml");
    fs::write(&path, config.to_toml()?).map_err(|e| Error::io(&path, e))?;
    if let Some(e) = first_error {
        return Err(e);
    }
    Ok(ExperimentResult {
        summary,
        series,
        records,
    })
}

/// `‖Q_nearest(w*) - w*‖²` under the first non-identity weight quantizer.
fn reference_point(config: &ExperimentConfig, objective: &dyn Objective) -> Result<Option<Reference>> {
    let Some(opt) = objective.optimum() else {
        return Ok(None);
    };
    let Some(q) = config.arms.iter().map(|a| &a.quant.weight).find(|q| !q.is_identity()) else {
        return Ok(None);
    };
    let nearest = q.with_mode(RoundingMode::Nearest);
    let mut rng = RngStream::new(0);
    let rounded = opt
        .iter()
        .map(|t| nearest.quantize(t, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(Reference {
        quantizer: nearest.to_string(),
        q_nearest_dist_sq: dist_sq(&rounded, opt),
    }))
}

/// Average-distance bound at each checkpoint for quadratic SWALP arms with a
/// fixed-point weight grid, constant step size and no warm-up.
fn bound_overlay(
    config: &ExperimentConfig,
    objective: &dyn Objective,
    train: &TrainConfig,
    arm: &ArmSpec,
    rows: &[(usize, Metrics)],
) -> Result<Option<Vec<(usize, f64)>>> {
    let ModelSpec::Quadratic { sigma, .. } = &config.model else {
        return Ok(None);
    };
    let (QuantizerSpec::Fixed { format, .. }, LrSchedule::Constant { alpha }) = (&train.quant.weight, train.schedule)
    else {
        return Ok(None);
    };
    if arm.algorithm != Algorithm::Swalp || train.warmup != 0 {
        return Ok(None);
    }
    let opt = objective.optimum().expect("quadratic has an optimum");
    let w0 = objective.init_params(&mut RngStream::new(0));
    let w0_dist = dist_sq(&w0, opt);
    let mu = match &config.model {
        ModelSpec::Quadratic { eigs, .. } => eigs.iter().copied().fold(f64::INFINITY, f64::min),
        _ => unreachable!(),
    };
    let d = opt[0].len();
    let delta = format.grid().delta;
    let cycle = arm.cycle.unwrap_or(train.cycle) as u64;
    rows.iter()
        .map(|&(t, _)| thm_quadratic_bound(w0_dist, alpha, mu, t as u64, cycle, *sigma, delta, d).map(|b| (t, b.value)))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Decimal for ordinary magnitudes, exponent form otherwise.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn lf_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Data(format!("{}: {e}", path.display()))
}

pub fn write_run_csv(path: &Path, rows: &[(usize, Metrics)]) -> Result<()> {
    let mut w = lf_writer(path)?;
    w.write_record(CSV_HEADER).map_err(csv_err(path))?;
    let cell = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    for (t, m) in rows {
        w.write_record([
            t.to_string(),
            cell(m.dist_sq),
            cell(m.grad_norm),
            cell(m.train_err),
            cell(m.test_err),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_bound_csv(path: &Path, rows: &[(usize, f64)]) -> Result<()> {
    let mut w = lf_writer(path)?;
    w.write_record(["t", "bound"]).map_err(csv_err(path))?;
    for (t, b) in rows {
        w.write_record([t.to_string(), fmt_num(*b)]).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINREG: &str = r#"
id = "linreg-small"
seed = 3

[model]
kind = "linreg"
d = 8
n = 200

[train]
steps = 2000
warmup = 200
cycle = 1
schedule = { kind = "constant", alpha = 0.01 }
checkpoints = { kind = "geometric", ratio = 1.5 }

[[arms]]
name = "sgd-fl"
trajectory = "fl"

[[arms]]
name = "swa-fl"
algorithm = "swalp"
trajectory = "fl"

[[arms]]
name = "sgd-lp"
trajectory = "lp"
quant.weight = { kind = "fixed", word = 8, frac = 6 }

[[arms]]
name = "swalp"
algorithm = "swalp"
trajectory = "lp"
quant.weight = { kind = "fixed", word = 8, frac = 6 }
"#;

    fn config(out: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::from_toml(LINREG).unwrap();
        c.out = Some(out.to_path_buf());
        c
    }

    #[test]
    fn four_arm_run_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let res = run_experiment(&config(dir.path())).unwrap();
        for arm in ["sgd-fl", "swa-fl", "sgd-lp", "swalp"] {
            let text = fs::read_to_string(dir.path().join(format!("{arm}.csv"))).unwrap();
            assert!(text.starts_with("t,dist_sq,grad_norm,train_err,test_err\n"));
            assert!(!text.contains('\r'));
            let last = text.lines().last().unwrap();
            assert!(last.starts_with("2000,"), "{last}");
            assert!(last.ends_with(",,"));
        }
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["seed"], 3);
        assert!(summary["reference"]["q_nearest_dist_sq"].as_f64().unwrap() > 0.0);
        assert_eq!(summary["config"]["id"], "linreg-small");
        // swalp rows begin after warm-up
        let swalp = &res.series["swalp"];
        assert!(swalp.first().unwrap().0 > 200);
        assert_eq!(res.records.len(), 2);
    }

    #[test]
    fn echo_reproduces_bytes() {
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&config(dir.path())).unwrap();
        let echo = ExperimentConfig::load(&dir.path().join("resolved.toml")).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        run_experiment(&echo.apply(&Overrides {
            out: Some(dir2.path().to_path_buf()),
            ..Overrides::default()
        }))
        .unwrap();
        for arm in ["sgd-fl", "swa-fl", "sgd-lp", "swalp"] {
            let a = fs::read(dir.path().join(format!("{arm}.csv"))).unwrap();
            let b = fs::read(dir2.path().join(format!("{arm}.csv"))).unwrap();
            assert_eq!(a, b, "{arm}");
        }
    }

    #[test]
    fn arms_are_independent_of_each_other() {
        let dir = tempfile::tempdir().unwrap();
        let full = run_experiment(&config(dir.path())).unwrap();
        let mut only = config(dir.path());
        only.arms.retain(|a| a.name == "swalp");
        let dir2 = tempfile::tempdir().unwrap();
        only.out = Some(dir2.path().to_path_buf());
        only.jobs = Some(2);
        let solo = run_experiment(&only).unwrap();
        assert_eq!(full.series["swalp"], solo.series["swalp"]);
    }

    #[test]
    fn jobs_do_not_change_results() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_experiment(&config(dir.path())).unwrap();
        let mut c = config(dir.path());
        c.jobs = Some(3);
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.series, b.series);
    }

    #[test]
    fn config_errors_before_compute() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path());
        c.arms.clear();
        assert!(matches!(run_experiment(&c), Err(Error::Config(_))));
        let bad = LINREG.replace("kind = \"linreg\"", "kind = \"resnet\"");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config(_))));
        let mut c = config(dir.path());
        c.arms[1].quant.weight = QuantizerSpec::fixed(8, 6, RoundingMode::Stochastic).unwrap();
        assert!(matches!(run_experiment(&c), Err(Error::Config(_))));
        let mut c = config(dir.path());
        c.model = ModelSpec::Logreg {
            lambda: 1e-4,
            train_subset: None,
        };
        c.data_dir = None;
        assert!(matches!(run_experiment(&c), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_take_precedence() {
        let c = ExperimentConfig::from_toml(LINREG).unwrap().apply(&Overrides {
            seed: Some(9),
            batch_size: Some(4),
            bfp_literal_exponent: true,
            ..Overrides::default()
        });
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.batch_size, 4);
    }

    #[test]
    fn quadratic_bound_overlay() {
        let text = r#"
id = "quad"
seed = 1
[model]
kind = "quadratic"
eigs = [1.0, 2.0]
sigma = 0.5
w0 = [1.0, 1.0]
[train]
steps = 3000
warmup = 0
cycle = 1
schedule = { kind = "constant", alpha = 0.05 }
[[arms]]
name = "swalp"
algorithm = "swalp"
quant.weight = { kind = "fixed", word = 8, frac = 6 }
"#;
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::from_toml(text).unwrap();
        c.out = Some(dir.path().to_path_buf());
        run_experiment(&c).unwrap();
        let bound = fs::read_to_string(dir.path().join("swalp.bound.csv")).unwrap();
        assert!(bound.starts_with("t,bound\n1,"));
    }

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(0.5), "0.5");
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.5e-7), "1.5e-7");
        assert_eq!("1.5e-7".parse::<f64>().unwrap(), 1.5e-7);
    }
}
