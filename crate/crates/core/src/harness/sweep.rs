//! One-parameter sweeps over an experiment: fractional bits, cycle length
//! or the word size of the averaged model.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{fmt_num, lf_writer, run_experiment, Algorithm, ExperimentConfig, ExperimentResult, CSV_HEADER};
use crate::error::{Error, Result};
use crate::quant::{BlockAssignment, QuantizerSpec, RoundingMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Fractional bits of every fixed-point quantizer except the average;
    /// word size is `integer_bits + frac`.
    FracBits,
    /// Averaging cycle length for every SWALP arm.
    Cycle,
    /// Word size of the averaged model's block-floating-point quantizer.
    AverageWordBits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub values: Vec<u32>,
    #[serde(default = "default_integer_bits")]
    pub integer_bits: u32,
    #[serde(default = "default_exp_bits")]
    pub exp_bits: u32,
}

fn default_integer_bits() -> u32 {
    2
}

fn default_exp_bits() -> u32 {
    8
}

/// A base experiment plus the sweep applied to it.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub sweep: SweepSection,
}

impl SweepSpec {
    pub fn from_config(config: ExperimentConfig) -> Result<Self> {
        let sweep = config
            .sweep
            .clone()
            .ok_or_else(|| Error::Config("config has no [sweep] section".into()))?;
        Ok(Self { base: config, sweep })
    }

    fn tag(&self, v: u32) -> String {
        let name = match self.sweep.parameter {
            SweepParameter::FracBits => "frac",
            SweepParameter::Cycle => "cycle",
            SweepParameter::AverageWordBits => "avg-word",
        };
        format!("{name}-{v}")
    }

    /// The experiment at one sweep value, validated.
    pub fn point(&self, v: u32) -> Result<ExperimentConfig> {
        let mut c = self.base.clone();
        c.sweep = None;
        c.id = format!("{}-{}", self.base.id, self.tag(v));
        c.out = self.base.out.as_ref().map(|o| o.join(self.tag(v)));
        match self.sweep.parameter {
            SweepParameter::FracBits => {
                let word = v + self.sweep.integer_bits;
                for arm in &mut c.arms {
                    let q = &mut arm.quant;
                    for slot in [
                        &mut q.weight,
                        &mut q.activation,
                        &mut q.gradient,
                        &mut q.error,
                        &mut q.momentum,
                    ] {
                        if let QuantizerSpec::Fixed { mode, .. } = *slot {
                            *slot = QuantizerSpec::fixed(word, v, mode)
                                .map_err(|e| Error::Config(format!("sweep value {v}: {e}")))?;
                        }
                    }
                }
            }
            SweepParameter::Cycle => {
                c.train.cycle = v as usize;
                for arm in &mut c.arms {
                    arm.cycle = None;
                }
            }
            SweepParameter::AverageWordBits => {
                for arm in c.arms.iter_mut().filter(|a| a.algorithm == Algorithm::Swalp) {
                    let (assignment, mode) = match arm.quant.average {
                        QuantizerSpec::BlockFloat { assignment, mode, .. } => (assignment, mode),
                        _ => (BlockAssignment::SmallBlock, RoundingMode::Stochastic),
                    };
                    arm.quant.average = QuantizerSpec::block_float(v, self.sweep.exp_bits, assignment, mode)
                        .map_err(|e| Error::Config(format!("sweep value {v}: {e}")))?;
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let values = &self.sweep.values;
        if values.is_empty() {
            return Err(Error::Config("sweep has no values".into()));
        }
        for (i, v) in values.iter().enumerate() {
            if values[..i].contains(v) {
                return Err(Error::Config(format!("duplicate sweep value {v}")));
            }
        }
        for &v in values {
            self.point(v)?;
        }
        Ok(())
    }
}

/// Run every sweep point into `<out>/<tag>/` and write `<out>/sweep.csv`
/// (one row per value and arm, final metrics) and `<out>/table.csv` (one
/// row per value, train/test error per arm).
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<(u32, ExperimentResult)>> {
    spec.validate()?;
    let out: PathBuf = spec
        .base
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory (set `out` or pass --out)".into()))?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut results = Vec::new();
    for &v in &spec.sweep.values {
        results.push((v, run_experiment(&spec.point(v)?)?));
    }
    write_sweep_csv(&out.join("sweep.csv"), &spec.base, &results)?;
    write_table_csv(&out.join("table.csv"), &spec.base, &results)?;
    Ok(results)
}

fn write_sweep_csv(path: &Path, base: &ExperimentConfig, results: &[(u32, ExperimentResult)]) -> Result<()> {
    let mut w = lf_writer(path)?;
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut header = vec!["value", "arm"];
    header.extend(CSV_HEADER);
    w.write_record(&header).map_err(err)?;
    let cell = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    for (v, res) in results {
        for arm in &base.arms {
            let Some((t, m)) = res.series[&arm.name].last() else {
                continue;
            };
            w.write_record([
                v.to_string(),
                arm.name.clone(),
                t.to_string(),
                cell(m.dist_sq),
                cell(m.grad_norm),
                cell(m.train_err),
                cell(m.test_err),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_table_csv(path: &Path, base: &ExperimentConfig, results: &[(u32, ExperimentResult)]) -> Result<()> {
    let mut w = lf_writer(path)?;
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut header = vec!["value".to_string()];
    for arm in &base.arms {
        header.push(format!("{}_train_err", arm.name));
        header.push(format!("{}_test_err", arm.name));
    }
    w.write_record(&header).map_err(err)?;
    let cell = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    for (v, res) in results {
        let mut row = vec![v.to_string()];
        for arm in &base.arms {
            let m = res.series[&arm.name].last().map(|r| r.1).unwrap_or_default();
            row.push(cell(m.train_err));
            row.push(cell(m.test_err));
        }
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
id = "sw"
seed = 5
[model]
kind = "linreg"
d = 4
n = 64
[train]
steps = 500
warmup = 100
cycle = 1
schedule = { kind = "constant", alpha = 0.02 }
checkpoints = { kind = "final" }
[[arms]]
name = "sgd"
trajectory = "lp"
quant.weight = { kind = "fixed", word = 8, frac = 6 }
[[arms]]
name = "swalp"
algorithm = "swalp"
trajectory = "lp"
quant.weight = { kind = "fixed", word = 8, frac = 6 }
[sweep]
parameter = "frac_bits"
values = [2, 6]
"#;

    fn spec(out: &Path, text: &str) -> SweepSpec {
        let mut c = ExperimentConfig::from_toml(text).unwrap();
        c.out = Some(out.to_path_buf());
        SweepSpec::from_config(c).unwrap()
    }

    #[test]
    fn frac_sweep_rewrites_formats_and_writes_table() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(dir.path(), BASE);
        let p = s.point(2).unwrap();
        assert_eq!(
            p.arms[0].quant.weight,
            QuantizerSpec::fixed(4, 2, RoundingMode::Stochastic).unwrap()
        );
        let res = run_sweep(&s).unwrap();
        assert_eq!(res.len(), 2);
        let sweep = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(sweep.lines().count(), 5);
        assert!(sweep.starts_with("value,arm,t,dist_sq"));
        let table = fs::read_to_string(dir.path().join("table.csv")).unwrap();
        assert_eq!(
            table.lines().next().unwrap(),
            "value,sgd_train_err,sgd_test_err,swalp_train_err,swalp_test_err"
        );
        assert!(dir.path().join("frac-6").join("swalp.csv").exists());
    }

    #[test]
    fn invalid_sweeps_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let dup = spec(dir.path(), &BASE.replace("values = [2, 6]", "values = [2, 2]"));
        assert!(matches!(dup.validate(), Err(Error::Config(_))));
        let wide = spec(dir.path(), &BASE.replace("values = [2, 6]", "values = [60]"));
        assert!(matches!(wide.validate(), Err(Error::Config(_))));
        let cyc = spec(
            dir.path(),
            &BASE.replace(
                "parameter = \"frac_bits\"\nvalues = [2, 6]",
                "parameter = \"cycle\"\nvalues = [1000]",
            ),
        );
        assert!(cyc.validate().is_err());
    }

    #[test]
    fn average_word_sweep_uses_block_float() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(
            dir.path(),
            &BASE.replace(
                "parameter = \"frac_bits\"\nvalues = [2, 6]",
                "parameter = \"average_word_bits\"\nvalues = [8, 16]",
            ),
        );
        let p = s.point(8).unwrap();
        assert!(p.arms[0].quant.average.is_identity());
        assert_eq!(
            p.arms[1].quant.average,
            QuantizerSpec::block_float(8, 8, BlockAssignment::SmallBlock, RoundingMode::Stochastic).unwrap()
        );
    }
}
