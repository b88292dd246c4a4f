//! Command-line front end: data generation, training runs, sweeps, bound
//! evaluation, slope fits and plot data.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use swalp::bounds::{self, BoundReport, ProblemConstants};
use swalp::data::{self, SyntheticSpec};
use swalp::harness::{self, plot, ExperimentConfig, Overrides, PlotSpec, SweepSpec};
use swalp::{Error, Result};

#[derive(Parser)]
#[command(
    name = "swalp",
    version,
    about = "Low-precision SGD and weight averaging experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic linear-regression dataset file.
    GenData {
        #[arg(long, default_value_t = 256)]
        d: usize,
        #[arg(long, default_value_t = 4096)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma_x: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_u: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every arm of an experiment.
    Train(RunArgs),
    /// Run the sweep declared in an experiment config.
    Sweep(RunArgs),
    /// Evaluate a closed-form bound and print it as JSON.
    Bound {
        #[command(subcommand)]
        which: BoundCommand,
    },
    /// Fit a log-log slope to one column of a run CSV.
    FitSlope {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "dist_sq")]
        column: String,
        /// Fraction of the last points used.
        #[arg(long, default_value_t = 0.5)]
        window: f64,
    },
    /// Write gnuplot data and an SVG chart from run CSVs.
    Plot {
        /// `label=path` pairs.
        #[arg(long = "input", required = true)]
        inputs: Vec<String>,
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        title: String,
        #[arg(long, default_value = "t")]
        x: String,
        #[arg(long, default_value = "dist_sq")]
        y: String,
        #[arg(long)]
        log_x: bool,
        #[arg(long)]
        log_y: bool,
        /// `label=value` horizontal reference lines.
        #[arg(long = "hline")]
        hlines: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, env = data::DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the exponent-bit reading of the block-float gap.
    #[arg(long)]
    bfp_literal_exponent: bool,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let overrides = Overrides {
            seed: self.seed,
            jobs: self.jobs,
            data_dir: self.data_dir.clone(),
            out: self.out.clone(),
            bfp_literal_exponent: self.bfp_literal_exponent,
            batch_size: self.batch_size,
        };
        Ok(ExperimentConfig::load(&self.config)?.apply(&overrides))
    }
}

#[derive(Subcommand)]
enum BoundCommand {
    /// Averaged iterate on a quadratic.
    Quadratic {
        #[arg(long)]
        w0_dist_sq: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        t: u64,
        #[arg(long, default_value_t = 1)]
        c: u64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        d: usize,
        /// Spectral norm of the Hessian, for the step-size checks.
        #[arg(long)]
        a_norm: Option<f64>,
    },
    /// Averaged iterate on a strongly convex objective.
    StronglyConvex {
        #[arg(long)]
        mu: f64,
        #[arg(long, default_value_t = 0.0)]
        l: f64,
        #[arg(long)]
        m: f64,
        #[arg(long)]
        g: f64,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = bounds::CHI)]
        chi: f64,
        #[arg(long)]
        c: u64,
        #[arg(long)]
        t: u64,
        /// Defaults to `δ√d/G`.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Step size, burn-in length and fourth-moment ball of the iterates.
    NoiseBall {
        #[arg(long)]
        g: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        w0_dist_sq: f64,
        #[arg(long, default_value_t = bounds::CHI)]
        chi: f64,
    },
}

fn bound(which: BoundCommand) -> Result<serde_json::Value> {
    let json = |r: &BoundReport| serde_json::to_value(r).expect("report serializes");
    Ok(match which {
        BoundCommand::Quadratic {
            w0_dist_sq,
            alpha,
            mu,
            t,
            c,
            sigma,
            delta,
            d,
            a_norm,
        } => {
            let mut r = bounds::thm_quadratic_bound(w0_dist_sq, alpha, mu, t, c, sigma, delta, d)?;
            if let Some(a) = a_norm {
                bounds::quadratic_step_checks(&mut r, alpha, a);
            }
            json(&r)
        }
        BoundCommand::StronglyConvex {
            mu,
            l,
            m,
            g,
            sigma,
            d,
            delta,
            chi,
            c,
            t,
            alpha,
        } => {
            let k = ProblemConstants {
                mu,
                l,
                m,
                g,
                sigma,
                d,
                delta,
                chi,
            };
            let alpha = match alpha {
                Some(a) => a,
                None => bounds::lemma_step_size(delta, d, g)?,
            };
            json(&bounds::thm_strongly_convex_bound(&k, c, t, alpha)?)
        }
        BoundCommand::NoiseBall {
            g,
            mu,
            delta,
            d,
            w0_dist_sq,
            chi,
        } => serde_json::json!({
            "alpha": bounds::lemma_step_size(delta, d, g)?,
            "min_iters": bounds::lemma_min_iters(g, mu, delta, d, w0_dist_sq)?,
            "fourth_moment": bounds::lemma_noise_ball(g, delta, d, mu, chi)?,
        }),
    })
}

fn split_pair(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .ok_or_else(|| Error::InvalidArgument(format!("expected label=value, got `{s}`")))
}

fn fit_slope(csv: &Path, column: &str, window: f64) -> Result<f64> {
    let s = plot::read_series(csv, column, "t", column)?;
    harness::fit_loglog_slope(&s.points, window)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            d,
            n,
            sigma_x,
            sigma_u,
            seed,
            out,
        } => {
            let spec = SyntheticSpec {
                d,
                n,
                sigma_x,
                sigma_u,
                seed,
            };
            data::write_synthetic(&out, &data::gen_synthetic_linreg(&spec)?)?;
            println!("{}", out.display());
        }
        Command::Train(args) => {
            let res = harness::run_experiment(&args.resolve()?)?;
            for arm in &res.summary.arms {
                let m = arm.final_metrics.unwrap_or_default();
                println!(
                    "{:<16} dist_sq={:?} train_err={:?} test_err={:?}",
                    arm.name, m.dist_sq, m.train_err, m.test_err
                );
            }
        }
        Command::Sweep(args) => {
            let spec = SweepSpec::from_config(args.resolve()?)?;
            for (v, res) in harness::run_sweep(&spec)? {
                for arm in &res.summary.arms {
                    let m = arm.final_metrics.unwrap_or_default();
                    println!(
                        "{v:>6} {:<16} train_err={:?} test_err={:?}",
                        arm.name, m.train_err, m.test_err
                    );
                }
            }
        }
        Command::Bound { which } => {
            println!("{}", serde_json::to_string_pretty(&bound(which)?).expect("json"));
        }
        Command::FitSlope { csv, column, window } => {
            println!("{}", fit_slope(&csv, &column, window)?);
        }
        Command::Plot {
            inputs,
            name,
            title,
            x,
            y,
            log_x,
            log_y,
            hlines,
            out,
        } => {
            let inputs = inputs
                .iter()
                .map(|s| split_pair(s).map(|(l, p)| (l, PathBuf::from(p))))
                .collect::<Result<Vec<_>>>()?;
            let hlines = hlines
                .iter()
                .map(|s| {
                    let (l, v) = split_pair(s)?;
                    let v = v
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidArgument(format!("hline `{s}`: {e}")))?;
                    Ok((l, v))
                })
                .collect::<Result<Vec<_>>>()?;
            let spec = PlotSpec {
                name,
                title,
                x,
                y,
                log_x,
                log_y,
                hlines,
            };
            for p in harness::emit_plot_data(&inputs, &spec, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
