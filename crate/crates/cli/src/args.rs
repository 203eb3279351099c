//! Flag definitions and the file ≺ flags merge.

use std::path::{Path, PathBuf};

use adaptive_sensing::harness::Policy;
use adaptive_sensing::{CoefficientSource, ModelConfig};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "adasense",
    version,
    about = "Two-stage adaptive sensing: analytic gain bounds and Monte Carlo sweeps",
    long_about = "Two-stage adaptive sensing of sparse signals.\n\n\
        The prior is Bernoulli(p)-Gaussian with amplitude SNR s = μ²/σ² (σ² = 1). The \
        SNR-budget ratio r = σ²/ν² is given in dB (10·log10 r); the total sensing budget \
        equals the dimension N. Every run writes CSV tables and a manifest.json to --out-dir."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gain lower bound, maximizing first-stage fraction and Chernoff coefficients over
    /// the r grid (no simulation) → bounds.csv
    Bounds {
        #[command(flatten)]
        common: Common,
        /// Chernoff coefficient source for the gain bound: quadrature, prop1 or prop2
        /// (prop2 needs q = 2) [default: prop2 when q = 2, else prop1]
        #[arg(long)]
        source: Option<String>,
    },
    /// Exact Monte Carlo, bound-based and closed-form first-stage fractions over the
    /// r grid → lambda.csv
    SweepLambda {
        #[command(flatten)]
        common: Common,
    },
    /// Simulated gain of each policy over the r grid → gain.csv, diagnostics.csv
    SweepGain {
        #[command(flatten)]
        common: Common,
        /// Policies (comma-separated): optimal_two_stage, subopt_first_stage,
        /// subopt_second_stage, large_r_approx, nonadaptive, oracle [default: all]
        #[arg(long, value_delimiter = ',')]
        policies: Vec<String>,
    },
    /// Empirical frequency of the first-stage concentration event against its
    /// Bernstein bound → tail_check.csv
    TailCheck {
        #[command(flatten)]
        common: Common,
        /// Relative slack ε > 0 of the concentration event
        #[arg(long, default_value_t = 0.02)]
        epsilon: f64,
        /// First-stage budget fraction λ in (0, 1]
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// SNR-budget ratio r in dB
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        r_db: f64,
    },
    /// One seeded trial; prints the full belief trajectory as JSON → trial.json
    Trial {
        #[command(flatten)]
        common: Common,
        /// Policy to run
        #[arg(long, default_value = "optimal_two_stage")]
        policy: String,
        /// First-stage fraction λ in [0, 1] [default: bound-based choice]
        #[arg(long)]
        lambda: Option<f64>,
        /// SNR-budget ratio r in dB
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        r_db: f64,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file supplying any of the fields below (flags take precedence)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for CSV and manifest output (created if missing)
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Prior probability(ies) p in [0, 1] that a component is nonzero; comma-separated
    /// [default: 0.01]
    #[arg(long, value_delimiter = ',')]
    pub p: Vec<f64>,
    /// Loss exponent(s) q > 0 of the mean q-th power error; comma-separated [default: 2]
    #[arg(long, value_delimiter = ',')]
    pub q: Vec<f64>,
    /// Amplitude SNR s = μ²/σ² >= 0 (dimensionless) [default: 16]
    #[arg(long)]
    pub s: Option<f64>,
    /// Signal dimension N >= 1, also the total budget [default: 10000]
    #[arg(long)]
    pub n: Option<usize>,
    /// Lower end of the r grid in dB [default: -20]
    #[arg(long, allow_negative_numbers = true)]
    pub r_db_min: Option<f64>,
    /// Upper end of the r grid in dB [default: 40]
    #[arg(long, allow_negative_numbers = true)]
    pub r_db_max: Option<f64>,
    /// Spacing of the r grid in dB, > 0 [default: 1]
    #[arg(long)]
    pub r_db_step: Option<f64>,
    /// Monte Carlo trials per point [default: 2000 for sweep-gain, 10000 for tail-check]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Base seed; every random stream derives from it [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shared draws per λ for the exact first-stage objective; 0 skips it in
    /// sweep-lambda [default: 24]
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Points of the first-stage λ grid on [0, 1] [default: 41]
    #[arg(long)]
    pub lambda_grid_points: Option<usize>,
    /// Worker threads [default: one per core]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Progress on stderr (repeat for more)
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Contents of `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    p: Option<OneOrMany>,
    q: Option<OneOrMany>,
    s: Option<f64>,
    n_dim: Option<usize>,
    r_db_min: Option<f64>,
    r_db_max: Option<f64>,
    r_db_step: Option<f64>,
    trials: Option<usize>,
    base_seed: Option<u64>,
    mc_samples_first_stage: Option<usize>,
    lambda_grid_points: Option<usize>,
    policies: Option<Vec<Policy>>,
}

fn read_file(path: &Path) -> Result<FileConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("config: cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("config: {}: {e}", path.display())))
}

/// Fully merged and validated settings; serialized into the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub s: f64,
    pub n_dim: usize,
    pub r_db_min: f64,
    pub r_db_max: f64,
    pub r_db_step: f64,
    pub r_db: Vec<f64>,
    pub trials: usize,
    pub base_seed: u64,
    pub mc_samples_first_stage: usize,
    pub lambda_grid_points: usize,
    pub policies: Vec<Policy>,
    pub workers: Option<usize>,
    #[serde(skip)]
    pub verbose: u8,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl Settings {
    pub fn resolve(common: &Common, default_trials: usize, policies: Vec<Policy>) -> Result<Self, Failure> {
        let file = match &common.config {
            Some(path) => read_file(path)?,
            None => FileConfig::default(),
        };
        let pick = |flag: &Vec<f64>, from_file: Option<OneOrMany>, default: f64| {
            if !flag.is_empty() {
                flag.clone()
            } else {
                from_file.map_or(vec![default], OneOrMany::into_vec)
            }
        };
        let settings = Settings {
            p: pick(&common.p, file.p, 0.01),
            q: pick(&common.q, file.q, 2.0),
            s: common.s.or(file.s).unwrap_or(16.0),
            n_dim: common.n.or(file.n_dim).unwrap_or(10_000),
            r_db_min: common.r_db_min.or(file.r_db_min).unwrap_or(-20.0),
            r_db_max: common.r_db_max.or(file.r_db_max).unwrap_or(40.0),
            r_db_step: common.r_db_step.or(file.r_db_step).unwrap_or(1.0),
            r_db: Vec::new(),
            trials: common.trials.or(file.trials).unwrap_or(default_trials),
            base_seed: common.seed.or(file.base_seed).unwrap_or(1),
            mc_samples_first_stage: common.mc_samples.or(file.mc_samples_first_stage).unwrap_or(24),
            lambda_grid_points: common.lambda_grid_points.or(file.lambda_grid_points).unwrap_or(41),
            policies: if policies.is_empty() {
                file.policies.unwrap_or_else(|| Policy::ALL.to_vec())
            } else {
                policies
            },
            workers: common.workers,
            verbose: common.verbose,
            out_dir: common.out_dir.clone(),
        };
        settings.validated()
    }

    fn validated(mut self) -> Result<Self, Failure> {
        if self.p.is_empty() || self.q.is_empty() {
            return Err(Failure::usage("p, q: need at least one value"));
        }
        self.configs_at_r(1.0)?;
        let (lo, hi, step) = (self.r_db_min, self.r_db_max, self.r_db_step);
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Failure::usage(format!(
                "r_db_min, r_db_max: need finite r_db_min <= r_db_max, got [{lo}, {hi}]"
            )));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Failure::usage(format!("r_db_step: must be > 0, got {step}")));
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        self.r_db = (0..count).map(|i| lo + i as f64 * step).collect();
        if self.trials == 0 {
            return Err(Failure::usage("trials: must be at least 1"));
        }
        if self.lambda_grid_points < 2 {
            return Err(Failure::usage("lambda_grid_points: must be at least 2"));
        }
        if self.workers == Some(0) {
            return Err(Failure::usage("workers: must be at least 1"));
        }
        if self.policies.is_empty() {
            return Err(Failure::usage("policies: need at least one"));
        }
        Ok(self)
    }

    /// One configuration per (p, q) pair at ratio `r`, p varying slowest.
    pub fn configs_at_r(&self, r: f64) -> Result<Vec<ModelConfig>, Failure> {
        let mut out = Vec::new();
        for &p in &self.p {
            for &q in &self.q {
                out.push(ModelConfig::from_ratios(p, self.s, r, q, self.n_dim).map_err(Failure::invalid)?);
            }
        }
        Ok(out)
    }

    pub fn progress(&self, level: u8, message: impl AsRef<str>) {
        if self.verbose >= level {
            eprintln!("{}", message.as_ref());
        }
    }
}

pub fn parse_policies(names: &[String]) -> Result<Vec<Policy>, Failure> {
    names
        .iter()
        .map(|n| n.parse::<Policy>().map_err(Failure::invalid))
        .collect()
}

pub fn parse_source(name: Option<&str>, q: f64) -> Result<CoefficientSource, Failure> {
    let source = match name {
        Some(n) => n.parse::<CoefficientSource>().map_err(Failure::invalid)?,
        None => CoefficientSource::default_for(q),
    };
    if source == CoefficientSource::Prop2 && q != 2.0 {
        return Err(Failure::usage(format!("source: prop2 requires q = 2, got q = {q}")));
    }
    Ok(source)
}
