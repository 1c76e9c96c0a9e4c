//! Command-line front end.
//!
//! Results go to stdout as canonical JSON (or CSV where noted), logs go to
//! stderr. Exit status is 0 on success, 1 when a verdict fails and 2 on a
//! usage, configuration or runtime error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::constants::limit_constants;
use crate::covariance::HurstGrid;
use crate::experiments::{self, ExperimentConfig, ExperimentKind};
use crate::json::to_canonical_json;
use crate::pathgen::{FbmSampler, GeneratorKind};
use crate::schemes::{
    endpoint_difference, error_statistic, riemann_sum, simpson_error_decomposition, SchemeKind,
    SimpsonDecomposition, TestFunction,
};
use crate::selftest::run_selftest;
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERDICT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "simpson-fbm", version, about = "Riemann-sum integration against fractional Brownian motion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lattice sums kappa_3, kappa_5 and the limit constant beta.
    Constants {
        #[arg(long = "H")]
        hurst: f64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Sample one path and write it as `t,B` CSV.
    Simulate {
        #[command(flatten)]
        path: PathArgs,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a Riemann sum on one sampled path.
    Integrate {
        #[command(flatten)]
        path: PathArgs,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value = "simpson")]
        scheme: SchemeKind,
        /// Rational coefficients `c0,c1,...` or `cos`, `sin`, `exp` (e.g. `cos:2`).
        #[arg(long, default_value = "0,0,0,0,0,1/120")]
        f: String,
    },
    /// Critical-point CLT of the Simpson error statistic.
    Clt(ExperimentArgs),
    /// L² decay rate of the residual.
    Rate(ExperimentArgs),
    /// Residual variance at or below the critical Hurst value.
    Diverge(ExperimentArgs),
    /// Exact-identity suite.
    Selftest {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct PathArgs {
    #[arg(long = "H")]
    pub hurst: f64,
    #[arg(long)]
    pub n: usize,
    #[arg(long = "T", default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "circulant")]
    pub generator: GeneratorKind,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// `key = value` config file, applied before the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "H")]
    pub hurst: Option<String>,
    /// Partition density; repeat for a sweep (`2^10` is accepted).
    #[arg(long)]
    pub n: Vec<String>,
    #[arg(long)]
    pub t: Option<String>,
    #[arg(long = "T")]
    pub horizon: Option<String>,
    #[arg(long = "M")]
    pub replications: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub f: Option<String>,
    #[arg(long)]
    pub generator: Option<String>,
    #[arg(long)]
    pub threads: Option<String>,
    /// Write the output here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Emit the per-replication CSV instead of the JSON report.
    #[arg(long)]
    pub csv: bool,
}

impl ExperimentArgs {
    /// Defaults for `kind`, then the config file, then the flags.
    pub fn to_config(&self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::default_for(kind);
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            config.apply_text(&text)?;
        }
        let scalar = [
            ("H", &self.hurst),
            ("t", &self.t),
            ("T", &self.horizon),
            ("M", &self.replications),
            ("seed", &self.seed),
            ("scheme", &self.scheme),
            ("f", &self.f),
            ("generator", &self.generator),
            ("threads", &self.threads),
        ];
        for (key, value) in scalar {
            if let Some(v) = value {
                config.set(key, v, false)?;
            }
        }
        for (i, n) in self.n.iter().enumerate() {
            config.set("n", n, i > 0)?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Serialize)]
struct ConstantsOutput {
    #[serde(rename = "H")]
    hurst: f64,
    kappa3: f64,
    kappa5: f64,
    beta_squared: f64,
    beta: f64,
    tol: f64,
    #[serde(rename = "truncation_P")]
    truncation: u64,
    tail_bound: f64,
}

#[derive(Serialize)]
struct SimulateOutput {
    #[serde(rename = "H")]
    hurst: f64,
    n: usize,
    #[serde(rename = "T")]
    horizon: f64,
    seed: u64,
    generator: &'static str,
    rows: usize,
    out: String,
}

#[derive(Serialize)]
struct IntegrateOutput {
    #[serde(rename = "H")]
    hurst: f64,
    n: usize,
    t: f64,
    seed: u64,
    scheme: SchemeKind,
    f: TestFunction,
    riemann_sum: f64,
    endpoint_difference: f64,
    residual: f64,
    error_statistic: f64,
    simpson_decomposition: Option<SimpsonDecomposition>,
}

fn emit<T: Serialize>(value: &T) -> Result<()> {
    let text = to_canonical_json(value)?;
    io::stdout().lock().write_all(text.as_bytes())?;
    Ok(())
}

fn sampler_for(args: &PathArgs) -> Result<FbmSampler> {
    FbmSampler::new(HurstGrid::new(args.hurst, args.n, args.horizon)?, args.generator)
}

fn run_experiment(kind: ExperimentKind, args: &ExperimentArgs) -> Result<i32> {
    let config = args.to_config(kind)?;
    let start = std::time::Instant::now();
    let report = experiments::run(kind, &config)?;
    log::info!("experiment finished in {:.2}s", start.elapsed().as_secs_f64());
    let mut sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    if args.csv {
        report.write_replications_csv(&mut sink)?;
    } else {
        sink.write_all(report.to_json()?.as_bytes())?;
    }
    sink.flush()?;
    for v in report.verdicts.iter().filter(|v| !v.passed) {
        log::warn!("verdict `{}` failed: {} (value {}, threshold {})", v.name, v.detail, v.value, v.threshold);
    }
    Ok(if report.passed { EXIT_OK } else { EXIT_VERDICT })
}

/// Runs a parsed command and returns the exit status.
pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Constants { hurst, tol } => {
            let c = limit_constants(hurst, tol)?;
            emit(&ConstantsOutput {
                hurst,
                kappa3: c.kappa3.value,
                kappa5: c.kappa5.value,
                beta_squared: c.beta_squared,
                beta: c.beta,
                tol,
                truncation: c.truncation(),
                tail_bound: c.tail_bound(),
            })?;
            Ok(EXIT_OK)
        }
        Command::Simulate { path, out } => {
            let sampler = sampler_for(&path)?;
            let sampled = sampler.sample(path.seed);
            match &out {
                Some(p) => {
                    let mut w = BufWriter::new(File::create(p)?);
                    sampled.write_csv(&mut w)?;
                    w.flush()?;
                    emit(&SimulateOutput {
                        hurst: path.hurst,
                        n: path.n,
                        horizon: path.horizon,
                        seed: path.seed,
                        generator: sampler.kind().name(),
                        rows: sampled.values().len(),
                        out: p.display().to_string(),
                    })?;
                }
                None => sampled.write_csv(io::stdout().lock())?,
            }
            Ok(EXIT_OK)
        }
        Command::Integrate { path, t, scheme, f } => {
            let f: TestFunction = f.parse()?;
            let sampled = sampler_for(&path)?.sample(path.seed);
            let sum = riemann_sum(&sampled, &f, scheme, t)?;
            let exact = endpoint_difference(&sampled, &f, t)?;
            let decomposition = match f.as_polynomial() {
                Some(p) if scheme == SchemeKind::Simpson && p.degree().unwrap_or(0) <= 10 => {
                    Some(simpson_error_decomposition(&sampled, &f, t)?)
                }
                _ => None,
            };
            emit(&IntegrateOutput {
                hurst: path.hurst,
                n: path.n,
                t,
                seed: path.seed,
                scheme,
                riemann_sum: sum,
                endpoint_difference: exact,
                residual: sum - exact,
                error_statistic: error_statistic(&sampled, &f, t)?,
                simpson_decomposition: decomposition,
                f,
            })?;
            Ok(EXIT_OK)
        }
        Command::Clt(args) => run_experiment(ExperimentKind::Clt, &args),
        Command::Rate(args) => run_experiment(ExperimentKind::Rate, &args),
        Command::Diverge(args) => run_experiment(ExperimentKind::Diverge, &args),
        Command::Selftest { seed } => {
            let report = run_selftest(seed)?;
            emit(&report)?;
            Ok(if report.passed { EXIT_OK } else { EXIT_VERDICT })
        }
    }
}

/// Entry point: parses `std::env::args`, returns the process exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
