//! Monte Carlo experiments: the critical-point CLT for the Simpson error
//! statistic, the L² rate laws of the four schemes, and the divergence probe.
//!
//! Every replication draws its own path from a seed derived from
//! `(master_seed, n, replication)`. Work is parallel across replications
//! but results are collected by index and reduced in a fixed order, so a
//! report depends only on the configuration, never on the pool size.
//!
//! # Config file
//!
//! One `key = value` per line, `#` starts a comment. Keys mirror the CLI
//! flags: `H`, `scheme`, `f`, `t`, `T`, `n` (comma list, may repeat),
//! `M`, `seed`, `generator`, `threads`, plus the threshold names of
//! [`Thresholds`] (e.g. `slope_tolerance = 0.4`).

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::constants::{limit_constants, LimitConstants};
use crate::covariance::{floor_steps, rho, HurstGrid, DEFAULT_GRAM_CAP};
use crate::hermite::power_to_hermite;
use crate::json::format_f64;
use crate::pathgen::{derive_seed, rng_for, FbmPath, FbmSampler, GeneratorKind};
use crate::schemes::{
    endpoint_difference, error_statistic, riemann_sum, SchemeKind, TestFunction,
};
use crate::stats::{correlation, fit_loglog_slope, ks_test_normal, KsResult, SampleSummary, SlopeFit};
use crate::{Error, NeumaierSum, Result};

/// Tolerance of the lattice sums behind the CLT targets.
const CONSTANTS_TOL: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Clt,
    Rate,
    Diverge,
}

/// Pass/fail thresholds. None of them is prescribed by the theory, which
/// is purely asymptotic; they are desk-scale engineering choices.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Thresholds {
    /// CLT: relative variance tolerance at the largest `n`.
    pub variance_tolerance: f64,
    /// CLT: the variance check also accepts this many variance standard errors.
    pub variance_se_factor: f64,
    /// CLT: KS significance level.
    pub ks_alpha: f64,
    /// CLT: `|corr(E_n, B_t)| < corr_factor / sqrt(M)`.
    pub corr_factor: f64,
    /// CLT: `|mean| < mean_factor * sd / sqrt(M)`.
    pub mean_factor: f64,
    /// Rate: allowed distance between fitted and theoretical slope.
    pub slope_tolerance: f64,
    /// Rate: mean squared residual below this counts as exact.
    pub exact_tolerance: f64,
    /// Divergence at `H = H*`: required fraction of the predicted plateau.
    pub plateau_fraction: f64,
    /// Divergence below `H*`: a step may drop by this many combined standard errors.
    pub growth_se_factor: f64,
    /// Divergence above `H*`: required decay from the first to the last `n`.
    pub decay_factor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            variance_tolerance: 0.15,
            variance_se_factor: 3.0,
            ks_alpha: 0.01,
            corr_factor: 4.0,
            mean_factor: 4.0,
            slope_tolerance: 0.35,
            exact_tolerance: 1e-20,
            plateau_fraction: 0.5,
            growth_se_factor: 1.0,
            decay_factor: 4.0,
        }
    }
}

impl Thresholds {
    fn set(&mut self, key: &str, value: f64) -> bool {
        let slot = match key {
            "variance_tolerance" => &mut self.variance_tolerance,
            "variance_se_factor" => &mut self.variance_se_factor,
            "ks_alpha" => &mut self.ks_alpha,
            "corr_factor" => &mut self.corr_factor,
            "mean_factor" => &mut self.mean_factor,
            "slope_tolerance" => &mut self.slope_tolerance,
            "exact_tolerance" => &mut self.exact_tolerance,
            "plateau_fraction" => &mut self.plateau_fraction,
            "growth_se_factor" => &mut self.growth_se_factor,
            "decay_factor" => &mut self.decay_factor,
            _ => return false,
        };
        *slot = value;
        true
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.variance_tolerance,
            self.variance_se_factor,
            self.ks_alpha,
            self.corr_factor,
            self.mean_factor,
            self.slope_tolerance,
            self.exact_tolerance,
            self.plateau_fraction,
            self.growth_se_factor,
            self.decay_factor,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("thresholds must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    #[serde(rename = "H")]
    pub hurst: f64,
    pub scheme: SchemeKind,
    pub f: TestFunction,
    pub t: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_values: Vec<usize>,
    #[serde(rename = "M")]
    pub replications: usize,
    pub master_seed: u64,
    pub generator: GeneratorKind,
    /// Worker count; `None` uses every core. Not part of the report.
    #[serde(skip)]
    pub threads: Option<usize>,
    pub thresholds: Thresholds,
}

impl ExperimentConfig {
    /// Critical-point CLT at desk scale.
    pub fn clt_default() -> Self {
        Self {
            hurst: 0.1,
            scheme: SchemeKind::Simpson,
            f: TestFunction::normalized_monomial(5),
            t: 1.0,
            horizon: 1.0,
            n_values: vec![1 << 10, 1 << 12, 1 << 14],
            replications: 2000,
            master_seed: 42,
            generator: GeneratorKind::CirculantEmbedding,
            threads: None,
            thresholds: Thresholds::default(),
        }
    }

    pub fn rate_default() -> Self {
        Self {
            hurst: 0.2,
            n_values: (8..=13).map(|k| 1 << k).collect(),
            replications: 500,
            ..Self::clt_default()
        }
    }

    pub fn diverge_default() -> Self {
        Self {
            hurst: 0.05,
            n_values: vec![1 << 8, 1 << 10, 1 << 12],
            replications: 500,
            ..Self::clt_default()
        }
    }

    pub fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Clt => Self::clt_default(),
            ExperimentKind::Rate => Self::rate_default(),
            ExperimentKind::Diverge => Self::diverge_default(),
        }
    }

    /// Applies one `key = value` setting. `n` accepts a comma list; when
    /// `append_n` is false it replaces the current list.
    pub fn set(&mut self, key: &str, value: &str, append_n: bool) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| Error::Config(format!("invalid {what} `{value}`"));
        match key.trim() {
            "H" | "hurst" => self.hurst = value.parse().map_err(|_| bad("H"))?,
            "scheme" => self.scheme = value.parse()?,
            "f" => self.f = value.parse()?,
            "t" => self.t = value.parse().map_err(|_| bad("t"))?,
            "T" | "horizon" => self.horizon = value.parse().map_err(|_| bad("T"))?,
            "n" | "n_values" => {
                let parsed = value
                    .split(',')
                    .map(parse_size)
                    .collect::<Result<Vec<_>>>()?;
                if append_n {
                    self.n_values.extend(parsed);
                } else {
                    self.n_values = parsed;
                }
            }
            "M" | "replications" => self.replications = parse_size(value)?,
            "seed" | "master_seed" => self.master_seed = value.parse().map_err(|_| bad("seed"))?,
            "generator" => self.generator = value.parse()?,
            "threads" => self.threads = Some(parse_size(value)?),
            other => {
                let v: f64 = value.parse().map_err(|_| bad(other))?;
                if !self.thresholds.set(other, v) {
                    return Err(Error::Config(format!("unknown config key `{other}`")));
                }
            }
        }
        Ok(())
    }

    /// Applies a whole config file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen_n = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            let is_n = matches!(key.trim(), "n" | "n_values");
            self.set(key, value, is_n && seen_n)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
            seen_n |= is_n;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::Config(format!("H must lie in (0, 1), got {}", self.hurst)));
        }
        if self.replications < 100 {
            return Err(Error::Config(format!("M must be at least 100, got {}", self.replications)));
        }
        if self.n_values.is_empty() {
            return Err(Error::Config("n_values is empty".into()));
        }
        if self.n_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_values must be strictly increasing".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("T must be positive, got {}", self.horizon)));
        }
        if !(self.t > 0.0 && self.t <= self.horizon) {
            return Err(Error::Config(format!("t must lie in (0, T], got t={} T={}", self.t, self.horizon)));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        for &n in &self.n_values {
            if floor_steps(n, self.t) < 1 {
                return Err(Error::Config(format!("n={n} leaves no increment before t={}", self.t)));
            }
            HurstGrid::new(self.hurst, n, self.horizon).map_err(|e| Error::Config(e.to_string()))?;
        }
        self.thresholds.validate()
    }

    fn replication_seed(&self, n: usize, r: usize) -> u64 {
        derive_seed(derive_seed(self.master_seed, n as u64), r as u64)
    }
}

/// `1024` or `2^10`.
fn parse_size(s: &str) -> Result<usize> {
    let s = s.trim();
    let bad = || Error::Config(format!("invalid integer `{s}`"));
    match s.split_once('^') {
        Some((b, e)) => {
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            let e: u32 = e.trim().parse().map_err(|_| bad())?;
            b.checked_pow(e).ok_or_else(bad)
        }
        None => s.parse().map_err(|_| bad()),
    }
}

/// One row of the per-replication CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub n: usize,
    /// `B_t` (exact when `nt` is an integer or the conditional draw was
    /// available, otherwise the last grid value `B_{floor(nt)/n}`).
    pub b_t: f64,
    pub statistic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelResult {
    pub n: usize,
    /// Summary of the per-replication statistic.
    pub summary: SampleSummary,
    /// Mean of the squared statistic with its standard error.
    pub mean_square: f64,
    pub mean_square_se: f64,
    /// Variance the statistic should approach (CLT and plateau checks).
    pub target_variance: Option<f64>,
    pub variance_ratio: Option<f64>,
    /// Exact variance at this finite `n` when available in closed form.
    pub exact_variance: Option<f64>,
    pub ks: Option<KsResult>,
    pub correlation_with_b_t: Option<f64>,
    /// Sample mean of `(f(B_t) - f(B_{floor(nt)/n}))^2`; zero when `nt` is
    /// an integer, null when the conditional draw was unavailable.
    pub partial_interval_second_moment: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, passed: bool, value: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            value,
            threshold,
            detail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    /// `ok`, `exact` (residual identically zero) or `degenerate` (zero statistic).
    pub status: String,
    pub constants: Option<LimitConstants>,
    pub levels: Vec<LevelResult>,
    pub slope: Option<SlopeFit>,
    pub theoretical_slope: Option<f64>,
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
    /// Thresholds are desk-scale choices, not consequences of the theory.
    pub engineering_thresholds: bool,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub replications: Vec<ReplicationRecord>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        crate::json::to_canonical_json(self)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    /// Columns `replication,seed,n,B_t,statistic`.
    pub fn write_replications_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "replication,seed,n,B_t,statistic")?;
        for r in &self.replications {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.replication,
                r.seed,
                r.n,
                format_f64(r.b_t),
                format_f64(r.statistic)
            )?;
        }
        Ok(())
    }

    fn finish(mut self) -> Self {
        self.passed = self.verdicts.iter().all(|v| v.passed);
        self
    }
}

/// Exact conditional law of `B_t` given the grid path, for `nt` not an integer.
struct Bridge {
    weights: DVector<f64>,
    sd: f64,
}

impl Bridge {
    fn new(grid: &HurstGrid, t: f64) -> Result<Self> {
        let sigma = grid.value_covariance(DEFAULT_GRAM_CAP)?;
        let k = DVector::from_iterator(
            grid.steps(),
            (1..=grid.steps()).map(|j| grid.cov(grid.time(j), t)).collect::<Result<Vec<_>>>()?,
        );
        let chol = sigma.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let weights = chol.solve(&k);
        let var = grid.cov(t, t)? - k.dot(&weights);
        Ok(Self {
            weights,
            sd: var.max(0.0).sqrt(),
        })
    }

    fn draw(&self, path: &FbmPath) -> f64 {
        let values = &path.values()[1..];
        let mean: f64 = values.iter().zip(self.weights.iter()).map(|(v, w)| v * w).sum();
        let mut rng = rng_for(derive_seed(path.seed(), 0));
        let z: f64 = rng.sample(StandardNormal);
        mean + self.sd * z
    }
}

/// Per-replication output of a level.
struct Outcome {
    statistic: f64,
    /// Auxiliary per-path quantity (mixture variance integrand in the CLT).
    aux: f64,
    b_t: f64,
    partial: Option<f64>,
}

/// Runs `m` replications at density `n`, in replication order.
fn run_level<F>(
    config: &ExperimentConfig,
    pool: &rayon::ThreadPool,
    n: usize,
    statistic: F,
) -> Result<Vec<(ReplicationRecord, Outcome)>>
where
    F: Fn(&FbmPath) -> Result<(f64, f64)> + Sync,
{
    let start = Instant::now();
    let grid = HurstGrid::new(config.hurst, n, config.horizon)?;
    let sampler = FbmSampler::new(grid, config.generator)?;
    if sampler.kind() != config.generator {
        log::warn!("n={n}: requested {} generator, using {}", config.generator.name(), sampler.kind().name());
    }
    let integral = (n as f64 * config.t - floor_steps(n, config.t) as f64).abs() < 1e-9;
    let bridge = if integral {
        None
    } else {
        match Bridge::new(&grid, config.t) {
            Ok(b) => Some(b),
            Err(Error::CapExceeded { .. }) => {
                log::warn!("n={n}: grid too large for the exact B_t draw; partial-interval term unavailable");
                None
            }
            Err(e) => return Err(e),
        }
    };
    let f = &config.f;
    let out = pool.install(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|r| {
                let seed = config.replication_seed(n, r);
                let path = sampler.sample(seed);
                let (stat, aux) = statistic(&path)?;
                let grid_value = path.value_at(config.t)?;
                let (b_t, partial) = if integral {
                    (grid_value, Some(0.0))
                } else if let Some(b) = &bridge {
                    let b_t = b.draw(&path);
                    (b_t, Some((f.eval(b_t) - f.eval(grid_value)).powi(2)))
                } else {
                    (grid_value, None)
                };
                Ok((
                    ReplicationRecord {
                        replication: r,
                        seed,
                        n,
                        b_t,
                        statistic: stat,
                    },
                    Outcome {
                        statistic: stat,
                        aux,
                        b_t,
                        partial,
                    },
                ))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    log::info!(
        "n={n}: {} replications in {:.2}s",
        config.replications,
        start.elapsed().as_secs_f64()
    );
    Ok(out)
}

fn thread_pool(config: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))
}

/// Fills the fields of a level that every experiment shares.
fn summarize(n: usize, outcomes: &[Outcome]) -> Result<LevelResult> {
    let stats: Vec<f64> = outcomes.iter().map(|o| o.statistic).collect();
    let squares: Vec<f64> = stats.iter().map(|s| s * s).collect();
    let sq = SampleSummary::from_slice(&squares)?;
    let partial = outcomes
        .iter()
        .map(|o| o.partial)
        .collect::<Option<Vec<f64>>>()
        .map(|p| p.iter().copied().collect::<NeumaierSum>().total() / p.len() as f64);
    Ok(LevelResult {
        n,
        summary: SampleSummary::from_slice(&stats)?,
        mean_square: sq.mean,
        mean_square_se: sq.mean_se(),
        target_variance: None,
        variance_ratio: None,
        exact_variance: None,
        ks: None,
        correlation_with_b_t: None,
        partial_interval_second_moment: partial,
    })
}

fn new_report(kind: ExperimentKind, config: &ExperimentConfig) -> ExperimentReport {
    ExperimentReport {
        experiment: kind,
        config: config.clone(),
        status: "ok".into(),
        constants: None,
        levels: Vec::new(),
        slope: None,
        theoretical_slope: None,
        verdicts: Vec::new(),
        passed: false,
        engineering_thresholds: true,
        notes: Vec::new(),
        replications: Vec::new(),
    }
}

/// `beta(H)^2`, plus the first-chaos contribution that survives only in the
/// Brownian case.
fn limit_variance_per_unit_time(constants: &LimitConstants) -> f64 {
    let brownian = if (constants.hurst - 0.5).abs() < 1e-12 { 225.0 } else { 0.0 };
    constants.beta_squared + brownian
}

/// Exact `Var(sum_{j<N} dB_j^5)` scaled by `n^{10H-1}`:
/// `n^{-1} sum_{|p|<N} (N-|p|) m(rho(p)/2)` with `m(c) = E[X^5 Y^5]`.
pub fn clt_exact_variance(hurst: f64, n: usize, steps: usize) -> f64 {
    let e5 = power_to_hermite(5).expect("5 is supported");
    let mut acc = NeumaierSum::new();
    for p in (1..steps).rev() {
        acc.add(2.0 * (steps - p) as f64 * e5.moment_product(0.5 * rho(p as i64, hurst)));
    }
    acc.add(steps as f64 * e5.moment_product(1.0));
    acc.total() / n as f64
}

/// Critical-point CLT: `n^{(10H-1)/2} E_n` against `N(0, beta^2 c^2 t)`.
pub fn run_clt_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if config.hurst > 0.5 {
        return Err(Error::Config(format!("the CLT experiment needs H <= 1/2, got {}", config.hurst)));
    }
    let mut report = new_report(ExperimentKind::Clt, config);
    let f5 = config.f.derivative(5);
    let c = f5.constant_value();
    if c == Some(0.0) {
        report.status = "degenerate".into();
        report.notes.push("f^(5) vanishes identically, so E_n = 0 for every path".into());
        report.verdicts.push(Verdict::new(
            "degenerate",
            true,
            0.0,
            0.0,
            "zero statistic, checks skipped".into(),
        ));
        return Ok(report.finish());
    }
    let constants = limit_constants(config.hurst, CONSTANTS_TOL)?;
    let unit = limit_variance_per_unit_time(&constants);
    report.constants = Some(constants);
    if c.is_none() {
        report.notes.push(
            "f^(5) is not constant: the limit is a Gaussian mixture, so only the variance \
             is checked, against beta^2 times the per-path integral of f^(5)(B_s)^2"
                .into(),
        );
    }
    let pool = thread_pool(config)?;
    let m = config.replications as f64;
    for &n in &config.n_values {
        let scale = (n as f64).powf((10.0 * config.hurst - 1.0) / 2.0);
        let steps = floor_steps(n, config.t);
        let rows = run_level(config, &pool, n, |path| {
            let e = scale * error_statistic(path, &config.f, config.t)?;
            let aux = if c.is_some() {
                0.0
            } else {
                let mids = path.midpoints();
                mids[..steps].iter().map(|&x| f5.eval(x).powi(2)).sum::<f64>() / n as f64
            };
            Ok((e, aux))
        })?;
        let (records, outcomes): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        let mut level = summarize(n, &outcomes)?;
        let target = match c {
            Some(c) => unit * c * c * config.t,
            None => unit * outcomes.iter().map(|o| o.aux).sum::<f64>() / m,
        };
        level.target_variance = Some(target);
        level.variance_ratio = Some(level.summary.variance / target);
        if let Some(c) = c {
            level.exact_variance = Some(c * c * clt_exact_variance(config.hurst, n, steps));
            let stats: Vec<f64> = outcomes.iter().map(|o| o.statistic).collect();
            level.ks = Some(ks_test_normal(&stats, target)?);
        }
        let stats: Vec<f64> = outcomes.iter().map(|o| o.statistic).collect();
        let b: Vec<f64> = outcomes.iter().map(|o| o.b_t).collect();
        level.correlation_with_b_t = correlation(&stats, &b).ok();
        report.levels.push(level);
        report.replications.extend(records);
    }

    let th = &config.thresholds;
    let distances: Vec<f64> = report
        .levels
        .iter()
        .map(|l| (l.variance_ratio.unwrap_or(f64::NAN) - 1.0).abs())
        .collect();
    if distances.len() >= 2 {
        let decreasing = distances.windows(2).all(|w| w[1] < w[0]);
        report.verdicts.push(Verdict::new(
            "variance_trend",
            decreasing,
            *distances.last().unwrap(),
            distances[0],
            format!("|Var/target - 1| across n: {distances:?}"),
        ));
    }
    let last = report.levels.last().expect("n_values is non-empty");
    let target = last.target_variance.unwrap();
    let allowed = th.variance_tolerance.max(th.variance_se_factor * last.summary.variance_se / target);
    let dist = *distances.last().unwrap();
    report.verdicts.push(Verdict::new(
        "variance_at_largest_n",
        dist <= allowed,
        dist,
        allowed,
        format!("Var(E_n) = {} vs target {target}", last.summary.variance),
    ));
    if let Some(ks) = last.ks {
        report.verdicts.push(Verdict::new(
            "ks_normal",
            ks.p_value > th.ks_alpha,
            ks.p_value,
            th.ks_alpha,
            format!("KS D = {} against N(0, {target})", ks.statistic),
        ));
    }
    let corr_bound = th.corr_factor / m.sqrt();
    let corr = last.correlation_with_b_t.unwrap_or(f64::NAN);
    report.verdicts.push(Verdict::new(
        "independence_from_b_t",
        corr.abs() < corr_bound,
        corr,
        corr_bound,
        "Pearson correlation of E_n with B_t".into(),
    ));
    let mean_bound = th.mean_factor * last.summary.std_dev() / m.sqrt();
    report.verdicts.push(Verdict::new(
        "mean_zero",
        last.summary.mean.abs() < mean_bound,
        last.summary.mean,
        mean_bound,
        "sample mean of E_n".into(),
    ));
    Ok(report.finish())
}

/// The residual `riemann_sum - (f(B_{floor(nt)/n}) - f(0))`.
fn residual(path: &FbmPath, config: &ExperimentConfig) -> Result<f64> {
    Ok(riemann_sum(path, &config.f, config.scheme, config.t)?
        - endpoint_difference(path, &config.f, config.t)?)
}

fn is_exact_for(scheme: SchemeKind, f: &TestFunction) -> bool {
    f.as_polynomial()
        .map(|p| p.degree().unwrap_or(0) <= scheme.exact_degree())
        .unwrap_or(false)
}

/// L² decay of the residual, slope against `1 - 2rH`.
pub fn run_rate_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let threshold = config.scheme.critical_hurst();
    if config.hurst <= threshold || config.hurst > 0.5 {
        return Err(Error::Config(format!(
            "the {} rate experiment needs {threshold} < H <= 1/2, got {}",
            config.scheme, config.hurst
        )));
    }
    if config.n_values.len() < 3 && !is_exact_for(config.scheme, &config.f) {
        return Err(Error::Config("the slope fit needs at least 3 values of n".into()));
    }
    let mut report = new_report(ExperimentKind::Rate, config);
    let pool = thread_pool(config)?;
    for &n in &config.n_values {
        let rows = run_level(config, &pool, n, |path| Ok((residual(path, config)?, 0.0)))?;
        let (records, outcomes): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        report.levels.push(summarize(n, &outcomes)?);
        report.replications.extend(records);
    }
    let th = &config.thresholds;
    let worst = report.levels.iter().map(|l| l.mean_square).fold(0.0, f64::max);
    if is_exact_for(config.scheme, &config.f) {
        report.status = "exact".into();
        report.notes.push(format!(
            "{} integrates polynomials of degree <= {} exactly; slope fit skipped",
            config.scheme,
            config.scheme.exact_degree()
        ));
        report.verdicts.push(Verdict::new(
            "exact",
            worst <= th.exact_tolerance,
            worst,
            th.exact_tolerance,
            "largest mean squared residual (round-off only)".into(),
        ));
        return Ok(report.finish());
    }
    let r = config.scheme.leading_error_power();
    let theory = 1.0 - 2.0 * r as f64 * config.hurst;
    report.theoretical_slope = Some(theory);
    let pairs: Vec<(f64, f64)> = report.levels.iter().map(|l| (l.n as f64, l.mean_square)).collect();
    let fit = fit_loglog_slope(&pairs)?;
    report.slope = Some(fit);
    let gap = (fit.slope - theory).abs();
    report.verdicts.push(Verdict::new(
        "slope",
        gap <= th.slope_tolerance,
        fit.slope,
        th.slope_tolerance,
        format!("fitted slope {} vs 1 - 2*{r}*H = {theory} (stderr {})", fit.slope, fit.stderr),
    ));
    Ok(report.finish())
}

/// Residual variance across `n` at, below or (as a control) above `H*`.
pub fn run_divergence_probe(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if config.n_values.len() < 2 {
        return Err(Error::Config("the divergence probe needs at least 2 values of n".into()));
    }
    if is_exact_for(config.scheme, &config.f) {
        return Err(Error::Config(format!(
            "{} is exact for f = {}, nothing can diverge",
            config.scheme, config.f
        )));
    }
    let threshold = config.scheme.critical_hurst();
    let critical = (config.hurst - threshold).abs() < 1e-12;
    let mut report = new_report(ExperimentKind::Diverge, config);
    let mut plateau = None;
    if critical {
        let c = config.f.derivative(5).constant_value();
        match (config.scheme, c) {
            (SchemeKind::Simpson, Some(c)) if c != 0.0 => {
                let constants = limit_constants(config.hurst, CONSTANTS_TOL)?;
                plateau = Some(constants.beta_squared * c * c * config.t / (2880.0 * 2880.0));
                report.constants = Some(constants);
            }
            _ => {
                return Err(Error::Config(
                    "at H = H* the plateau is known only for Simpson with constant f^(5)".into(),
                ))
            }
        }
    }
    let pool = thread_pool(config)?;
    for &n in &config.n_values {
        let rows = run_level(config, &pool, n, |path| Ok((residual(path, config)?, 0.0)))?;
        let (records, outcomes): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        let mut level = summarize(n, &outcomes)?;
        if let Some(p) = plateau {
            level.target_variance = Some(p);
            level.variance_ratio = Some(level.summary.variance / p);
        }
        report.levels.push(level);
        report.replications.extend(records);
    }
    let th = &config.thresholds;
    let vars: Vec<(f64, f64)> = report
        .levels
        .iter()
        .map(|l| (l.summary.variance, l.summary.variance_se))
        .collect();
    let (first, last) = (vars[0], *vars.last().unwrap());
    if critical {
        let p = plateau.unwrap();
        report.verdicts.push(Verdict::new(
            "non_vanishing",
            last.0 > th.plateau_fraction * p,
            last.0,
            th.plateau_fraction * p,
            format!("variance at the largest n vs plateau beta^2 t / 2880^2 = {p}"),
        ));
    } else if config.hurst < threshold {
        let worst_drop = vars
            .windows(2)
            .map(|w| (w[0].0 - w[1].0) / (w[0].1.hypot(w[1].1)).max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max);
        report.verdicts.push(Verdict::new(
            "non_decreasing",
            worst_drop <= th.growth_se_factor,
            worst_drop,
            th.growth_se_factor,
            format!(
                "largest step-to-step drop in combined SEs; variances {:?}",
                vars.iter().map(|v| v.0).collect::<Vec<_>>()
            ),
        ));
    } else {
        let ratio = first.0 / last.0;
        report.notes.push(format!("H > H* = {threshold}: control run, the residual should vanish"));
        report.verdicts.push(Verdict::new(
            "vanishing",
            ratio >= th.decay_factor,
            ratio,
            th.decay_factor,
            "variance ratio from the first to the last n".into(),
        ));
    }
    Ok(report.finish())
}

pub fn run(kind: ExperimentKind, config: &ExperimentConfig) -> Result<ExperimentReport> {
    match kind {
        ExperimentKind::Clt => run_clt_experiment(config),
        ExperimentKind::Rate => run_rate_experiment(config),
        ExperimentKind::Diverge => run_divergence_probe(config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::default_for(kind);
        c.replications = 200;
        c
    }

    #[test]
    fn config_text_round_trip() {
        let mut c = ExperimentConfig::clt_default();
        c.apply_text(
            "# sweep\nH = 0.2\nscheme = milne\nf = 0,0,0,0,0,0,0,1/5040\nn = 2^8, 512\nn = 1024\n\
             M = 300 # replications\nseed = 7\ngenerator = cholesky\nslope_tolerance = 0.4\nthreads=3\n",
        )
        .unwrap();
        assert_eq!(c.hurst, 0.2);
        assert_eq!(c.scheme, SchemeKind::Milne);
        assert_eq!(c.n_values, vec![256, 512, 1024]);
        assert_eq!(c.replications, 300);
        assert_eq!(c.master_seed, 7);
        assert_eq!(c.generator, GeneratorKind::CholeskyExact);
        assert_eq!(c.thresholds.slope_tolerance, 0.4);
        assert_eq!(c.threads, Some(3));
        assert_eq!(c.f, TestFunction::normalized_monomial(7));
        c.validate().unwrap();
    }

    #[test]
    fn config_errors() {
        let mut c = ExperimentConfig::clt_default();
        assert!(c.apply_text("bogus = 1").is_err());
        assert!(c.apply_text("H 0.1").is_err());
        assert!(c.apply_text("n = ten").is_err());
        let mut c = ExperimentConfig::clt_default();
        c.replications = 99;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::clt_default();
        c.n_values = vec![64, 64];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::clt_default();
        c.t = 2.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn seeds_are_distinct_across_levels_and_replications() {
        let c = ExperimentConfig::clt_default();
        let mut seeds: Vec<u64> = c
            .n_values
            .iter()
            .flat_map(|&n| (0..10_000).map(move |r| (n, r)))
            .map(|(n, r)| c.replication_seed(n, r))
            .collect();
        let total = seeds.len();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), total);
    }

    #[test]
    fn exact_variance_brownian_case() {
        // iid increments: Var(n^2 sum dB^5) = 945 n^{-1} N
        let v = clt_exact_variance(0.5, 64, 64);
        assert!((v - 945.0).abs() < 1e-9);
        let v = clt_exact_variance(0.5, 64, 32);
        assert!((v - 472.5).abs() < 1e-9);
    }

    #[test]
    fn exact_variance_approaches_beta_squared() {
        let b2 = limit_constants(0.1, 1e-11).unwrap().beta_squared;
        let gaps: Vec<f64> = [1usize << 8, 1 << 10, 1 << 12]
            .iter()
            .map(|&n| (clt_exact_variance(0.1, n, n) / b2 - 1.0).abs())
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        assert!(gaps[2] < 5e-3);
    }

    #[test]
    fn degenerate_clt_passes_trivially() {
        let mut c = small(ExperimentKind::Clt);
        c.f = "0,1,0,0,3".parse().unwrap();
        let r = run_clt_experiment(&c).unwrap();
        assert_eq!(r.status, "degenerate");
        assert!(r.passed);
    }

    #[test]
    fn brownian_clt_sanity() {
        let mut c = small(ExperimentKind::Clt);
        c.hurst = 0.5;
        c.n_values = vec![64, 256];
        c.replications = 1000;
        let r = run_clt_experiment(&c).unwrap();
        let last = r.levels.last().unwrap();
        assert!((last.target_variance.unwrap() - 945.0).abs() < 1e-6);
        assert!((last.exact_variance.unwrap() - 945.0).abs() < 1e-6);
        assert!(r.verdict("variance_at_largest_n").unwrap().passed, "{:?}", r.verdicts);
        assert!(r.verdict("mean_zero").unwrap().passed);
    }

    #[test]
    fn rate_rejects_subcritical_hurst() {
        let mut c = small(ExperimentKind::Rate);
        c.hurst = 0.1;
        assert!(run_rate_experiment(&c).is_err());
    }

    #[test]
    fn rate_reports_exact_for_low_degree() {
        let mut c = small(ExperimentKind::Rate);
        c.f = "1,2,3,4,5".parse().unwrap();
        c.n_values = vec![64, 128, 256];
        let r = run_rate_experiment(&c).unwrap();
        assert_eq!(r.status, "exact");
        assert!(r.slope.is_none());
        assert!(r.passed, "{:?}", r.verdicts);
    }

    #[test]
    fn partial_interval_term() {
        let mut c = small(ExperimentKind::Rate);
        c.hurst = 0.3;
        c.n_values = vec![16, 32, 64];
        c.t = 0.55;
        let r = run_rate_experiment(&c).unwrap();
        let moments: Vec<f64> = r
            .levels
            .iter()
            .map(|l| l.partial_interval_second_moment.unwrap())
            .collect();
        assert!(moments.iter().all(|&m| m > 0.0));
        assert!(moments[2] < moments[0], "{moments:?}");
        c.t = 0.5;
        let r = run_rate_experiment(&c).unwrap();
        assert!(r.levels.iter().all(|l| l.partial_interval_second_moment == Some(0.0)));
    }

    #[test]
    fn report_is_independent_of_thread_count() {
        let mut c = small(ExperimentKind::Rate);
        c.n_values = vec![32, 64, 128];
        c.threads = Some(1);
        let a = run_rate_experiment(&c).unwrap().to_json().unwrap();
        c.threads = Some(3);
        let b = run_rate_experiment(&c).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        run_rate_experiment(&c).unwrap().write_replications_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 200);
        assert!(text.starts_with("replication,seed,n,B_t,statistic\n"));
    }

    #[test]
    fn divergence_requires_known_plateau_at_threshold() {
        let mut c = small(ExperimentKind::Diverge);
        c.scheme = SchemeKind::Milne;
        c.hurst = 1.0 / 14.0;
        c.f = TestFunction::normalized_monomial(7);
        assert!(run_divergence_probe(&c).is_err());
    }
}
