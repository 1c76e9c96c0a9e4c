//! Deterministic suite of exact identities: the Hermite expansion of odd
//! powers, the polynomial exactness of each quadrature rule, and the
//! pathwise Simpson decomposition.

use rand::Rng;
use serde::Serialize;

use crate::covariance::HurstGrid;
use crate::hermite::power_to_hermite;
use crate::pathgen::{derive_seed, rng_for, FbmSampler, GeneratorKind};
use crate::schemes::{
    endpoint_difference, parse_rational, riemann_sum, simpson_error_decomposition, SchemeKind,
    TestFunction,
};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    /// Largest error, relative to the scale described by the check.
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: String, errors: &[f64], tolerance: f64) -> Self {
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        Self {
            name,
            cases: errors.len(),
            max_error,
            tolerance,
            passed: errors.iter().all(|e| e.is_finite()) && max_error <= tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Hurst values the random paths alternate between.
const PATH_HURST: [f64; 3] = [0.1, 0.25, 0.4];

/// Error relative to `max(1, scale)`.
fn relative(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(1.0)
}

/// `x^r` against its Hermite expansion at 100 uniform points of `[-5, 5]`.
pub fn hermite_reconstruction(seed: u64) -> Result<Vec<Check>> {
    let mut rng = rng_for(seed);
    let mut checks = Vec::new();
    for r in [1u32, 3, 5, 7, 9, 11] {
        let e = power_to_hermite(r)?;
        let errors: Vec<f64> = (0..100)
            .map(|_| {
                let x: f64 = rng.random_range(-5.0..5.0);
                let target = x.powi(r as i32);
                relative(e.eval(x), target, target.abs())
            })
            .collect();
        checks.push(Check::new(format!("hermite_reconstruction_r{r}"), &errors, 1e-9));
    }
    Ok(checks)
}

/// Each rule reproduces `f(B_{floor(nt)/n}) - f(0)` up to round-off for a
/// mixed-coefficient polynomial of its exact degree.
pub fn quadrature_exactness(seed: u64, paths: usize) -> Result<Vec<Check>> {
    let coeffs = ["1/3", "-2", "5/7", "1", "-3/11", "2/5", "1/13"];
    let mut checks = Vec::new();
    for scheme in SchemeKind::ALL {
        let degree = scheme.exact_degree();
        let f = TestFunction::polynomial(
            coeffs[..=degree].iter().map(|c| parse_rational(c)).collect::<Result<_>>()?,
        )?;
        let mut errors = Vec::with_capacity(paths);
        for i in 0..paths {
            let grid = HurstGrid::new(PATH_HURST[i % PATH_HURST.len()], 64, 1.0)?;
            let sampler = FbmSampler::new(grid, GeneratorKind::CirculantEmbedding)?;
            let path = sampler.sample(derive_seed(seed, i as u64));
            let sum = riemann_sum(&path, &f, scheme, 1.0)?;
            let exact = endpoint_difference(&path, &f, 1.0)?;
            errors.push(relative(sum, exact, exact.abs()));
        }
        checks.push(Check::new(format!("exactness_{}_degree{degree}", scheme.name()), &errors, 1e-10));
    }
    Ok(checks)
}

/// `main - term5 - term7 - term9 = f(B_{floor(nt)/n}) - f(0)` pathwise,
/// relative to `max(1, |main|, |f(B) - f(0)|)`.
pub fn simpson_decomposition(seed: u64, paths: usize) -> Result<Vec<Check>> {
    let functions: [(&str, TestFunction); 4] = [
        ("x5_over_120", TestFunction::normalized_monomial(5)),
        ("x7", "0,0,0,0,0,0,0,1".parse()?),
        ("x9", "0,0,0,0,0,0,0,0,0,1".parse()?),
        ("mixed_x10", "1,-1/2,3,0,-5/4,2,1/6,-7,1/9,3/5,1/10".parse()?),
    ];
    let mut checks = Vec::new();
    for n in [16usize, 64, 256] {
        let samplers = PATH_HURST
            .iter()
            .map(|&h| FbmSampler::new(HurstGrid::new(h, n, 1.0)?, GeneratorKind::CirculantEmbedding))
            .collect::<Result<Vec<_>>>()?;
        for (label, f) in &functions {
            let mut errors = Vec::with_capacity(paths);
            for i in 0..paths {
                let path = samplers[i % samplers.len()].sample(derive_seed(seed ^ n as u64, i as u64));
                let d = simpson_error_decomposition(&path, f, 1.0)?;
                let exact = endpoint_difference(&path, f, 1.0)?;
                errors.push(relative(d.reconstructed(), exact, d.main.abs().max(exact.abs())));
            }
            checks.push(Check::new(format!("simpson_decomposition_{label}_n{n}"), &errors, 1e-9));
        }
    }
    Ok(checks)
}

pub fn run_selftest(seed: u64) -> Result<SelftestReport> {
    let mut checks = hermite_reconstruction(seed)?;
    checks.extend(quadrature_exactness(seed, 100)?);
    checks.extend(simpson_decomposition(seed, 100)?);
    let passed = checks.iter().all(|c| c.passed);
    Ok(SelftestReport { seed, checks, passed })
}
