//! Lattice sums `kappa_m = sum_{p in Z} rho(p)^m` and the limit constant
//! `beta = sqrt(5!/2^5 kappa_5 + 75 kappa_3)` of the critical Simpson error.

use serde::Serialize;

use crate::covariance::rho;
use crate::{Error, NeumaierSum, Result};

const MAX_TRUNCATION: u64 = 1 << 40;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KappaResult {
    pub m: u32,
    pub hurst: f64,
    pub value: f64,
    pub truncation: u64,
    pub tail_bound: f64,
}

/// Bound on `sum_{|p| > P} |rho(p)|^m` from
/// `|rho(p)| <= 2H|2H-1| (|p|-1)^{2H-2}` for `|p| >= 2`.
pub fn kappa_tail_bound(m: u32, hurst: f64, truncation: u64) -> f64 {
    let c = 2.0 * hurst * (2.0 * hurst - 1.0).abs();
    if c == 0.0 {
        return 0.0;
    }
    let s = m as f64 * (2.0 - 2.0 * hurst);
    let p = truncation.max(1) as f64;
    2.0 * c.powi(m as i32) * (p.powf(-s) + p.powf(1.0 - s) / (s - 1.0))
}

/// `sum_{|p| <= P} rho(p)^m`, smallest terms first with compensation.
pub fn kappa_truncated(m: u32, hurst: f64, truncation: u64) -> f64 {
    let mut acc = NeumaierSum::new();
    for p in (1..=truncation).rev() {
        acc.add(2.0 * rho(p as i64, hurst).powi(m as i32));
    }
    acc.add(rho(0, hurst).powi(m as i32));
    acc.total()
}

fn check_convergent(m: u32, hurst: f64) -> Result<()> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::InvalidParameter(format!("Hurst parameter {hurst} outside (0, 1)")));
    }
    if m < 3 || m.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("power m = {m} must be odd and >= 3")));
    }
    if m as f64 * (2.0 - 2.0 * hurst) <= 1.0 {
        return Err(Error::Divergent { m, hurst });
    }
    Ok(())
}

/// `kappa_m(H)` with a rigorous tail bound below `tol`.
pub fn kappa(m: u32, hurst: f64, tol: f64) -> Result<KappaResult> {
    check_convergent(m, hurst)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let fits = |p: u64| kappa_tail_bound(m, hurst, p) < tol;
    let mut hi = 1u64;
    while !fits(hi) {
        hi *= 2;
        if hi > MAX_TRUNCATION {
            return Err(Error::InvalidParameter(format!(
                "tolerance {tol:e} needs more than {MAX_TRUNCATION} terms"
            )));
        }
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let truncation = if fits(lo) && lo > 0 { lo } else { hi };
    Ok(KappaResult {
        m,
        hurst,
        value: kappa_truncated(m, hurst, truncation),
        truncation,
        tail_bound: kappa_tail_bound(m, hurst, truncation),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LimitConstants {
    pub hurst: f64,
    pub tol: f64,
    pub kappa3: KappaResult,
    pub kappa5: KappaResult,
    /// `5!/2^5 kappa_5 + 75 kappa_3`.
    pub beta_squared: f64,
    pub beta: f64,
}

impl LimitConstants {
    pub fn truncation(&self) -> u64 {
        self.kappa3.truncation.max(self.kappa5.truncation)
    }

    pub fn tail_bound(&self) -> f64 {
        self.kappa3.tail_bound.max(self.kappa5.tail_bound)
    }
}

pub fn limit_constants(hurst: f64, tol: f64) -> Result<LimitConstants> {
    if !(hurst > 0.0 && hurst <= 0.5) {
        return Err(Error::InvalidParameter(format!(
            "beta is defined here for H in (0, 1/2], got {hurst}"
        )));
    }
    let kappa3 = kappa(3, hurst, tol)?;
    let kappa5 = kappa(5, hurst, tol)?;
    let radicand = 120.0 / 32.0 * kappa5.value + 75.0 * kappa3.value;
    if !(radicand > 0.0) {
        return Err(Error::NegativeRadicand(radicand));
    }
    Ok(LimitConstants {
        hurst,
        tol,
        kappa3,
        kappa5,
        beta_squared: radicand,
        beta: radicand.sqrt(),
    })
}

pub fn beta(hurst: f64, tol: f64) -> Result<f64> {
    Ok(limit_constants(hurst, tol)?.beta)
}
