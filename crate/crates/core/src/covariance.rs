//! Closed-form fBm covariance and the discrete inner products built from it.
//!
//! With `R(s,t) = (s^{2H} + t^{2H} - |t-s|^{2H}) / 2`, the increments
//! `dB_j = B_{(j+1)/n} - B_{j/n}` form a stationary sequence with
//! `E[dB_j dB_k] = n^{-2H} rho(j-k) / 2`, where
//! `rho(p) = |p+1|^{2H} - 2|p|^{2H} + |p-1|^{2H}`.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Default maximal number of increments for which dense covariance matrices
/// are materialised.
pub const DEFAULT_GRAM_CAP: usize = 4096;

/// `|x|^a` with `0^a = 0` for every exponent.
#[inline]
fn abs_pow(x: f64, a: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.abs().powf(a)
    }
}

/// Number of grid steps in `[0, t]`, i.e. `floor(n t)`, tolerant to the
/// rounding of products such as `100 * 0.29`.
pub fn floor_steps(n: usize, t: f64) -> usize {
    let x = n as f64 * t;
    (x + 1e-9 * x.abs().max(1.0)).floor().max(0.0) as usize
}

/// Second difference of `|x|^{2H}` at integer lag `p`.
///
/// For `|p| >= 4` the binomial series
/// `|p|^{2H} * 2 * sum_{k>=1} C(2H, 2k) p^{-2k}` is used instead of the direct
/// formula, which loses all significant digits to cancellation at large lags.
pub fn rho(p: i64, hurst: f64) -> f64 {
    let a = 2.0 * hurst;
    let q = p.unsigned_abs();
    if q < 4 {
        let x = q as f64;
        return abs_pow(x + 1.0, a) - 2.0 * abs_pow(x, a) + abs_pow(x - 1.0, a);
    }
    let x = q as f64;
    let inv2 = 1.0 / (x * x);
    // binom(a, j) built iteratively; only even j contribute.
    let mut binom = 1.0;
    let mut power = 1.0;
    let mut series = 0.0;
    for j in 0..80u32 {
        binom *= (a - j as f64) / (j as f64 + 1.0);
        if j % 2 == 1 {
            power *= inv2;
            let term = binom * power;
            series += term;
            if term.abs() <= 1e-18 * series.abs() || binom == 0.0 {
                break;
            }
        }
    }
    2.0 * x.powf(a) * series
}

/// Families of increment row sums
/// `sum_{j < floor(nt)} |<d_j, .>|^r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RowSumKind {
    /// `<d_j, eps_s>` for a fixed time `s`.
    EpsPower { s: f64 },
    /// `<d_j, eps~_j>` (diagonal midpoint family).
    MidpointPower,
    /// `<d_j, d_k>` for a fixed index `k`.
    IncPower { k: usize },
}

/// Hurst parameter together with the uniform partition `{j/n}` of `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HurstGrid {
    hurst: f64,
    n: usize,
    horizon: f64,
    steps: usize,
}

impl HurstGrid {
    pub fn new(hurst: f64, n: usize, horizon: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "Hurst parameter must lie in (0, 1), got {hurst}"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "partition density n must be at least 2, got {n}"
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon T must be positive, got {horizon}"
            )));
        }
        let steps = floor_steps(n, horizon);
        if steps < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 3 points, floor(nT) + 1 = {}",
                steps + 1
            )));
        }
        Ok(Self {
            hurst,
            n,
            horizon,
            steps,
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `floor(nT)`, the number of increments.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `floor(nT) + 1`, the number of grid points including `t = 0`.
    pub fn points(&self) -> usize {
        self.steps + 1
    }

    #[inline]
    pub fn time(&self, j: usize) -> f64 {
        j as f64 / self.n as f64
    }

    /// `floor(nt)` after checking `0 <= t <= T`.
    pub fn steps_until(&self, t: f64) -> Result<usize> {
        self.check_time(t)?;
        Ok(floor_steps(self.n, t).min(self.steps))
    }

    /// `n^{-2H}`, the variance of one increment.
    pub fn increment_variance(&self) -> f64 {
        (self.n as f64).powf(-2.0 * self.hurst)
    }

    /// `E[dB_j dB_{j+lag}]`, available for any lag by stationarity.
    pub fn increment_autocov(&self, lag: i64) -> f64 {
        if lag == 0 {
            self.increment_variance()
        } else {
            0.5 * self.increment_variance() * rho(lag, self.hurst)
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.steps {
            return Err(Error::IndexOutOfRange {
                index: j,
                steps: self.steps,
            });
        }
        Ok(())
    }

    #[inline]
    fn kernel(&self, s: f64, t: f64) -> f64 {
        let a = 2.0 * self.hurst;
        0.5 * (abs_pow(s, a) + abs_pow(t, a) - abs_pow(t - s, a))
    }

    /// `E[B_s B_t]`.
    pub fn cov(&self, s: f64, t: f64) -> Result<f64> {
        self.check_time(s)?;
        self.check_time(t)?;
        Ok(self.kernel(s, t))
    }

    /// `<d_j, d_k>_H = E[dB_j dB_k]`.
    pub fn inc_inner(&self, j: usize, k: usize) -> Result<f64> {
        self.check_index(j)?;
        self.check_index(k)?;
        Ok(self.increment_autocov(j as i64 - k as i64))
    }

    /// `<d_j, eps_t>_H = E[dB_j B_t] = R((j+1)/n, t) - R(j/n, t)`.
    pub fn inc_vs_eps(&self, j: usize, t: f64) -> Result<f64> {
        self.check_index(j)?;
        self.check_time(t)?;
        Ok(self.kernel(self.time(j + 1), t) - self.kernel(self.time(j), t))
    }

    /// `<d_j, eps~_k>_H` with `eps~_k = (eps_{k/n} + eps_{(k+1)/n}) / 2`.
    pub fn inc_vs_midpoint_eps(&self, j: usize, k: usize) -> Result<f64> {
        self.check_index(k)?;
        let left = self.inc_vs_eps(j, self.time(k))?;
        let right = self.inc_vs_eps(j, self.time(k + 1))?;
        Ok(0.5 * (left + right))
    }

    /// Exact row sum `sum_{j=0}^{floor(nt)-1} |<d_j, .>|^r` of the chosen family.
    pub fn row_sum(&self, kind: RowSumKind, r: u32, t: f64) -> Result<f64> {
        if r == 0 {
            return Err(Error::InvalidParameter("power r must be >= 1".into()));
        }
        let upto = self.steps_until(t)?;
        let exponent = r as i32;
        let mut total = 0.0;
        match kind {
            RowSumKind::EpsPower { s } => {
                self.check_time(s)?;
                for j in 0..upto {
                    total += self.inc_vs_eps(j, s)?.abs().powi(exponent);
                }
            }
            RowSumKind::MidpointPower => {
                for j in 0..upto {
                    total += self.inc_vs_midpoint_eps(j, j)?.abs().powi(exponent);
                }
            }
            RowSumKind::IncPower { k } => {
                self.check_index(k)?;
                for j in 0..upto {
                    total += self.inc_inner(j, k)?.abs().powi(exponent);
                }
            }
        }
        Ok(total)
    }

    /// Dense Gram matrix `[E[dB_j dB_k]]` of the increments.
    pub fn increment_gram(&self, cap: usize) -> Result<DMatrix<f64>> {
        let m = self.steps;
        if m > cap {
            return Err(Error::CapExceeded { steps: m, cap });
        }
        let lags: Vec<f64> = (0..m as i64).map(|p| self.increment_autocov(p)).collect();
        Ok(DMatrix::from_fn(m, m, |j, k| lags[j.abs_diff(k)]))
    }

    /// Dense covariance `[R(j/n, k/n)]` of the path values at `j = 1..=floor(nT)`.
    pub fn value_covariance(&self, cap: usize) -> Result<DMatrix<f64>> {
        let m = self.steps;
        if m > cap {
            return Err(Error::CapExceeded { steps: m, cap });
        }
        Ok(DMatrix::from_fn(m, m, |j, k| {
            self.kernel(self.time(j + 1), self.time(k + 1))
        }))
    }
}
