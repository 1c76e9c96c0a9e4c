//! Summary statistics and the hypothesis tests used by the experiments.

use serde::Serialize;
use statrs::function::erf::erfc;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SampleSummary {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Standard error of `variance`, `sqrt((mu4 - sigma^4) / count)`.
    pub variance_se: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl SampleSummary {
    /// One-pass central moments (Welford / Terriberry updates).
    pub fn from_slice(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::Degenerate(format!("need at least 2 samples, got {}", xs.len())));
        }
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::Degenerate("non-finite sample".into()));
        }
        let (mut n, mut mean, mut m2, mut m3, mut m4) = (0f64, 0f64, 0f64, 0f64, 0f64);
        for &x in xs {
            let n1 = n;
            n += 1.0;
            let delta = x - mean;
            let delta_n = delta / n;
            let delta_n2 = delta_n * delta_n;
            let term1 = delta * delta_n * n1;
            mean += delta_n;
            m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * m2 - 4.0 * delta_n * m3;
            m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * m2;
            m2 += term1;
        }
        let variance = m2 / (n - 1.0);
        let mu2 = m2 / n;
        let mu4 = m4 / n;
        let variance_se = ((mu4 - mu2 * mu2).max(0.0) / n).sqrt();
        let (skewness, excess_kurtosis) = if mu2 > 0.0 {
            (m3 / n / mu2.powf(1.5), mu4 / (mu2 * mu2) - 3.0)
        } else {
            (f64::NAN, f64::NAN)
        };
        Ok(Self {
            count: xs.len(),
            mean,
            variance,
            variance_se,
            skewness,
            excess_kurtosis,
        })
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Standard error of the mean.
    pub fn mean_se(&self) -> f64 {
        (self.variance / self.count as f64).sqrt()
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.5 {
        // P(K <= x) = sqrt(2 pi)/x sum_k exp(-(2k-1)^2 pi^2 / (8 x^2))
        let coef = (2.0 * std::f64::consts::PI).sqrt() / x;
        let a = std::f64::consts::PI * std::f64::consts::PI / (8.0 * x * x);
        let mut cdf = 0.0;
        for k in 1..=100 {
            let odd = (2 * k - 1) as f64;
            let term = coef * (-odd * odd * a).exp();
            cdf += term;
            if term < 1e-16 {
                break;
            }
        }
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut total = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        total += if k % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn finite_sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Degenerate("non-finite sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

/// One-sample Kolmogorov-Smirnov test against the fully specified `N(0, sigma2)`.
pub fn ks_test_normal(samples: &[f64], sigma2: f64) -> Result<KsResult> {
    if samples.len() < 50 {
        return Err(Error::Degenerate(format!("KS test needs >= 50 samples, got {}", samples.len())));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidParameter(format!("reference variance must be positive, got {sigma2}")));
    }
    let sorted = finite_sorted(samples)?;
    let n = sorted.len() as f64;
    let sigma = sigma2.sqrt();
    let mut d = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let cdf = normal_cdf(x / sigma);
        d = d.max((i + 1) as f64 / n - cdf).max(cdf - i as f64 / n);
    }
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(n.sqrt() * d),
    })
}

/// Two-sample Kolmogorov-Smirnov test (asymptotic p-value).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.len() < 50 || b.len() < 50 {
        return Err(Error::Degenerate("two-sample KS test needs >= 50 samples per group".into()));
    }
    let (xa, xb) = (finite_sorted(a)?, finite_sorted(b)?);
    let (na, nb) = (xa.len(), xb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < na && j < nb {
        let x = xa[i].min(xb[j]);
        while i < na && xa[i] <= x {
            i += 1;
        }
        while j < nb && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let en = (na as f64 * nb as f64 / (na + nb) as f64).sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(en * d),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub max_residual: f64,
}

/// OLS fit of `log y` on `log n`.
pub fn fit_loglog_slope(pairs: &[(f64, f64)]) -> Result<SlopeFit> {
    if let Some(&(_, y)) = pairs.iter().find(|(_, y)| !(*y > 0.0) || !y.is_finite()) {
        return Err(Error::InvalidParameter(format!("log-log fit needs positive y, got {y}")));
    }
    if pairs.iter().any(|(n, _)| !(*n > 0.0)) {
        return Err(Error::InvalidParameter("log-log fit needs positive n".into()));
    }
    let mut distinct: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InvalidParameter("log-log fit needs at least 3 distinct n".into()));
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(n, y)| (n.ln(), y.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = pts.iter().map(|p| p.1 - intercept - slope * p.0).collect();
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    Ok(SlopeFit {
        slope,
        intercept,
        stderr: (ssr / (k - 2.0) / sxx).sqrt(),
        max_residual: residuals.iter().fold(0.0, |m, r| m.max(r.abs())),
    })
}

/// Pearson correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "correlation needs equal lengths >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation with zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
