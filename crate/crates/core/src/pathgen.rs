//! Exact sampling of fBm on the uniform grid.
//!
//! Two samplers produce the same law: a dense Cholesky factor of the
//! increment covariance (slow, used as the oracle) and circulant embedding
//! of the fractional Gaussian noise (`O(m log m)` per path). Both are driven
//! by a ChaCha20 stream keyed from a 64-bit seed.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::covariance::{rho, HurstGrid, DEFAULT_GRAM_CAP};
use crate::{Error, Result};

/// Eigenvalues of the normalised embedding above `-EIGEN_TOLERANCE` are clamped to zero.
pub const EIGEN_TOLERANCE: f64 = 1e-9;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `index`-th child stream of `master`.
///
/// For a fixed master this is a bijection of `index`, so distinct
/// replications never share a ChaCha key.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(
        master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
    )
}

/// Random stream used for one path.
pub fn rng_for(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    CholeskyExact,
    CirculantEmbedding,
}

impl GeneratorKind {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::CholeskyExact => "cholesky",
            GeneratorKind::CirculantEmbedding => "circulant",
        }
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cholesky" | "cholesky_exact" => Ok(GeneratorKind::CholeskyExact),
            "circulant" | "circulant_embedding" | "davies-harte" => {
                Ok(GeneratorKind::CirculantEmbedding)
            }
            other => Err(Error::Config(format!("unknown generator `{other}`"))),
        }
    }
}

/// One sampled trajectory `B_{j/n}`, `j = 0..=floor(nT)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FbmPath {
    grid: HurstGrid,
    values: Vec<f64>,
    seed: u64,
}

impl FbmPath {
    pub fn from_values(grid: HurstGrid, values: Vec<f64>, seed: u64) -> Result<Self> {
        if values.len() != grid.points() {
            return Err(Error::InvalidParameter(format!(
                "path needs {} values, got {}",
                grid.points(),
                values.len()
            )));
        }
        if values[0] != 0.0 {
            return Err(Error::InvalidParameter("path must start at 0".into()));
        }
        Ok(Self { grid, values, seed })
    }

    fn from_increments(grid: HurstGrid, increments: &[f64], seed: u64) -> Self {
        let mut values = Vec::with_capacity(increments.len() + 1);
        let mut level = 0.0;
        values.push(level);
        for dx in increments {
            level += dx;
            values.push(level);
        }
        Self { grid, values, seed }
    }

    pub fn grid(&self) -> &HurstGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `dB_j = B_{(j+1)/n} - B_{j/n}`.
    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `B~_j = B_{j/n} + dB_j / 2`.
    pub fn midpoints(&self) -> Vec<f64> {
        self.values
            .windows(2)
            .map(|w| w[0] + 0.5 * (w[1] - w[0]))
            .collect()
    }

    /// `B_{floor(nt)/n}`.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        Ok(self.values[self.grid.steps_until(t)?])
    }

    /// Writes the path as CSV with header `t,B`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,B")?;
        for (j, b) in self.values.iter().enumerate() {
            writeln!(
                out,
                "{},{}",
                crate::json::format_f64(self.grid.time(j)),
                crate::json::format_f64(*b)
            )?;
        }
        Ok(())
    }
}

/// Eigenvalues of the circulant embedding (length `2 * steps`) of the
/// unit-variance fractional Gaussian noise autocovariance `rho(k) / 2`.
pub fn circulant_spectrum(hurst: f64, steps: usize) -> Vec<f64> {
    let m = 2 * steps;
    let mut row = vec![Complex::new(0.0, 0.0); m];
    for k in 0..=steps {
        let c = 0.5 * rho(k as i64, hurst);
        row[k] = Complex::new(c, 0.0);
        if k > 0 && k < steps {
            row[m - k] = Complex::new(c, 0.0);
        }
    }
    FftPlanner::new().plan_fft_forward(m).process(&mut row);
    row.into_iter().map(|z| z.re).collect()
}

enum Method {
    Cholesky {
        lower: DMatrix<f64>,
    },
    Circulant {
        sqrt_eigen: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
}

/// Precomputed sampler for one grid; cheap to share across threads.
pub struct FbmSampler {
    grid: HurstGrid,
    method: Method,
    min_eigenvalue: Option<f64>,
    clamped: usize,
}

impl std::fmt::Debug for FbmSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FbmSampler")
            .field("grid", &self.grid)
            .field("kind", &self.kind())
            .field("min_eigenvalue", &self.min_eigenvalue)
            .field("clamped", &self.clamped)
            .finish()
    }
}

impl FbmSampler {
    pub fn new(grid: HurstGrid, kind: GeneratorKind) -> Result<Self> {
        Self::with_cap(grid, kind, DEFAULT_GRAM_CAP)
    }

    pub fn with_cap(grid: HurstGrid, kind: GeneratorKind, cap: usize) -> Result<Self> {
        match kind {
            GeneratorKind::CholeskyExact => Self::cholesky(grid, cap),
            GeneratorKind::CirculantEmbedding => {
                let steps = grid.steps();
                let spectrum = circulant_spectrum(grid.hurst(), steps);
                let min = spectrum.iter().copied().fold(f64::INFINITY, f64::min);
                if min < -EIGEN_TOLERANCE {
                    log::warn!(
                        "circulant embedding min eigenvalue {min:e}; falling back to Cholesky"
                    );
                    return Self::cholesky(grid, cap).map_err(|e| match e {
                        Error::CapExceeded { .. } => Error::EmbeddingFailed(min),
                        other => other,
                    });
                }
                let m = spectrum.len() as f64;
                let clamped = spectrum.iter().filter(|&&l| l < 0.0).count();
                let sqrt_eigen = spectrum.iter().map(|&l| (l.max(0.0) / m).sqrt()).collect();
                let fft = FftPlanner::new().plan_fft_forward(spectrum.len());
                Ok(Self {
                    grid,
                    method: Method::Circulant { sqrt_eigen, fft },
                    min_eigenvalue: Some(min),
                    clamped,
                })
            }
        }
    }

    fn cholesky(grid: HurstGrid, cap: usize) -> Result<Self> {
        let gram = grid.increment_gram(cap)?;
        let lower = gram.cholesky().ok_or(Error::NotPositiveDefinite)?.unpack();
        Ok(Self {
            grid,
            method: Method::Cholesky { lower },
            min_eigenvalue: None,
            clamped: 0,
        })
    }

    pub fn grid(&self) -> &HurstGrid {
        &self.grid
    }

    /// Method actually in use, after any fallback.
    pub fn kind(&self) -> GeneratorKind {
        match self.method {
            Method::Cholesky { .. } => GeneratorKind::CholeskyExact,
            Method::Circulant { .. } => GeneratorKind::CirculantEmbedding,
        }
    }

    /// Smallest normalised embedding eigenvalue (circulant only).
    pub fn min_eigenvalue(&self) -> Option<f64> {
        self.min_eigenvalue
    }

    /// Number of negative eigenvalues clamped to zero.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    /// Fills `out` (length `steps`) with one draw of the increments.
    pub fn sample_increments<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let steps = self.grid.steps();
        assert_eq!(out.len(), steps, "increment buffer has wrong length");
        match &self.method {
            Method::Cholesky { lower } => {
                out.fill(0.0);
                for i in 0..steps {
                    let z: f64 = rng.sample(StandardNormal);
                    let column = lower.column(i);
                    for j in i..steps {
                        out[j] += column[j] * z;
                    }
                }
            }
            Method::Circulant { sqrt_eigen, fft } => {
                let scale = (self.grid.n() as f64).powf(-self.grid.hurst());
                let mut buf: Vec<Complex<f64>> = sqrt_eigen
                    .iter()
                    .map(|&s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                for (o, z) in out.iter_mut().zip(&buf) {
                    *o = scale * z.re;
                }
            }
        }
    }

    pub fn sample(&self, seed: u64) -> FbmPath {
        let mut rng = rng_for(seed);
        let mut inc = vec![0.0; self.grid.steps()];
        self.sample_increments(&mut rng, &mut inc);
        FbmPath::from_increments(self.grid, &inc, seed)
    }
}

/// One-shot sampling; build an [`FbmSampler`] when drawing many paths.
pub fn generate(grid: HurstGrid, kind: GeneratorKind, seed: u64) -> Result<FbmPath> {
    Ok(FbmSampler::new(grid, kind)?.sample(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: f64, n: usize) -> HurstGrid {
        HurstGrid::new(h, n, 1.0).unwrap()
    }

    #[test]
    fn increments_and_midpoints_examples() {
        let g = grid(0.3, 4);
        let path = FbmPath::from_values(g, vec![0.0, 1.0, 3.0, 2.0, 5.0], 0).unwrap();
        assert_eq!(path.increments(), vec![1.0, 2.0, -1.0, 3.0]);
        let total: f64 = path.increments().iter().sum();
        assert_eq!(total, 5.0);
        let mids = path.midpoints();
        for (j, (m, d)) in mids.iter().zip(path.increments()).enumerate() {
            assert_eq!(*m, path.values()[j] + d / 2.0);
        }
        assert_eq!(mids[0], 0.5);

        let zero = FbmPath::from_values(g, vec![0.0; 5], 0).unwrap();
        assert!(zero.increments().iter().all(|&d| d == 0.0));
        assert!(zero.midpoints().iter().all(|&d| d == 0.0));

        let g2 = HurstGrid::new(0.3, 2, 1.0).unwrap();
        let p = FbmPath::from_values(g2, vec![0.0, 2.0, 2.0], 0).unwrap();
        assert_eq!(p.midpoints()[0], 1.0);

        assert!(FbmPath::from_values(g, vec![0.0; 4], 0).is_err());
        assert!(FbmPath::from_values(g, vec![1.0, 0.0, 0.0, 0.0, 0.0], 0).is_err());
    }

    #[test]
    fn generate_is_reproducible_and_well_formed() {
        for kind in [GeneratorKind::CholeskyExact, GeneratorKind::CirculantEmbedding] {
            let g = grid(0.1, 100);
            let a = generate(g, kind, 42).unwrap();
            let b = generate(g, kind, 42).unwrap();
            let c = generate(g, kind, 43).unwrap();
            assert_eq!(a, b);
            assert_ne!(a.values(), c.values());
            assert_eq!(a.values()[0], 0.0);
            assert_eq!(a.values().len(), 101);
            assert_eq!(a.seed(), 42);
        }
    }

    #[test]
    fn derived_seeds_do_not_collide() {
        let mut seeds: Vec<u64> = (0..1_000_000).map(|r| derive_seed(42, r)).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 1_000_000);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }

    #[test]
    fn brownian_increments_are_uncorrelated() {
        let g = grid(0.5, 32);
        let sampler = FbmSampler::new(g, GeneratorKind::CirculantEmbedding).unwrap();
        let m = 10_000;
        let mut prod = Vec::with_capacity(m);
        for r in 0..m {
            let inc = sampler.sample(derive_seed(7, r as u64)).increments();
            prod.push(inc[3] * inc[4] * 32.0);
        }
        let mean = prod.iter().sum::<f64>() / m as f64;
        let sd = (prod.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
        assert!(mean.abs() < 4.0 * sd / (m as f64).sqrt(), "lag-1 corr {mean}");
    }

    #[test]
    fn increment_variance_and_self_similarity() {
        let g = grid(0.1, 256);
        let sampler = FbmSampler::new(g, GeneratorKind::CirculantEmbedding).unwrap();
        let m = 10_000;
        let mut sq = Vec::with_capacity(m);
        let mut at: [Vec<f64>; 3] = Default::default();
        for r in 0..m {
            let path = sampler.sample(derive_seed(11, r as u64));
            let d = path.values()[100] - path.values()[99];
            sq.push(d * d);
            for (i, t) in [0.25, 0.5, 1.0].iter().enumerate() {
                let b = path.value_at(*t).unwrap();
                at[i].push(b * b);
            }
        }
        let check = |xs: &[f64], target: f64| {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                / (xs.len() - 1) as f64)
                .sqrt();
            assert!(
                (mean - target).abs() < 4.0 * sd / (xs.len() as f64).sqrt(),
                "mean {mean} target {target}"
            );
        };
        check(&sq, 256f64.powf(-0.2));
        for (i, t) in [0.25f64, 0.5, 1.0].iter().enumerate() {
            check(&at[i], t.powf(0.2));
        }
    }

    #[test]
    fn circulant_spectrum_is_nonnegative() {
        for h in [0.05, 0.1, 1.0 / 6.0, 0.25, 0.4, 0.5, 0.7] {
            for log_n in [1u32, 4, 8, 12, 16] {
                let steps = 1usize << log_n;
                let spectrum = circulant_spectrum(h, steps.max(2));
                let min = spectrum.iter().copied().fold(f64::INFINITY, f64::min);
                assert!(min >= -EIGEN_TOLERANCE, "h={h} steps={steps} min={min:e}");
            }
        }
    }

    #[test]
    fn circulant_sampler_reports_no_clamping_and_keeps_kind() {
        let g = grid(0.1, 1 << 10);
        let s = FbmSampler::new(g, GeneratorKind::CirculantEmbedding).unwrap();
        assert_eq!(s.kind(), GeneratorKind::CirculantEmbedding);
        assert!(s.min_eigenvalue().unwrap() >= -EIGEN_TOLERANCE);
    }

    #[test]
    fn cholesky_respects_cap() {
        let g = grid(0.1, 200);
        assert!(matches!(
            FbmSampler::with_cap(g, GeneratorKind::CholeskyExact, 100),
            Err(Error::CapExceeded { .. })
        ));
        assert!(FbmSampler::with_cap(g, GeneratorKind::CirculantEmbedding, 100).is_ok());
    }

    #[test]
    fn csv_dump_has_one_row_per_point() {
        let g = grid(0.1, 16);
        let path = generate(g, GeneratorKind::CirculantEmbedding, 1).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,B");
        assert_eq!(lines.len(), 18);
        assert!(lines[1].starts_with("0"));
    }

    #[test]
    fn generator_kind_parses() {
        assert_eq!("cholesky".parse::<GeneratorKind>().unwrap(), GeneratorKind::CholeskyExact);
        assert_eq!(
            "Circulant".parse::<GeneratorKind>().unwrap(),
            GeneratorKind::CirculantEmbedding
        );
        assert!("wavelet".parse::<GeneratorKind>().is_err());
    }
}
