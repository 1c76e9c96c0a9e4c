//! Riemann-sum stochastic integration against fractional Brownian motion.
//!
//! The crate samples fBm exactly on a uniform grid, evaluates the midpoint,
//! trapezoid, Simpson and Milne sums of `f'(B) dB`, decomposes the Simpson
//! error into its odd-power terms, and runs seeded Monte Carlo experiments
//! around the critical Hurst exponent `H = 1/10`, where the Simpson error
//!
//! ```text
//! E_n = sum_j f^(5)(B~_j) (dB_j)^5
//! ```
//!
//! converges in law to a centred Gaussian with variance `beta^2 * int f^(5)(B_s)^2 ds`,
//! `beta^2 = 5!/2^5 * kappa_5 + 75 * kappa_3`.

pub mod cli;
pub mod constants;
pub mod covariance;
mod error;
pub mod experiments;
pub mod hermite;
pub mod json;
pub mod pathgen;
pub mod schemes;
pub mod selftest;
pub mod stats;
mod sum;

pub use error::{Error, Result};
pub use sum::NeumaierSum;
