//! Monic (probabilists') Hermite polynomials and the expansion of odd
//! monomials in that basis.
//!
//! `x^r = sum_p C(r,p) H_{r-2p}(x)`, with `C(5, .) = [1, 10, 15]`, i.e.
//! `x^5 = H_5 + 10 H_3 + 15 H_1`.

use serde::Serialize;

use crate::{Error, Result};

/// Largest supported power in [`power_to_hermite`].
pub const MAX_POWER: u32 = 11;

/// `H_q(x)` via `H_{q+1} = x H_q - q H_{q-1}`.
pub fn hermite_eval(q: u32, x: f64) -> f64 {
    let mut prev = 1.0;
    if q == 0 {
        return prev;
    }
    let mut cur = x;
    for k in 1..q {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Integer coefficients of `H_q`, lowest degree first.
pub fn hermite_coefficients(q: u32) -> Vec<i64> {
    let q = q as usize;
    let mut prev = vec![1i64];
    if q == 0 {
        return prev;
    }
    let mut cur = vec![0i64, 1];
    for k in 1..q {
        let mut next = vec![0i64; k + 2];
        for (i, c) in cur.iter().enumerate() {
            next[i + 1] += c;
        }
        for (i, c) in prev.iter().enumerate() {
            next[i] -= k as i64 * c;
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// Coefficients `C(r,p)`, `p = 0..=r/2`, of `x^r` in the Hermite basis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChaosExpansion {
    r: u32,
    coeffs: Vec<i64>,
}

impl ChaosExpansion {
    pub fn power(&self) -> u32 {
        self.r
    }

    /// `C(r,p)` indexed by `p`.
    pub fn coeffs(&self) -> &[i64] {
        &self.coeffs
    }

    /// Iterator over `(order r - 2p, C(r,p))`.
    pub fn terms(&self) -> impl Iterator<Item = (u32, i64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .map(move |(p, &c)| (self.r - 2 * p as u32, c))
    }

    /// `sum_p C(r,p) H_{r-2p}(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        self.terms()
            .map(|(q, c)| c as f64 * hermite_eval(q, x))
            .sum()
    }

    /// `E[X^r Y^r]` for standard Gaussians with correlation `c`, using
    /// `E[H_p(X) H_q(Y)] = q! c^q 1{p = q}`.
    pub fn moment_product(&self, c: f64) -> f64 {
        self.terms()
            .map(|(q, coef)| {
                let fact: f64 = (1..=q).map(f64::from).product();
                (coef * coef) as f64 * fact * c.powi(q as i32)
            })
            .sum()
    }
}

/// Exact change of basis from `x^r` to Hermite polynomials, by back
/// substitution against the upper-triangular integer coefficient table.
pub fn power_to_hermite(r: u32) -> Result<ChaosExpansion> {
    if r == 0 || r > MAX_POWER || r.is_multiple_of(2) {
        return Err(Error::UnsupportedPower(r));
    }
    let mut residual = vec![0i64; r as usize + 1];
    residual[r as usize] = 1;
    let mut coeffs = Vec::with_capacity(r as usize / 2 + 1);
    for p in 0..=(r / 2) {
        let q = r - 2 * p;
        // leading coefficient of H_q is 1
        let c = residual[q as usize];
        coeffs.push(c);
        for (i, h) in hermite_coefficients(q).iter().enumerate() {
            residual[i] -= c * h;
        }
    }
    debug_assert!(residual.iter().all(|&c| c == 0));
    Ok(ChaosExpansion { r, coeffs })
}
