//! Riemann-sum integrators of `f'(B) dB` and the exact odd-power
//! decomposition of the Simpson error.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{One, Zero};
use serde::{Serialize, Serializer};

use crate::pathgen::FbmPath;
use crate::{Error, NeumaierSum, Result};

pub type Rational = Ratio<i128>;

/// Maximal polynomial degree accepted by [`Polynomial::new`].
pub const MAX_DEGREE: usize = 16;

fn rational_to_f64(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Parses `"3"`, `"-1/120"` or `"0.25"` exactly.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::Config(format!("invalid rational coefficient `{s}`"));
    if let Some((num, den)) = s.split_once('/') {
        let num: i128 = num.trim().parse().map_err(|_| bad())?;
        let den: i128 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        return Ok(Rational::new(num, den));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let negative = int.trim_start().starts_with('-');
        let digits = frac.len() as u32;
        if digits > 18 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let int_part: i128 = match int.trim() {
            "" | "-" | "+" => 0,
            other => other.parse().map_err(|_| bad())?,
        };
        let frac_part: i128 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let scale = 10i128.pow(digits);
        let magnitude = int_part.abs() * scale + frac_part;
        let num = if negative { -magnitude } else { magnitude };
        return Ok(Rational::new(num, scale));
    }
    Ok(Rational::from_integer(s.parse().map_err(|_| bad())?))
}

/// Polynomial with exact rational coefficients, lowest degree first.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<Rational>,
    approx: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<Rational>) -> Result<Self> {
        while coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        if coeffs.len() > MAX_DEGREE + 1 {
            return Err(Error::InvalidParameter(format!(
                "polynomial degree {} exceeds {MAX_DEGREE}",
                coeffs.len() - 1
            )));
        }
        let approx = coeffs.iter().map(rational_to_f64).collect();
        Ok(Self { coeffs, approx })
    }

    /// `c * x^k`.
    pub fn monomial(k: usize, c: Rational) -> Result<Self> {
        let mut coeffs = vec![Rational::zero(); k + 1];
        coeffs[k] = c;
        Self::new(coeffs)
    }

    pub fn coeffs(&self) -> &[Rational] {
        &self.coeffs
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn derivative(&self, k: usize) -> Self {
        if k >= self.coeffs.len() {
            return Self { coeffs: Vec::new(), approx: Vec::new() };
        }
        let coeffs: Vec<Rational> = (k..self.coeffs.len())
            .map(|i| {
                let falling: i128 = ((i - k + 1)..=i).map(|v| v as i128).product();
                self.coeffs[i] * Rational::from_integer(falling)
            })
            .collect();
        let approx = coeffs.iter().map(rational_to_f64).collect();
        Self { coeffs, approx }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.approx.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn scaled(&self, c: Rational) -> Self {
        Self::new(self.coeffs.iter().map(|a| a * c).collect()).expect("degree unchanged")
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let len = self.coeffs.len().max(other.coeffs.len());
        let zero = Rational::zero();
        Self::new(
            (0..len)
                .map(|i| self.coeffs.get(i).unwrap_or(&zero) + other.coeffs.get(i).unwrap_or(&zero))
                .collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SmoothFamily {
    Cos,
    Sin,
    Exp,
}

/// `a^k` times the `k`-th derivative shape of `cos(ax)`, `sin(ax)` or `exp(ax)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Smooth {
    pub family: SmoothFamily,
    pub scale: f64,
    pub order: u32,
}

impl Smooth {
    fn eval(&self, x: f64) -> f64 {
        let a = self.scale;
        let amp = a.powi(self.order as i32);
        let ax = a * x;
        amp * match (self.family, self.order % 4) {
            (SmoothFamily::Exp, _) => ax.exp(),
            (SmoothFamily::Cos, 0) | (SmoothFamily::Sin, 1) => ax.cos(),
            (SmoothFamily::Cos, 1) | (SmoothFamily::Sin, 2) => -ax.sin(),
            (SmoothFamily::Cos, 2) | (SmoothFamily::Sin, 3) => -ax.cos(),
            (SmoothFamily::Cos, _) | (SmoothFamily::Sin, _) => ax.sin(),
        }
    }
}

/// Integrand `f` with exact access to all derivatives.
#[derive(Clone, Debug, PartialEq)]
pub enum TestFunction {
    Polynomial(Polynomial),
    Smooth(Smooth),
}

impl TestFunction {
    pub fn polynomial(coeffs: Vec<Rational>) -> Result<Self> {
        Polynomial::new(coeffs).map(TestFunction::Polynomial)
    }

    /// `x^k / k!`, whose `k`-th derivative is identically one.
    pub fn normalized_monomial(k: usize) -> Self {
        let fact: i128 = (1..=k as i128).product();
        TestFunction::Polynomial(
            Polynomial::monomial(k, Rational::new(1, fact)).expect("k <= MAX_DEGREE"),
        )
    }

    pub fn derivative(&self, k: usize) -> Self {
        match self {
            TestFunction::Polynomial(p) => TestFunction::Polynomial(p.derivative(k)),
            TestFunction::Smooth(s) => TestFunction::Smooth(Smooth { order: s.order + k as u32, ..*s }),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TestFunction::Polynomial(p) => p.eval(x),
            TestFunction::Smooth(s) => s.eval(x),
        }
    }

    pub fn as_polynomial(&self) -> Option<&Polynomial> {
        match self {
            TestFunction::Polynomial(p) => Some(p),
            TestFunction::Smooth(_) => None,
        }
    }

    /// The value of `f` when it is a constant polynomial (zero included).
    pub fn constant_value(&self) -> Option<f64> {
        let p = self.as_polynomial()?;
        match p.degree() {
            None => Some(0.0),
            Some(0) => Some(p.approx[0]),
            Some(_) => None,
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::Polynomial(p) => {
                if p.coeffs.is_empty() {
                    return write!(f, "0");
                }
                let parts: Vec<String> = p
                    .coeffs
                    .iter()
                    .map(|c| {
                        if c.denom().is_one() {
                            c.numer().to_string()
                        } else {
                            format!("{}/{}", c.numer(), c.denom())
                        }
                    })
                    .collect();
                write!(f, "{}", parts.join(","))
            }
            TestFunction::Smooth(s) => {
                let name = match s.family {
                    SmoothFamily::Cos => "cos",
                    SmoothFamily::Sin => "sin",
                    SmoothFamily::Exp => "exp",
                };
                if s.order == 0 {
                    write!(f, "{name}:{}", s.scale)
                } else {
                    write!(f, "{name}:{}'{}", s.scale, s.order)
                }
            }
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    /// `"c0,c1,..."` (rational coefficients, lowest degree first) or a named
    /// smooth function `cos`, `sin`, `exp`, optionally scaled as `cos:2`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, scale) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let family = match name.to_ascii_lowercase().as_str() {
            "cos" => Some(SmoothFamily::Cos),
            "sin" => Some(SmoothFamily::Sin),
            "exp" => Some(SmoothFamily::Exp),
            _ => None,
        };
        if let Some(family) = family {
            let scale = match scale {
                Some(a) => a
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("invalid scale in `{s}`")))?,
                None => 1.0,
            };
            return Ok(TestFunction::Smooth(Smooth { family, scale, order: 0 }));
        }
        let coeffs = s.split(',').map(parse_rational).collect::<Result<Vec<_>>>()?;
        TestFunction::polynomial(coeffs)
    }
}

impl Serialize for TestFunction {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

/// `(numerator, denominator)`.
pub type Fraction = (i64, i64);

/// The four Riemann-sum rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Midpoint,
    Trapezoid,
    Simpson,
    Milne,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [
        SchemeKind::Midpoint,
        SchemeKind::Trapezoid,
        SchemeKind::Simpson,
        SchemeKind::Milne,
    ];

    /// Node offsets `c` (as fractions of `dB`) with their weights.
    pub fn rule(self) -> &'static [(Fraction, Fraction)] {
        match self {
            SchemeKind::Midpoint => &[((1, 2), (1, 1))],
            SchemeKind::Trapezoid => &[((0, 1), (1, 2)), ((1, 1), (1, 2))],
            SchemeKind::Simpson => &[((0, 1), (1, 6)), ((1, 2), (4, 6)), ((1, 1), (1, 6))],
            SchemeKind::Milne => &[
                ((0, 1), (7, 90)),
                ((1, 4), (32, 90)),
                ((1, 2), (12, 90)),
                ((3, 4), (32, 90)),
                ((1, 1), (7, 90)),
            ],
        }
    }

    /// `(offset, weight)` as floats.
    pub fn nodes(self) -> Vec<(f64, f64)> {
        self.rule()
            .iter()
            .map(|&((cn, cd), (wn, wd))| (cn as f64 / cd as f64, wn as f64 / wd as f64))
            .collect()
    }

    /// Hurst value at or below which the sum stops converging in probability.
    pub fn critical_hurst(self) -> f64 {
        match self {
            SchemeKind::Midpoint | SchemeKind::Trapezoid => 1.0 / 6.0,
            SchemeKind::Simpson => 1.0 / 10.0,
            SchemeKind::Milne => 1.0 / 14.0,
        }
    }

    /// Power `r` of `dB` in the leading error term.
    pub fn leading_error_power(self) -> u32 {
        match self {
            SchemeKind::Midpoint | SchemeKind::Trapezoid => 3,
            SchemeKind::Simpson => 5,
            SchemeKind::Milne => 7,
        }
    }

    /// Largest degree of `f` integrated without error.
    pub fn exact_degree(self) -> usize {
        self.leading_error_power() as usize - 1
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Midpoint => "midpoint",
            SchemeKind::Trapezoid => "trapezoid",
            SchemeKind::Simpson => "simpson",
            SchemeKind::Milne => "milne",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "midpoint" => Ok(SchemeKind::Midpoint),
            "trapezoid" | "trapezoidal" => Ok(SchemeKind::Trapezoid),
            "simpson" => Ok(SchemeKind::Simpson),
            "milne" | "boole" => Ok(SchemeKind::Milne),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

impl Serialize for SchemeKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

/// `sum_{j < floor(nt)} [sum_w weight_w f'(B_j + c_w dB_j)] dB_j`.
pub fn riemann_sum(path: &FbmPath, f: &TestFunction, kind: SchemeKind, t: f64) -> Result<f64> {
    check_t(path, t)?;
    let steps = path.grid().steps_until(t)?;
    let fprime = f.derivative(1);
    let nodes = kind.nodes();
    let values = path.values();
    let mut acc = NeumaierSum::new();
    for j in 0..steps {
        let b = values[j];
        let d = values[j + 1] - b;
        let inner: f64 = nodes.iter().map(|&(c, w)| w * fprime.eval(b + c * d)).sum();
        acc.add(inner * d);
    }
    Ok(acc.total())
}

/// `f(B_{floor(nt)/n}) - f(0)`.
pub fn endpoint_difference(path: &FbmPath, f: &TestFunction, t: f64) -> Result<f64> {
    Ok(f.eval(path.value_at(t)?) - f.eval(0.0))
}

fn check_t(path: &FbmPath, t: f64) -> Result<()> {
    if !(t > 0.0 && t <= path.grid().horizon()) {
        return Err(Error::TimeOutOfRange { t, horizon: path.grid().horizon() });
    }
    Ok(())
}

/// `sum_{j < floor(nt)} phi(B~_j) dB_j^r`.
pub fn midpoint_power_sum(path: &FbmPath, phi: &TestFunction, r: u32, t: f64) -> Result<f64> {
    check_t(path, t)?;
    let steps = path.grid().steps_until(t)?;
    let values = path.values();
    let mut acc = NeumaierSum::new();
    for j in 0..steps {
        let d = values[j + 1] - values[j];
        acc.add(phi.eval(values[j] + 0.5 * d) * d.powi(r as i32));
    }
    Ok(acc.total())
}

/// `sum_{j < floor(nt)} f^(5)(B~_j) dB_j^5`.
pub fn error_statistic(path: &FbmPath, f: &TestFunction, t: f64) -> Result<f64> {
    midpoint_power_sum(path, &f.derivative(5), 5, t)
}

/// Coefficient of `g^{(2nu+3)}(x) h^{2nu+3}` in the Simpson expansion of
/// `g(x+h) - g(x-h)`: `(1/3) (1/(2nu-1)!) int_0^1 v^{2nu} (1-v)^2 dv`.
pub fn simpson_taylor_constant(nu: u32) -> Rational {
    let fact: i128 = (1..=(2 * nu as i128 - 1)).product();
    let k = 2 * nu as i128;
    let beta = Rational::new(2, (k + 1) * (k + 2) * (k + 3));
    Rational::new(1, 3 * fact) * beta
}

/// Pieces of the Simpson telescoping identity
/// `main - term5 - term7 - term9 = f(B_{floor(nt)/n}) - f(0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SimpsonDecomposition {
    pub main: f64,
    pub term5: f64,
    pub term7: f64,
    pub term9: f64,
}

impl SimpsonDecomposition {
    /// `main - term5 - term7 - term9`.
    pub fn reconstructed(&self) -> f64 {
        self.main - self.term5 - self.term7 - self.term9
    }
}

/// Exact decomposition of the Simpson sum for polynomials of degree <= 10.
///
/// With `x = B~_j` and `h = dB_j / 2`, the odd-order Taylor terms are
/// `g^(5)(x) h^5 / 90 = g^(5)(x) dB^5 / 2880`, `A7 g^(7)(x) h^7` and
/// `A9 g^(9)(x) h^9`, where `A7 = 1/1890`, `A9 = 1/90720`; the remainder
/// involves `g^(11)` and vanishes identically.
pub fn simpson_error_decomposition(
    path: &FbmPath,
    f: &TestFunction,
    t: f64,
) -> Result<SimpsonDecomposition> {
    let poly = f.as_polynomial().ok_or_else(|| {
        Error::InvalidParameter("error decomposition requires a polynomial".into())
    })?;
    if poly.degree().unwrap_or(0) > 10 {
        return Err(Error::InvalidParameter(format!(
            "error decomposition requires degree <= 10, got {}",
            poly.degree().unwrap_or(0)
        )));
    }
    let main = riemann_sum(path, f, SchemeKind::Simpson, t)?;
    let steps = path.grid().steps_until(t)?;
    let (d5, d7, d9) = (poly.derivative(5), poly.derivative(7), poly.derivative(9));
    let a7 = rational_to_f64(&simpson_taylor_constant(2));
    let a9 = rational_to_f64(&simpson_taylor_constant(3));
    let values = path.values();
    let (mut t5, mut t7, mut t9) = (NeumaierSum::new(), NeumaierSum::new(), NeumaierSum::new());
    for j in 0..steps {
        let d = values[j + 1] - values[j];
        let x = values[j] + 0.5 * d;
        let h = 0.5 * d;
        t5.add(d5.eval(x) * d.powi(5) / 2880.0);
        t7.add(a7 * d7.eval(x) * h.powi(7));
        t9.add(a9 * d9.eval(x) * h.powi(9));
    }
    Ok(SimpsonDecomposition {
        main,
        term5: t5.total(),
        term7: t7.total(),
        term9: t9.total(),
    })
}
