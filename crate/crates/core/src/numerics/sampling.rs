use std::ops::Deref;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use crate::error::{Error, Result};

/// Absolute tolerance on the sum of a [`Simplex`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Non-negative entries summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Simplex(Vec<f64>);

impl Simplex {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParameter("empty simplex".into()));
        }
        if entries.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidParameter(
                "simplex entries must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidParameter(format!("simplex sums to {sum}")));
        }
        Ok(Self(entries))
    }

    /// Normalizes non-negative weights. Fails on an all-zero vector.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidParameter(
                "weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidParameter("all-zero weight vector".into()));
        }
        Ok(Self(weights.iter().map(|w| w / sum).collect()))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Total mass on the two largest entries.
    pub fn top2_mass(&self) -> f64 {
        top2(&self.0)
    }
}

pub(crate) fn top2(xs: &[f64]) -> f64 {
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for &x in xs {
        if x > a {
            b = a;
            a = x;
        } else if x > b {
            b = x;
        }
    }
    a + b
}

impl Deref for Simplex {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Simplex {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Simplex::new(v)
    }
}

impl From<Simplex> for Vec<f64> {
    fn from(s: Simplex) -> Self {
        s.0
    }
}

pub fn standard_normal(rng: &mut RngStream) -> f64 {
    StandardNormal.sample(rng)
}

/// One Gamma(shape, 1) draw.
///
/// Marsaglia–Tsang squeeze for `shape >= 1`; smaller shapes use
/// `Gamma(a) = Gamma(a + 1) * U^(1/a)`.
pub fn gamma_sample(shape: f64, rng: &mut RngStream) -> Result<f64> {
    if !shape.is_finite() || shape <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "gamma shape must be positive and finite, got {shape}"
        )));
    }
    if shape < 1.0 {
        let boosted = marsaglia_tsang(shape + 1.0, rng);
        let u = rng.uniform_open();
        return Ok(boosted * u.powf(1.0 / shape));
    }
    Ok(marsaglia_tsang(shape, rng))
}

fn marsaglia_tsang(shape: f64, rng: &mut RngStream) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.uniform_open();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Log of one Gamma(shape, 1) draw; stays finite where the draw itself would
/// underflow (shapes far below one).
fn log_gamma_sample(shape: f64, rng: &mut RngStream) -> f64 {
    if shape < 1.0 {
        let boosted = marsaglia_tsang(shape + 1.0, rng);
        let u = rng.uniform_open();
        boosted.ln() + u.ln() / shape
    } else {
        marsaglia_tsang(shape, rng).ln()
    }
}

/// One Dirichlet draw as normalized independent Gamma variates.
///
/// Normalization happens in log space so that concentrations such as
/// `0.1 / 16` do not collapse every variate to zero.
pub fn dirichlet_sample(alpha: &[f64], rng: &mut RngStream) -> Result<Simplex> {
    if alpha.is_empty() {
        return Err(Error::InvalidParameter("empty concentration vector".into()));
    }
    if let Some(bad) = alpha.iter().find(|a| !a.is_finite() || **a <= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dirichlet concentration must be positive, got {bad}"
        )));
    }
    let logs: Vec<f64> = alpha.iter().map(|&a| log_gamma_sample(a, rng)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    Ok(Simplex(weights.into_iter().map(|w| w / sum).collect()))
}

/// Index `i` drawn with probability `weights[i] / sum(weights)`.
pub fn categorical_sample(weights: &[f64], rng: &mut RngStream) -> Result<usize> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidParameter(
            "categorical weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidParameter("degenerate all-zero weights".into()));
    }
    let target = rng.uniform() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if target < acc {
                return Ok(i);
            }
        }
    }
    Ok(last_positive)
}

/// Uniform permutation of `0..n` (Fisher–Yates).
pub fn random_permutation(n: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    shuffle(&mut perm, rng);
    perm
}

pub fn shuffle<T>(xs: &mut [T], rng: &mut RngStream) {
    for i in (1..xs.len()).rev() {
        let j = rng.below(i + 1);
        xs.swap(i, j);
    }
}
