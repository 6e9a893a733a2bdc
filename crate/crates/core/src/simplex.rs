//! Euclidean projection onto the probability simplex
//! `C = { p : Σ p = 1, 0 <= p <= 1 }`.
//!
//! The projection is `p = clamp(z - v*·1, 0, 1)` where the threshold `v*` is
//! the root of `r(v) = Σ_j clamp(z_j - v, 0, 1) - 1`. `r` is continuous and
//! non-increasing in `v`, with `r(min z - 1) = N - 1 >= 0` and
//! `r(max z) = -1`, so bisection on that bracket always finds it.

use alloc::vec::Vec;
use core::ops::Deref;

use crate::error::{Error, Result};

/// Bisection stops once the bracket is narrower than this.
pub const BRACKET_TOL: f64 = 1e-12;
/// Residual accepted by [`project`].
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Hard cap on bisection iterations.
pub const MAX_ITERS: usize = 200;
/// Tolerance on `|Σ p - 1|` for a valid [`ProbVector`].
pub const SUM_TOL: f64 = 1e-9;

/// A point of the probability simplex.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Vec<f64>", into = "Vec<f64>"))]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates `values` against the simplex invariants.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("probability vector must be non-empty"));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(alloc::format!("probability {bad} outside [0, 1]")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::invalid(alloc::format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ProbVector(values))
    }

    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("probability vector must be non-empty"));
        }
        Ok(ProbVector(alloc::vec![1.0 / len as f64; len]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = j;
            }
        }
        best
    }
}

impl Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ProbVector::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Vec<f64> {
        p.0
    }
}

#[inline]
fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// `Σ_j clamp(z_j - v, 0, 1) - 1`.
pub fn residual(z: &[f64], v: f64) -> f64 {
    z.iter().map(|&zj| clamp01(zj - v)).sum::<f64>() - 1.0
}

fn check_vector(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(Error::invalid("cannot project an empty vector"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("vector has a non-finite entry"));
    }
    Ok(())
}

/// Finds the threshold `v*` with `|residual(z, v*)| <= tol` by bisection on
/// `[min z - 1, max z]`.
pub fn solve_threshold(z: &[f64], tol: f64) -> Result<f64> {
    check_vector(z)?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let (mut lo, mut hi) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    lo -= 1.0;
    if residual(z, lo).abs() <= tol {
        return Ok(lo);
    }
    for _ in 0..MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let r = residual(z, mid);
        if r.abs() <= tol {
            return Ok(mid);
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < BRACKET_TOL {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Projects `z` onto the probability simplex.
pub fn project(z: &[f64]) -> Result<ProbVector> {
    let v = solve_threshold(z, RESIDUAL_TOL)?;
    let mut p: Vec<f64> = z.iter().map(|&zj| clamp01(zj - v)).collect();
    let sum: f64 = p.iter().sum();
    if sum != 1.0 {
        for pj in &mut p {
            *pj = (*pj / sum).min(1.0);
        }
    }
    Ok(ProbVector(p))
}
