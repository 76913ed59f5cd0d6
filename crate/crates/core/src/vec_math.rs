//! Flat real-vector arithmetic.
//!
//! [`RealVector`] is the carrier for parameters and gradients throughout the
//! crate. Every constructor and every exported operation rejects NaN and
//! infinite entries, so a diverging computation surfaces as an error at the
//! point it happens instead of propagating silently.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RealVector(Vec<f64>);

impl RealVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if let Some(i) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("vector entry {i}")));
        }
        Ok(Self(entries))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// Euclidean norm.
    pub fn norm2(&self) -> f64 {
        norm2(self)
    }

    pub fn dot(&self, other: &RealVector) -> Result<f64> {
        check_len(self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// `c * self`, rejecting overflow.
    pub fn scale(&self, c: f64) -> Result<RealVector> {
        RealVector::new(self.0.iter().map(|v| c * v).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

impl Index<usize> for RealVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for RealVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        RealVector::new(v)
    }
}

impl From<RealVector> for Vec<f64> {
    fn from(v: RealVector) -> Self {
        v.0
    }
}

impl<'a> IntoIterator for &'a RealVector {
    type Item = &'a f64;
    type IntoIter = std::slice::Iter<'a, f64>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension { expected, found });
    }
    Ok(())
}

/// Euclidean norm, scaled to avoid overflow on large entries.
pub fn norm2(v: &RealVector) -> f64 {
    let max = v.0.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return 0.0;
    }
    if max > 1e150 || max < 1e-150 {
        let s: f64 = v.0.iter().map(|x| (x / max) * (x / max)).sum();
        return max * s.sqrt();
    }
    v.0.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Elementwise `a * x + y`.
pub fn scaled_add(a: f64, x: &RealVector, y: &RealVector) -> Result<RealVector> {
    check_len(x.len(), y.len())?;
    let out: Vec<f64> = x.0.iter().zip(&y.0).map(|(xi, yi)| a * xi + yi).collect();
    RealVector::new(out).map_err(|_| Error::non_finite("scaled_add result"))
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_grad<F>(f: F, x: &RealVector, h: f64) -> Result<RealVector>
where
    F: Fn(&RealVector) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::domain("finite-difference step must be positive", h));
    }
    let mut probe = x.0.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&RealVector(probe.clone()));
        probe[i] = orig - h;
        let minus = f(&RealVector(probe.clone()));
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::non_finite(format!(
                "finite-difference evaluation along coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    RealVector::new(grad)
}
