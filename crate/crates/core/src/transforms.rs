//! Loss transforms applied before differentiation.
//!
//! The logarithmic transform makes per-task gradients invariant to a
//! positive rescaling of the task loss: `∇ log(c·ℓ) = ∇ℓ / ℓ` for every
//! `c > 0`. This module also carries the IMTL-L inner minimization, which
//! recovers `log x` as `min_s eˢx − s − 1`, and the gradient of the
//! geometric-mean loss used by the GLS baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec_math::{scaled_add, RealVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    Log,
}

fn check_positive(ell: f64) -> Result<()> {
    if !(ell > 0.0) || !ell.is_finite() {
        return Err(Error::domain(
            "log transform needs a positive finite loss",
            ell,
        ));
    }
    Ok(())
}

pub fn transform_loss(kind: TransformKind, ell: f64) -> Result<f64> {
    match kind {
        TransformKind::Identity => Ok(ell),
        TransformKind::Log => {
            check_positive(ell)?;
            Ok(ell.ln())
        }
    }
}

/// Gradient of the transformed loss given the raw loss `ell` and its
/// gradient `g`. For the log transform this is `g / ell`.
pub fn transform_grad(kind: TransformKind, ell: f64, g: &RealVector) -> Result<RealVector> {
    match kind {
        TransformKind::Identity => Ok(g.clone()),
        TransformKind::Log => {
            check_positive(ell)?;
            RealVector::new(g.iter().map(|gi| gi / ell).collect())
        }
    }
}

/// Default tolerance for [`imtl_l_inner_min`].
pub const INNER_MIN_TOL: f64 = 1e-10;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimizes `f(s) = eˢ·x − s − 1` over `s`.
///
/// Golden-section search on a bracket that starts at `[-50, 50]` and is
/// widened until the minimum is interior, followed by Newton polishing on
/// `f'(s) = eˢ·x − 1`. Comparisons of `f` alone cannot resolve the
/// minimizer below roughly `sqrt(ε·|f|)` because `f` is flat there; the
/// Newton steps recover full precision. Returns `(s_star, f(s_star))`.
pub fn imtl_l_inner_min(x: f64, tol: f64) -> Result<(f64, f64)> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain("IMTL-L inner minimization needs x > 0", x));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive", tol));
    }
    let f = |s: f64| s.exp() * x - s - 1.0;

    let (mut lo, mut hi) = (-50.0_f64, 50.0_f64);
    // f is convex; the minimum is interior once both ends rise above the
    // value at a point just inside them.
    for _ in 0..8 {
        let width = hi - lo;
        let lo_rising = f(lo) > f(lo + 1e-3 * width);
        let hi_rising = f(hi).is_nan() || f(hi) > f(hi - 1e-3 * width);
        if lo_rising && hi_rising {
            break;
        }
        if !lo_rising {
            lo -= width;
        }
        if !hi_rising {
            hi += width;
        }
    }
    if !f(lo).is_finite() && !f(hi).is_finite() {
        return Err(Error::domain("no finite bracket for inner minimization", x));
    }

    let mut a = lo;
    let mut b = hi;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        // non-finite values only appear at the far right of the bracket
        if fc < fd || !fd.is_finite() {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mut s = 0.5 * (a + b);

    for _ in 0..8 {
        let ex = s.exp() * x;
        let step = (ex - 1.0) / ex;
        s -= step;
        if step.abs() <= f64::EPSILON * s.abs().max(1.0) {
            break;
        }
    }
    let value = f(s);
    if !value.is_finite() {
        return Err(Error::non_finite("inner minimization value"));
    }
    Ok((s, value))
}

/// Gradient of the geometric-mean loss `(Π ℓ_t)^{1/T}`:
/// `(1/T)·(Π ℓ_t)^{1/T} · Σ g_t/ℓ_t`.
pub fn gls_combined_gradient(losses: &[f64], grads: &[RealVector]) -> Result<RealVector> {
    if losses.is_empty() {
        return Err(Error::Argument("GLS needs at least one task".into()));
    }
    if losses.len() != grads.len() {
        return Err(Error::Dimension {
            expected: losses.len(),
            found: grads.len(),
        });
    }
    for &ell in losses {
        if !(ell > 0.0) || !ell.is_finite() {
            return Err(Error::domain("GLS needs positive finite losses", ell));
        }
    }
    let dim = grads[0].len();
    if losses.len() == 1 {
        return Ok(grads[0].clone());
    }
    let t = losses.len() as f64;
    let geo_mean = (losses.iter().map(|l| l.ln()).sum::<f64>() / t).exp();
    let mut acc = RealVector::zeros(dim);
    for (ell, g) in losses.iter().zip(grads) {
        acc = scaled_add(geo_mean / (t * ell), g, &acc)?;
    }
    Ok(acc)
}
