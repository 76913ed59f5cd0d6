//! Dominance, brute-force Pareto fronts, and the check that the log
//! transform leaves the front unchanged.
//!
//! Comparisons are exact. Any strictly increasing map applied to every
//! objective preserves each pairwise `≤`/`<` relation, hence dominance and
//! the front; a tolerance would manufacture ties that the map does not.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectivePoint {
    pub losses: Vec<f64>,
    pub candidate_index: usize,
}

impl ObjectivePoint {
    pub fn new(losses: Vec<f64>, candidate_index: usize) -> Self {
        Self {
            losses,
            candidate_index,
        }
    }
}

/// `a` dominates `b`: no worse in every objective and not equal.
pub fn dominates(a: &ObjectivePoint, b: &ObjectivePoint) -> Result<bool> {
    if a.losses.len() != b.losses.len() {
        return Err(Error::Dimension {
            expected: a.losses.len(),
            found: b.losses.len(),
        });
    }
    let mut strictly_better = false;
    for (x, y) in a.losses.iter().zip(&b.losses) {
        if x > y {
            return Ok(false);
        }
        if x < y {
            strictly_better = true;
        }
    }
    Ok(strictly_better)
}

/// Candidate indices of the points no other point dominates. Duplicate
/// non-dominated vectors are all kept. O(n²·T).
pub fn pareto_front(points: &[ObjectivePoint]) -> Result<BTreeSet<usize>> {
    let mut front = BTreeSet::new();
    'candidates: for p in points {
        for q in points {
            if dominates(q, p)? {
                continue 'candidates;
            }
        }
        front.insert(p.candidate_index);
    }
    Ok(front)
}

/// Applies `map` to every objective value.
pub fn map_points<F>(points: &[ObjectivePoint], map: F) -> Vec<ObjectivePoint>
where
    F: Fn(f64) -> f64,
{
    points
        .iter()
        .map(|p| {
            ObjectivePoint::new(
                p.losses.iter().map(|&l| map(l)).collect(),
                p.candidate_index,
            )
        })
        .collect()
}

/// Whether the fronts of `points` and of `map(points)` coincide.
pub fn check_front_invariance<F>(points: &[ObjectivePoint], map: F) -> Result<bool>
where
    F: Fn(f64) -> f64,
{
    let raw = pareto_front(points)?;
    let mapped = pareto_front(&map_points(points, map))?;
    Ok(raw == mapped)
}

/// Whether raw losses and log losses have the same Pareto front.
pub fn check_log_front_invariance(points: &[ObjectivePoint]) -> Result<bool> {
    for p in points {
        for &l in &p.losses {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::domain("log front check needs positive losses", l));
            }
        }
    }
    check_front_invariance(points, f64::ln)
}
