//! `verify` subcommand suites.

use std::collections::BTreeSet;
use std::path::Path;

use mtl_balance::pareto::{check_log_front_invariance, pareto_front, ObjectivePoint};
use mtl_balance::transforms::{imtl_l_inner_min, INNER_MIN_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tables;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        format!("{status} {}: {}", self.name, self.detail)
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

pub const PROP2_POINTS: [f64; 8] = [1e-2, 1e-1, 0.5, 1.0, 2.0, std::f64::consts::E, 10.0, 1e2];
pub const PROP2_VALUE_TOL: f64 = 1e-8;
pub const PROP2_ARGMIN_TOL: f64 = 1e-6;
pub const CLOUD_COUNT: usize = 100;
pub const CLOUD_SEED: u64 = 20240601;

/// The 401-point grid `θ = (i − 200)/100` on two unit quadratics centered
/// at ±1; its front is `i ∈ [100, 300]`.
pub fn line_grid() -> Vec<ObjectivePoint> {
    (0..=400)
        .map(|i| {
            let theta = (i as f64 - 200.0) / 100.0;
            ObjectivePoint::new(
                vec![(theta - 1.0).powi(2) + 0.1, (theta + 1.0).powi(2) + 0.1],
                i,
            )
        })
        .collect()
}

/// A 20×20 grid over `[−1.5, 1.5]²` on three quadratics whose centers form
/// a triangle.
pub fn plane_grid() -> Vec<ObjectivePoint> {
    let centers = [[1.0, 0.0], [-0.5, 0.8], [-0.5, -0.8]];
    let mut pts = Vec::with_capacity(400);
    for i in 0..20 {
        for j in 0..20 {
            let x = -1.5 + 3.0 * i as f64 / 19.0;
            let y = -1.5 + 3.0 * j as f64 / 19.0;
            let losses = centers
                .iter()
                .map(|c| (x - c[0]).powi(2) + (y - c[1]).powi(2) + 0.1)
                .collect();
            pts.push(ObjectivePoint::new(losses, 20 * i + j));
        }
    }
    pts
}

/// Random clouds with log-uniform entries in `[1e-3, 1e3]`, task counts
/// cycling through 2, 3, 5 and sizes up to 200.
pub fn random_clouds(count: usize, seed: u64) -> Vec<Vec<ObjectivePoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|c| {
            let t = [2, 3, 5][c % 3];
            let n = rng.random_range(1..=200);
            (0..n)
                .map(|i| {
                    let losses = (0..t)
                        .map(|_| 10f64.powf(rng.random_range(-3.0..3.0)))
                        .collect();
                    ObjectivePoint::new(losses, i)
                })
                .collect()
        })
        .collect()
}

pub fn prop1() -> Vec<Check> {
    let mut checks = Vec::new();
    let line = line_grid();
    let expected: BTreeSet<usize> = (100..=300).collect();
    let front = pareto_front(&line);
    checks.push(match front {
        Ok(f) => Check::new(
            "prop1 line grid front",
            f == expected,
            format!(
                "{} of 401 points on the front, expected θ ∈ [-1, 1]",
                f.len()
            ),
        ),
        Err(e) => Check::new("prop1 line grid front", false, e.to_string()),
    });
    checks.push(invariance("prop1 line grid log front", &line));
    checks.push(invariance("prop1 plane grid log front", &plane_grid()));

    let clouds = random_clouds(CLOUD_COUNT, CLOUD_SEED);
    let failures: Vec<usize> = clouds
        .iter()
        .enumerate()
        .filter(|(_, c)| !matches!(check_log_front_invariance(c), Ok(true)))
        .map(|(i, _)| i)
        .collect();
    checks.push(Check::new(
        "prop1 random clouds",
        failures.is_empty(),
        format!(
            "{} of {} clouds differ: {failures:?}",
            failures.len(),
            clouds.len()
        ),
    ));
    checks
}

fn invariance(name: &str, points: &[ObjectivePoint]) -> Check {
    match check_log_front_invariance(points) {
        Ok(same) => Check::new(
            name,
            same,
            format!(
                "{} points, fronts {}",
                points.len(),
                if same { "identical" } else { "differ" }
            ),
        ),
        Err(e) => Check::new(name, false, e.to_string()),
    }
}

pub fn prop2() -> Vec<Check> {
    let sweep = (0..=40).map(|i| 10f64.powf(-2.0 + i as f64 / 10.0));
    PROP2_POINTS
        .iter()
        .copied()
        .chain(sweep)
        .map(|x| {
            let name = format!("prop2 x={x:e}");
            match imtl_l_inner_min(x, INNER_MIN_TOL) {
                Ok((s, v)) => {
                    let dv = (v - x.ln()).abs();
                    let ds = (s + x.ln()).abs();
                    Check::new(
                        name,
                        dv <= PROP2_VALUE_TOL && ds <= PROP2_ARGMIN_TOL,
                        format!("|min - ln x| = {dv:.2e}, |s* + ln x| = {ds:.2e}"),
                    )
                }
                Err(e) => Check::new(name, false, e.to_string()),
            }
        })
        .collect()
}

/// One check per table row. `Err` means the fixtures could not be loaded.
pub fn tables(fixtures: Option<&Path>) -> Result<Vec<Check>, String> {
    let mut checks = Vec::new();
    for table in tables::load_tables(fixtures)? {
        match table.check_rows() {
            Ok(rows) => checks.extend(rows.iter().map(|r| {
                Check::new(
                    r.cell(),
                    r.passed(),
                    format!(
                        "recomputed {:+.3}, printed {:+.2}, |diff| {:.3} (tolerance {})",
                        r.recomputed,
                        r.printed,
                        (r.recomputed - r.printed).abs(),
                        tables::DELTA_P_TOLERANCE
                    ),
                )
            })),
            Err(e) => checks.push(Check::new(format!("{} fixture", table.dataset), false, e)),
        }
    }
    Ok(checks)
}
