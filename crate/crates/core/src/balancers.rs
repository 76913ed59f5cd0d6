//! Gradient balancers.
//!
//! A balancer maps the per-task shared-parameter gradients of one step to a
//! single update direction. SI-G keeps an exponential moving average of each
//! task gradient, normalizes every average to unit length and rescales the
//! sum by `α_k`; the comparison balancers (EW, RLW, PCGrad, GLS) combine the
//! raw gradients directly and never touch the EMA buffers.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::gls_combined_gradient;
use crate::vec_math::{norm2, scaled_add, RealVector};

/// Norm below which an EMA gradient is treated as zero by SI-G.
pub const ZERO_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "c", rename_all = "snake_case")]
pub enum BetaSchedule {
    /// `β_k = c` with `c ∈ [0, 1)`.
    Constant(f64),
    /// `β_k = c / sqrt(k + 1)` clipped into `[0, 1)`, `k` counted from 0.
    InvSqrt(f64),
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BetaSchedule::Constant(c) if !(0.0..1.0).contains(&c) => {
                Err(Error::domain("constant beta must lie in [0, 1)", c))
            }
            BetaSchedule::InvSqrt(c) if !(c > 0.0 && c.is_finite()) => Err(Error::domain(
                "inv_sqrt beta coefficient must be positive",
                c,
            )),
            _ => Ok(()),
        }
    }

    pub fn beta_at(&self, step: usize) -> f64 {
        match *self {
            BetaSchedule::Constant(c) => c,
            BetaSchedule::InvSqrt(c) => {
                let b = c / ((step + 1) as f64).sqrt();
                b.clamp(0.0, 1.0 - f64::EPSILON)
            }
        }
    }
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule::Constant(0.9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaStrategy {
    Max,
    Min,
    Mean,
    Median,
    ConstantInvT,
}

impl AlphaStrategy {
    pub const ALL: [AlphaStrategy; 5] = [
        AlphaStrategy::Max,
        AlphaStrategy::Min,
        AlphaStrategy::Mean,
        AlphaStrategy::Median,
        AlphaStrategy::ConstantInvT,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AlphaStrategy::Max => "max",
            AlphaStrategy::Min => "min",
            AlphaStrategy::Mean => "mean",
            AlphaStrategy::Median => "median",
            AlphaStrategy::ConstantInvT => "constant_inv_t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancerKind {
    SiG,
    Ew,
    Rlw,
    Pcgrad,
    Gls,
}

/// Scale factor `α_k` from the norms of the contributing tasks.
///
/// `task_count` is only used by [`AlphaStrategy::ConstantInvT`]; the median of
/// an even-length list is the midpoint of the two central values.
pub fn alpha_value(norms: &[f64], strategy: AlphaStrategy, task_count: usize) -> Result<f64> {
    if norms.is_empty() {
        return Err(Error::Argument("alpha needs at least one norm".into()));
    }
    let n = norms.len() as f64;
    let alpha = match strategy {
        AlphaStrategy::Max => norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        AlphaStrategy::Min => norms.iter().cloned().fold(f64::INFINITY, f64::min),
        AlphaStrategy::Mean => norms.iter().sum::<f64>() / n,
        AlphaStrategy::Median => {
            let mut sorted = norms.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mid = sorted.len() / 2;
            if sorted.len() % 2 == 1 {
                sorted[mid]
            } else {
                0.5 * (sorted[mid - 1] + sorted[mid])
            }
        }
        AlphaStrategy::ConstantInvT => {
            if task_count == 0 {
                return Err(Error::Argument("task count must be positive".into()));
            }
            1.0 / task_count as f64
        }
    };
    Ok(alpha)
}

/// Output of [`si_g_aggregate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SiGOutput {
    pub direction: RealVector,
    pub alpha: f64,
    pub norms: Vec<f64>,
}

/// Unit-norm contribution of each task, `None` for tasks whose norm is below
/// [`ZERO_NORM_EPS`].
pub fn unit_contributions(ema_grads: &[RealVector]) -> Result<Vec<Option<RealVector>>> {
    let dim = ema_grads.first().map_or(0, RealVector::len);
    ema_grads
        .iter()
        .map(|g| {
            if g.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: g.len(),
                });
            }
            let n = norm2(g);
            if n >= ZERO_NORM_EPS {
                Ok(Some(RealVector::new(g.iter().map(|x| x / n).collect())?))
            } else {
                Ok(None)
            }
        })
        .collect()
}

/// `α · Σ_t ĝ_t / ‖ĝ_t‖`. Tasks whose norm is below [`ZERO_NORM_EPS`]
/// contribute nothing and are left out of `α`; if every task is below the
/// threshold the result is the zero vector with `α = 0`.
pub fn si_g_aggregate(ema_grads: &[RealVector], strategy: AlphaStrategy) -> Result<SiGOutput> {
    let first = ema_grads
        .first()
        .ok_or_else(|| Error::Argument("SI-G needs at least one task".into()))?;
    let dim = first.len();
    let norms: Vec<f64> = ema_grads.iter().map(norm2).collect();
    let units = unit_contributions(ema_grads)?;

    let mut sum = RealVector::zeros(dim);
    let mut active = Vec::with_capacity(norms.len());
    for (unit, &n) in units.iter().zip(&norms) {
        if let Some(u) = unit {
            sum = scaled_add(1.0, u, &sum)?;
            active.push(n);
        }
    }
    if active.is_empty() {
        return Ok(SiGOutput {
            direction: RealVector::zeros(dim),
            alpha: 0.0,
            norms,
        });
    }
    let alpha = alpha_value(&active, strategy, ema_grads.len())?;
    Ok(SiGOutput {
        direction: sum.scale(alpha)?,
        alpha,
        norms,
    })
}

/// `Σ_t w_t · g_t`.
pub fn ew_aggregate(g_list: &[RealVector], weights: &[f64]) -> Result<RealVector> {
    if g_list.len() != weights.len() {
        return Err(Error::Dimension {
            expected: g_list.len(),
            found: weights.len(),
        });
    }
    let first = g_list
        .first()
        .ok_or_else(|| Error::Argument("aggregation needs at least one task".into()))?;
    let mut acc = RealVector::zeros(first.len());
    for (g, &w) in g_list.iter().zip(weights) {
        acc = scaled_add(w, g, &acc)?;
    }
    Ok(acc)
}

/// Softmax of a standard-normal draw; resampled on every call.
pub fn rlw_weights<R: Rng + ?Sized>(rng: &mut R, task_count: usize) -> Result<Vec<f64>> {
    if task_count == 0 {
        return Err(Error::Argument("RLW needs at least one task".into()));
    }
    let z: Vec<f64> = (0..task_count)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// PCGrad: for each task, visit the other tasks in a random order and remove
/// the component of its running gradient that conflicts with each of them.
pub fn pcgrad_aggregate<R: Rng + ?Sized>(g_list: &[RealVector], rng: &mut R) -> Result<RealVector> {
    let orders: Vec<Vec<usize>> = (0..g_list.len())
        .map(|i| {
            let mut order: Vec<usize> = (0..g_list.len()).filter(|&j| j != i).collect();
            order.shuffle(rng);
            order
        })
        .collect();
    pcgrad_with_orders(g_list, &orders)
}

/// PCGrad with explicit visiting orders; `orders[i]` lists the tasks that
/// task `i` is projected against, in sequence. Projections always use the
/// original gradients of the other tasks.
pub fn pcgrad_with_orders(g_list: &[RealVector], orders: &[Vec<usize>]) -> Result<RealVector> {
    let first = g_list
        .first()
        .ok_or_else(|| Error::Argument("aggregation needs at least one task".into()))?;
    let dim = first.len();
    if orders.len() != g_list.len() {
        return Err(Error::Dimension {
            expected: g_list.len(),
            found: orders.len(),
        });
    }
    for g in g_list {
        if g.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: g.len(),
            });
        }
    }
    let sq_norms: Vec<f64> = g_list.iter().map(|g| g.dot(g)).collect::<Result<_>>()?;

    let mut acc = RealVector::zeros(dim);
    for (i, g_i) in g_list.iter().enumerate() {
        let mut projected = g_i.clone();
        for &j in &orders[i] {
            let g_j = g_list
                .get(j)
                .ok_or_else(|| Error::Argument(format!("task {j} out of range")))?;
            let d = projected.dot(g_j)?;
            if d < 0.0 {
                projected = scaled_add(-d / sq_norms[j], g_j, &projected)?;
            }
        }
        acc = scaled_add(1.0, &projected, &acc)?;
    }
    Ok(acc)
}

/// What a balancer produced for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub direction: RealVector,
    /// `α_k` for SI-G; 1 for balancers that do not rescale.
    pub alpha: f64,
    /// Norm of each task's balanced input: EMA norms for SI-G, raw norms otherwise.
    pub task_norms: Vec<f64>,
    /// Per-task loss weights when the balancer is a weighted sum (EW, RLW, GLS).
    pub weights: Option<Vec<f64>>,
}

/// Per-run balancer state: EMA buffers, step counter and β schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancerState {
    kind: BalancerKind,
    alpha: AlphaStrategy,
    beta: BetaSchedule,
    ema: Vec<RealVector>,
    step: usize,
}

impl BalancerState {
    pub fn new(
        kind: BalancerKind,
        task_count: usize,
        dim: usize,
        alpha: AlphaStrategy,
        beta: BetaSchedule,
    ) -> Result<Self> {
        if task_count == 0 {
            return Err(Error::Argument("balancer needs at least one task".into()));
        }
        beta.validate()?;
        Ok(Self {
            kind,
            alpha,
            beta,
            ema: vec![RealVector::zeros(dim); task_count],
            step: 0,
        })
    }

    pub fn kind(&self) -> BalancerKind {
        self.kind
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn ema(&self) -> &[RealVector] {
        &self.ema
    }

    pub fn beta_schedule(&self) -> BetaSchedule {
        self.beta
    }

    /// Applies one EMA step: `ĝ_k = β_k ĝ_{k−1} + (1 − β_k) g_k`, or
    /// `(1 − β_0) g_0` on the first step (no bias correction). Increments the
    /// step counter.
    pub fn ema_update(&mut self, g_list: &[RealVector]) -> Result<&[RealVector]> {
        self.check_inputs(g_list)?;
        let beta = self.beta.beta_at(self.step);
        let next: Vec<RealVector> = if self.step == 0 {
            g_list
                .iter()
                .map(|g| g.scale(1.0 - beta))
                .collect::<Result<_>>()?
        } else {
            g_list
                .iter()
                .zip(&self.ema)
                .map(|(g, prev)| scaled_add(1.0 - beta, g, &prev.scale(beta)?))
                .collect::<Result<_>>()?
        };
        self.ema = next;
        self.step += 1;
        Ok(&self.ema)
    }

    /// Aggregates one step of per-task gradients. `losses` are the raw batch
    /// losses (used by GLS); `rng` is consumed by RLW and PCGrad only.
    pub fn aggregate<R: Rng + ?Sized>(
        &mut self,
        g_list: &[RealVector],
        losses: &[f64],
        rng: &mut R,
    ) -> Result<Aggregate> {
        self.check_inputs(g_list)?;
        let raw_norms = || g_list.iter().map(norm2).collect::<Vec<f64>>();
        let out = match self.kind {
            BalancerKind::SiG => {
                self.ema_update(g_list)?;
                let out = si_g_aggregate(&self.ema, self.alpha)?;
                return Ok(Aggregate {
                    direction: out.direction,
                    alpha: out.alpha,
                    task_norms: out.norms,
                    weights: None,
                });
            }
            BalancerKind::Ew => {
                let w = vec![1.0; g_list.len()];
                Aggregate {
                    direction: ew_aggregate(g_list, &w)?,
                    alpha: 1.0,
                    task_norms: raw_norms(),
                    weights: Some(w),
                }
            }
            BalancerKind::Rlw => {
                let w = rlw_weights(rng, g_list.len())?;
                Aggregate {
                    direction: ew_aggregate(g_list, &w)?,
                    alpha: 1.0,
                    task_norms: raw_norms(),
                    weights: Some(w),
                }
            }
            BalancerKind::Pcgrad => Aggregate {
                direction: pcgrad_aggregate(g_list, rng)?,
                alpha: 1.0,
                task_norms: raw_norms(),
                weights: None,
            },
            BalancerKind::Gls => {
                if losses.len() != g_list.len() {
                    return Err(Error::Dimension {
                        expected: g_list.len(),
                        found: losses.len(),
                    });
                }
                Aggregate {
                    direction: gls_combined_gradient(losses, g_list)?,
                    alpha: 1.0,
                    task_norms: raw_norms(),
                    weights: Some(gls_weights(losses)),
                }
            }
        };
        self.step += 1;
        Ok(out)
    }

    fn check_inputs(&self, g_list: &[RealVector]) -> Result<()> {
        if g_list.len() != self.ema.len() {
            return Err(Error::Dimension {
                expected: self.ema.len(),
                found: g_list.len(),
            });
        }
        let dim = self.ema[0].len();
        for g in g_list {
            if g.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: g.len(),
                });
            }
        }
        Ok(())
    }
}

/// Effective per-task weights of the geometric-mean loss gradient,
/// `(Π ℓ)^{1/T} / (T ℓ_t)`; a single task gets weight 1.
pub fn gls_weights(losses: &[f64]) -> Vec<f64> {
    if losses.len() == 1 {
        return vec![1.0];
    }
    let t = losses.len() as f64;
    let geo_mean = (losses.iter().map(|l| l.ln()).sum::<f64>() / t).exp();
    losses.iter().map(|l| geo_mean / (t * l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> RealVector {
        RealVector::new(x.to_vec()).unwrap()
    }

    fn cosine(a: &RealVector, b: &RealVector) -> f64 {
        a.dot(b).unwrap() / (a.norm2() * b.norm2())
    }

    fn si_g_state(beta: BetaSchedule, t: usize, dim: usize) -> BalancerState {
        BalancerState::new(BalancerKind::SiG, t, dim, AlphaStrategy::Max, beta).unwrap()
    }

    #[test]
    fn ema_examples() {
        let mut st = si_g_state(BetaSchedule::Constant(0.5), 1, 2);
        assert!(st.ema().iter().all(|g| g.is_zero()));
        let e = st.ema_update(&[v(&[2.0, 0.0])]).unwrap().to_vec();
        assert_eq!(e, vec![v(&[1.0, 0.0])]);
        let e = st.ema_update(&[v(&[0.0, 2.0])]).unwrap().to_vec();
        assert_eq!(e, vec![v(&[0.5, 1.0])]);
        assert_eq!(st.step(), 2);
    }

    #[test]
    fn ema_with_zero_beta_is_identity() {
        let mut st = si_g_state(BetaSchedule::Constant(0.0), 2, 3);
        for k in 0..5 {
            let g = vec![v(&[k as f64, -1.5, 0.25]), v(&[0.1, 0.2, k as f64 * 3.0])];
            let e = st.ema_update(&g).unwrap();
            assert_eq!(e, &g[..]);
        }
    }

    #[test]
    fn ema_dimension_mismatch() {
        let mut st = si_g_state(BetaSchedule::Constant(0.5), 2, 2);
        assert!(matches!(
            st.ema_update(&[v(&[1.0, 2.0])]),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            st.ema_update(&[v(&[1.0, 2.0]), v(&[1.0])]),
            Err(Error::Dimension { .. })
        ));
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn ema_constant_gradient_closed_form() {
        for beta in [0.1, 0.5, 0.9] {
            let mut st = si_g_state(BetaSchedule::Constant(beta), 1, 2);
            let g = v(&[1.25, -3.0]);
            for k in 0..=100 {
                let e = st.ema_update(std::slice::from_ref(&g)).unwrap()[0].clone();
                let factor = 1.0 - beta.powi(k + 1);
                for i in 0..2 {
                    let expected = factor * g[i];
                    assert!((e[i] - expected).abs() <= 1e-10 * expected.abs());
                }
            }
        }
    }

    #[test]
    fn inv_sqrt_schedule_starts_at_c() {
        let s = BetaSchedule::InvSqrt(0.5);
        assert_eq!(s.beta_at(0), 0.5);
        assert_eq!(s.beta_at(3), 0.25);
        assert!(BetaSchedule::InvSqrt(4.0).beta_at(0) < 1.0);
        assert!(BetaSchedule::Constant(1.0).validate().is_err());
        assert!(BetaSchedule::Constant(-0.1).validate().is_err());
        assert!(BetaSchedule::InvSqrt(0.0).validate().is_err());
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(
            alpha_value(&[5.0, 1.0], AlphaStrategy::Max, 2).unwrap(),
            5.0
        );
        assert_eq!(
            alpha_value(&[5.0, 1.0], AlphaStrategy::Mean, 2).unwrap(),
            3.0
        );
        assert_eq!(
            alpha_value(&[5.0, 1.0], AlphaStrategy::Min, 2).unwrap(),
            1.0
        );
        assert_eq!(
            alpha_value(&[3.0, 1.0, 2.0], AlphaStrategy::Median, 3).unwrap(),
            2.0
        );
        assert_eq!(
            alpha_value(&[4.0, 1.0, 3.0, 2.0], AlphaStrategy::Median, 4).unwrap(),
            2.5
        );
        assert_eq!(
            alpha_value(&[9.0, 9.0, 9.0, 9.0], AlphaStrategy::ConstantInvT, 4).unwrap(),
            0.25
        );
        assert!(alpha_value(&[], AlphaStrategy::Max, 1).is_err());
    }

    #[test]
    fn si_g_examples() {
        let out = si_g_aggregate(&[v(&[3.0, 4.0])], AlphaStrategy::Max).unwrap();
        assert_eq!(out.direction, v(&[3.0, 4.0]));

        let g = [v(&[3.0, 4.0]), v(&[0.0, 1.0])];
        let out = si_g_aggregate(&g, AlphaStrategy::Max).unwrap();
        assert!((out.direction[0] - 3.0).abs() < 1e-14);
        assert!((out.direction[1] - 9.0).abs() < 1e-14);
        assert_eq!(out.alpha, 5.0);

        let out = si_g_aggregate(&g, AlphaStrategy::Mean).unwrap();
        assert!((out.direction[0] - 1.8).abs() < 1e-14);
        assert!((out.direction[1] - 5.4).abs() < 1e-14);
    }

    #[test]
    fn si_g_skips_vanishing_tasks() {
        let g = [v(&[0.0, 0.0]), v(&[0.0, 2.0])];
        let out = si_g_aggregate(&g, AlphaStrategy::Min).unwrap();
        assert_eq!(out.alpha, 2.0);
        assert_eq!(out.direction, v(&[0.0, 2.0]));

        let out = si_g_aggregate(&[v(&[1e-13, 0.0]), v(&[0.0, 0.0])], AlphaStrategy::Max).unwrap();
        assert!(out.direction.is_zero());
        assert_eq!(out.alpha, 0.0);
    }

    #[test]
    fn si_g_dimension_mismatch() {
        let err = si_g_aggregate(&[v(&[1.0, 0.0]), v(&[1.0])], AlphaStrategy::Max).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn ew_examples() {
        let g = v(&[1.5, -2.0]);
        assert_eq!(
            ew_aggregate(&[g.clone(), g.clone()], &[1.0, 1.0]).unwrap(),
            g.scale(2.0).unwrap()
        );
        assert_eq!(
            ew_aggregate(&[g.clone(), v(&[7.0, 7.0])], &[1.0, 0.0]).unwrap(),
            g
        );
        assert_eq!(
            ew_aggregate(&[v(&[1.0, 0.0]), v(&[0.0, 2.0])], &[1.0, 1.0]).unwrap(),
            v(&[1.0, 2.0])
        );
        assert!(ew_aggregate(&[g.clone()], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn rlw_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in 1..6 {
            for _ in 0..50 {
                let w = rlw_weights(&mut rng, t).unwrap();
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                if t > 1 {
                    assert!(w.iter().all(|&x| x > 0.0 && x < 1.0));
                }
            }
        }
        assert_eq!(rlw_weights(&mut rng, 1).unwrap(), vec![1.0]);

        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..10)
                .map(|_| rlw_weights(&mut r, 3).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn pcgrad_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = [v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        assert_eq!(pcgrad_aggregate(&g, &mut rng).unwrap(), v(&[1.0, 1.0]));

        let g = [v(&[1.0, 0.0]), v(&[-1.0, 1.0])];
        let out = pcgrad_with_orders(&g, &[vec![1], vec![0]]).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-15 && (out[1] - 1.5).abs() < 1e-15);
        assert_eq!(pcgrad_aggregate(&g, &mut rng).unwrap(), out);

        let g1 = v(&[0.3, -0.7, 2.0]);
        assert_eq!(
            pcgrad_aggregate(&[g1.clone(), g1.clone()], &mut rng).unwrap(),
            g1.scale(2.0).unwrap()
        );
    }

    #[test]
    fn pcgrad_uses_original_gradients_as_targets() {
        // g1 conflicts with both others; each projection is taken against
        // the untouched g2 and g3.
        let g = [v(&[1.0, 0.0]), v(&[-1.0, 1.0]), v(&[-1.0, -2.0])];
        let out = pcgrad_with_orders(&g, &[vec![1, 2], vec![0, 2], vec![0, 1]]).unwrap();
        // task 1: (1,0) vs (-1,1): dot -1 -> (0.5,0.5); vs (-1,-2): dot -1.5 -> (0.2,-0.1)
        // task 2: (-1,1) vs (1,0): dot -1 -> (0,1); vs (-1,-2): dot -2 -> (-0.4,0.2)
        // task 3: (-1,-2) vs (1,0): dot -1 -> (0,-2); vs (-1,1): dot -2 -> (-1,-1)
        let expected = [0.2 - 0.4 - 1.0, -0.1 + 0.2 - 1.0];
        assert!((out[0] - expected[0]).abs() < 1e-14, "{out:?}");
        assert!((out[1] - expected[1]).abs() < 1e-14, "{out:?}");
    }

    #[test]
    fn non_ema_balancers_leave_ema_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [
            BalancerKind::Ew,
            BalancerKind::Rlw,
            BalancerKind::Pcgrad,
            BalancerKind::Gls,
        ] {
            let mut st =
                BalancerState::new(kind, 2, 2, AlphaStrategy::Max, BetaSchedule::Constant(0.5))
                    .unwrap();
            for k in 0..4 {
                st.aggregate(&[v(&[1.0, -2.0]), v(&[-0.5, 3.0])], &[1.0, 2.0], &mut rng)
                    .unwrap();
                assert_eq!(st.step(), k + 1);
            }
            assert!(st.ema().iter().all(|g| g.is_zero()));
        }
    }

    #[test]
    fn si_g_balancer_uses_ema() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut st = BalancerState::new(
            BalancerKind::SiG,
            2,
            2,
            AlphaStrategy::Max,
            BetaSchedule::Constant(0.5),
        )
        .unwrap();
        let agg = st
            .aggregate(&[v(&[6.0, 8.0]), v(&[0.0, 2.0])], &[1.0, 1.0], &mut rng)
            .unwrap();
        // EMA halves the inputs: (3,4) and (0,1)
        assert_eq!(agg.task_norms, vec![5.0, 1.0]);
        assert!((agg.direction[0] - 3.0).abs() < 1e-14);
        assert!((agg.direction[1] - 9.0).abs() < 1e-14);
        assert_eq!(st.step(), 1);
    }

    fn arb_grads() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..6, 1usize..6).prop_flat_map(|(t, d)| {
            prop::collection::vec(prop::collection::vec(-10f64..10.0, d), t)
        })
    }

    proptest! {
        #[test]
        fn si_g_direction_ignores_per_task_scale(
            grads in arb_grads(),
            which in 0usize..6,
            c in 1e-3f64..1e3,
            strategy in prop::sample::select(AlphaStrategy::ALL.to_vec()),
        ) {
            let gv: Vec<RealVector> = grads.iter().map(|g| v(g)).collect();
            prop_assume!(gv.iter().all(|g| g.norm2() > 1e-6));
            let base = si_g_aggregate(&gv, strategy).unwrap().direction;
            prop_assume!(base.norm2() > 1e-6);
            let mut scaled = gv.clone();
            let i = which % scaled.len();
            scaled[i] = scaled[i].scale(c).unwrap();
            let out = si_g_aggregate(&scaled, strategy).unwrap().direction;
            let (nb, no) = (base.norm2(), out.norm2());
            for (a, b) in base.iter().zip(out.iter()) {
                prop_assert!((a / nb - b / no).abs() <= 1e-9);
            }
        }

        #[test]
        fn alpha_strategies_share_direction(grads in arb_grads()) {
            let gv: Vec<RealVector> = grads.iter().map(|g| v(g)).collect();
            prop_assume!(gv.iter().all(|g| g.norm2() > 1e-6));
            let outs: Vec<RealVector> = AlphaStrategy::ALL
                .iter()
                .map(|&s| si_g_aggregate(&gv, s).unwrap().direction)
                .collect();
            prop_assume!(outs[0].norm2() > 1e-6);
            for a in &outs {
                for b in &outs {
                    prop_assert!((cosine(a, b) - 1.0).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn alpha_ordering(norms in prop::collection::vec(0f64..1e3, 1..12)) {
            let t = norms.len();
            let a = |s| alpha_value(&norms, s, t).unwrap();
            let (max, mean, min, median) = (
                a(AlphaStrategy::Max),
                a(AlphaStrategy::Mean),
                a(AlphaStrategy::Min),
                a(AlphaStrategy::Median),
            );
            // the mean can round a hair past the extremes when all norms are equal
            let slack = 4.0 * f64::EPSILON * max;
            prop_assert!(max + slack >= mean && mean + slack >= min);
            prop_assert!(max >= median && median >= min);
        }

        #[test]
        fn si_g_contributions_have_unit_norm(grads in arb_grads()) {
            let gv: Vec<RealVector> = grads.iter().map(|g| v(g)).collect();
            prop_assume!(gv.iter().all(|g| g.norm2() >= ZERO_NORM_EPS));
            for unit in unit_contributions(&gv).unwrap() {
                let unit = unit.expect("all norms above threshold");
                prop_assert!((unit.norm2() - 1.0).abs() <= 4.0 * f64::EPSILON);
            }
        }

        #[test]
        fn pcgrad_without_conflict_is_ew(
            grads in (1usize..6, 1usize..6).prop_flat_map(|(t, d)| {
                prop::collection::vec(prop::collection::vec(0f64..10.0, d), t)
            }),
            seed in 0u64..1000,
        ) {
            let gv: Vec<RealVector> = grads.iter().map(|g| v(g)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pc = pcgrad_aggregate(&gv, &mut rng).unwrap();
            let ew = ew_aggregate(&gv, &vec![1.0; gv.len()]).unwrap();
            let same = pc.iter().zip(ew.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
