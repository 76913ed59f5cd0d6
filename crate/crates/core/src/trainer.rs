//! The multi-task training loop.
//!
//! Each step samples one mini-batch per task, differentiates the (possibly
//! log-transformed) batch losses, hands the shared-parameter gradients to the
//! method's balancer, takes a plain gradient step on `θ` with the aggregated
//! direction and a per-task gradient step on every `ψ_t`.
//!
//! One RNG stream drives a run and is consumed in a fixed order:
//! parameter initialization (`θ`, then `ψ_1..ψ_T`), then per step the batches
//! in task order followed by any balancer randomness (RLW weights, PCGrad
//! visiting orders).

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::balancers::{Aggregate, AlphaStrategy, BalancerKind, BalancerState, BetaSchedule};
use crate::error::{Error, Result};
use crate::tasks::{ModelParams, TaskSet};
use crate::transforms::{transform_grad, TransformKind};
use crate::vec_math::{scaled_add, RealVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ew,
    Lw,
    Rlw,
    Gls,
    Pcgrad,
    SiG,
    SiMtl,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ew,
        Method::Lw,
        Method::Rlw,
        Method::Gls,
        Method::Pcgrad,
        Method::SiG,
        Method::SiMtl,
    ];

    /// Loss transform applied before differentiation.
    pub fn transform(&self) -> TransformKind {
        match self {
            Method::Lw | Method::SiMtl => TransformKind::Log,
            _ => TransformKind::Identity,
        }
    }

    pub fn balancer(&self) -> BalancerKind {
        match self {
            Method::Ew | Method::Lw => BalancerKind::Ew,
            Method::Rlw => BalancerKind::Rlw,
            Method::Gls => BalancerKind::Gls,
            Method::Pcgrad => BalancerKind::Pcgrad,
            Method::SiG | Method::SiMtl => BalancerKind::SiG,
        }
    }

    pub fn uses_ema(&self) -> bool {
        self.balancer() == BalancerKind::SiG
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ew => "ew",
            Method::Lw => "lw",
            Method::Rlw => "rlw",
            Method::Gls => "gls",
            Method::Pcgrad => "pcgrad",
            Method::SiG => "si_g",
            Method::SiMtl => "si_mtl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub alpha: AlphaStrategy,
    pub beta: BetaSchedule,
    pub lr: f64,
    pub lr_halve_at: Option<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::SiMtl,
            alpha: AlphaStrategy::Max,
            beta: BetaSchedule::Constant(0.9),
            lr: 0.01,
            lr_halve_at: None,
            steps: 1000,
            batch_size: 8,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn transform(&self) -> TransformKind {
        self.method.transform()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::domain("learning rate must be positive", self.lr));
        }
        if self.steps == 0 {
            return Err(Error::Argument("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::domain(
                "init scale must be positive",
                self.init_scale,
            ));
        }
        self.beta.validate()
    }

    /// Learning rate in effect at step `k`.
    pub fn lr_at(&self, k: usize) -> f64 {
        match self.lr_halve_at {
            Some(h) if k >= h => 0.5 * self.lr,
            _ => self.lr,
        }
    }
}

/// One step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Raw batch loss of each task.
    pub losses: Vec<f64>,
    /// Norm of each task's balancer input: `‖ĝ_t‖` for EMA methods, the
    /// (transformed) gradient norm otherwise.
    pub task_grad_norms: Vec<f64>,
    pub alpha: f64,
    pub agg_grad_norm: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub config: TrainConfig,
    pub records: Vec<StepRecord>,
    pub final_params: ModelParams,
    /// Full-dataset loss of every task at the final parameters.
    pub final_losses: Vec<f64>,
    pub wall_time: Duration,
}

/// Everything except wall time.
impl PartialEq for RunTrace {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.records == other.records
            && self.final_params == other.final_params
            && self.final_losses == other.final_losses
    }
}

/// Per-step view handed to [`train_observed`] after the parameter update.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub step: usize,
    pub losses: &'a [f64],
    /// Untransformed gradients of the batch losses with respect to `θ`.
    pub raw_shared_grads: &'a [RealVector],
    /// Gradients actually passed to the balancer.
    pub balancer_inputs: &'a [RealVector],
    pub aggregate: &'a Aggregate,
    pub balancer: &'a BalancerState,
    pub params: &'a ModelParams,
}

pub fn train(config: &TrainConfig, task_set: &TaskSet) -> Result<RunTrace> {
    train_observed(config, task_set, |_| {})
}

/// [`train`] with a callback invoked after every step.
pub fn train_observed<F>(config: &TrainConfig, task_set: &TaskSet, observer: F) -> Result<RunTrace>
where
    F: FnMut(&StepEvent<'_>),
{
    run(config, task_set, None, observer)
}

/// [`train`] starting from explicit parameters instead of a random draw. The
/// RNG stream then starts directly with the first step's batches.
pub fn train_from<F>(
    config: &TrainConfig,
    task_set: &TaskSet,
    initial: ModelParams,
    observer: F,
) -> Result<RunTrace>
where
    F: FnMut(&StepEvent<'_>),
{
    run(config, task_set, Some(initial), observer)
}

fn run<F>(
    config: &TrainConfig,
    task_set: &TaskSet,
    initial: Option<ModelParams>,
    mut observer: F,
) -> Result<RunTrace>
where
    F: FnMut(&StepEvent<'_>),
{
    config.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let task_count = task_set.task_count();
    let transform = config.transform();

    let mut params = match initial {
        Some(p) => {
            task_set.check_params(&p)?;
            p
        }
        None => task_set.init_params(&mut rng, config.init_scale)?,
    };
    let mut balancer = BalancerState::new(
        config.method.balancer(),
        task_count,
        task_set.shared_dim(),
        config.alpha,
        config.beta,
    )?;
    let mut records = Vec::with_capacity(config.steps);

    for k in 0..config.steps {
        let diverged = |task: Option<usize>, reason: String| Error::Divergence {
            step: k,
            task,
            reason,
        };
        let lr = config.lr_at(k);

        let mut losses = Vec::with_capacity(task_count);
        let mut raw_shared = Vec::with_capacity(task_count);
        let mut raw_specific = Vec::with_capacity(task_count);
        for t in 0..task_count {
            let batch = task_set.sample_batch(t, config.batch_size, &mut rng)?;
            let eval = task_set
                .evaluate(t, &params, &batch)
                .map_err(|e| diverged(Some(t), e.to_string()))?;
            losses.push(eval.loss);
            raw_shared.push(eval.grad_shared);
            raw_specific.push(eval.grad_task_specific);
        }

        let inputs: Vec<RealVector> = losses
            .iter()
            .zip(&raw_shared)
            .enumerate()
            .map(|(t, (&l, g))| {
                transform_grad(transform, l, g).map_err(|e| diverged(Some(t), e.to_string()))
            })
            .collect::<Result<_>>()?;

        let agg = balancer
            .aggregate(&inputs, &losses, &mut rng)
            .map_err(|e| diverged(None, e.to_string()))?;

        let shared = scaled_add(-lr, &agg.direction, &params.shared)
            .map_err(|e| diverged(None, format!("shared update: {e}")))?;

        let mut task_specific = Vec::with_capacity(task_count);
        for t in 0..task_count {
            let mut g = transform_grad(transform, losses[t], &raw_specific[t])
                .map_err(|e| diverged(Some(t), e.to_string()))?;
            if let Some(w) = &agg.weights {
                if w[t] != 1.0 {
                    g = g
                        .scale(w[t])
                        .map_err(|e| diverged(Some(t), e.to_string()))?;
                }
            }
            let psi = scaled_add(-lr, &g, &params.task_specific[t])
                .map_err(|e| diverged(Some(t), format!("task-specific update: {e}")))?;
            task_specific.push(psi);
        }
        params = ModelParams {
            shared,
            task_specific,
        };

        let agg_norm = agg.direction.norm2();
        if !agg.alpha.is_finite() || !agg_norm.is_finite() {
            return Err(diverged(None, "non-finite aggregate".into()));
        }

        observer(&StepEvent {
            step: k,
            losses: &losses,
            raw_shared_grads: &raw_shared,
            balancer_inputs: &inputs,
            aggregate: &agg,
            balancer: &balancer,
            params: &params,
        });

        records.push(StepRecord {
            step: k,
            losses,
            task_grad_norms: agg.task_norms,
            alpha: agg.alpha,
            agg_grad_norm: agg_norm,
            lr,
        });
    }

    let final_losses = (0..task_count)
        .map(|t| {
            task_set
                .full_loss(t, &params)
                .map_err(|e| Error::Divergence {
                    step: config.steps,
                    task: Some(t),
                    reason: e.to_string(),
                })
        })
        .collect::<Result<_>>()?;

    Ok(RunTrace {
        config: config.clone(),
        records,
        final_params: params,
        final_losses,
        wall_time: started.elapsed(),
    })
}

/// One independent run per seed, results in seed order.
pub fn run_many(config: &TrainConfig, task_set: &TaskSet, seeds: &[u64]) -> Result<Vec<RunTrace>> {
    if seeds.is_empty() {
        return Err(Error::Argument("at least one seed is required".into()));
    }
    seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                seed,
                ..config.clone()
            };
            train(&cfg, task_set).map_err(|e| Error::Seeded {
                seed,
                source: Box::new(e),
            })
        })
        .collect()
}
