//! Differentiable multi-task suites.
//!
//! Two families are provided:
//!
//! * **Scaled quadratics.** Task `t` has full-dataset loss
//!   `s_t·(‖θ − a_t‖² + c)`. Samples are perturbed centers `a_t + ξ` with
//!   `E‖ξ‖² = σ²`; each sample's loss subtracts the known `σ²` so that batch
//!   losses are unbiased for the full loss, and stay bounded below by
//!   `s_t·(c − σ²) > 0`. There are no task-specific parameters.
//! * **MLP regression.** A shared one-hidden-layer tanh encoder feeding one
//!   linear head per task, trained on data produced by a fixed random teacher
//!   network per task. Loss is `s_t·(MSE + 1e-3)`; gradients are derived by
//!   hand (reverse mode).
//!
//! Every loss produced here is strictly positive, so the log transform is
//! always defined.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::trainer::{train, Method, TrainConfig};
use crate::vec_math::RealVector;

/// Default additive constant for quadratic losses.
pub const DEFAULT_OFFSET: f64 = 0.1;
/// Default total variance `E‖ξ‖²` of the per-sample center perturbation.
pub const DEFAULT_NOISE_VARIANCE: f64 = 0.01;
/// Additive constant of the MLP losses.
pub const MLP_OFFSET: f64 = 1e-3;

/// Restarts behind an MLP single-task reference.
pub const STL_RESTARTS: u64 = 12;

const MLP_TARGET_NOISE: f64 = 0.05;

/// Shared parameters `θ` and one task-specific block `ψ_t` per task.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shared: RealVector,
    pub task_specific: Vec<RealVector>,
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// A mini-batch for one task. For quadratics each input row is a sampled
/// center and the single target column holds that sample's noise variance
/// correction; for MLP tasks inputs and targets are the regression pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub task_index: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct QuadraticSuite {
    dim: usize,
    centers: Vec<RealVector>,
    noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct RegressionData {
    inputs: Matrix,
    targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct MlpSuite {
    input_dim: usize,
    hidden: usize,
    data: Vec<RegressionData>,
}

#[derive(Debug, Clone, PartialEq)]
enum Family {
    Quadratic(QuadraticSuite),
    Mlp(MlpSuite),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    ScaledQuadratic,
    MlpRegression,
}

/// An immutable collection of tasks sharing one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    family: Family,
    scales: Vec<f64>,
    offset: f64,
}

/// Best single-task loss and, when known in closed form, its minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct StlReference {
    pub loss: f64,
    pub shared: Option<RealVector>,
}

/// Loss value with gradients for the shared and task-specific blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub grad_shared: RealVector,
    pub grad_task_specific: RealVector,
}

fn check_scales(scales: &[f64]) -> Result<()> {
    for &s in scales {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::domain("task scale must be positive", s));
        }
    }
    Ok(())
}

/// Two scaled quadratics with the default noise variance.
pub fn make_scaled_quadratic_pair(
    dim: usize,
    centers: (RealVector, RealVector),
    scales: (f64, f64),
    offset: f64,
) -> Result<TaskSet> {
    TaskSet::scaled_quadratics(
        dim,
        vec![centers.0, centers.1],
        vec![scales.0, scales.1],
        offset,
        DEFAULT_NOISE_VARIANCE,
    )
}

/// MLP regression suite; datasets are reproducible from `seed`.
pub fn make_mlp_regression(
    task_count: usize,
    input_dim: usize,
    hidden: usize,
    samples_per_task: usize,
    scales: &[f64],
    seed: u64,
) -> Result<TaskSet> {
    TaskSet::mlp_regression(
        task_count,
        input_dim,
        hidden,
        samples_per_task,
        scales,
        seed,
    )
}

impl TaskSet {
    /// Quadratic tasks `s_t·(‖θ − a_t‖² + offset)`. Batch samples perturb the
    /// center with total variance `noise_variance`, which must be below the
    /// offset so every batch loss stays positive; pass 0 for noise-free
    /// batches.
    pub fn scaled_quadratics(
        dim: usize,
        centers: Vec<RealVector>,
        scales: Vec<f64>,
        offset: f64,
        noise_variance: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument(
                "quadratic dimension must be at least 1".into(),
            ));
        }
        if centers.is_empty() {
            return Err(Error::Argument("need at least one task".into()));
        }
        if centers.len() != scales.len() {
            return Err(Error::Dimension {
                expected: centers.len(),
                found: scales.len(),
            });
        }
        for c in &centers {
            if c.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: c.len(),
                });
            }
        }
        check_scales(&scales)?;
        if !(offset > 0.0 && offset.is_finite()) {
            return Err(Error::domain("loss offset must be positive", offset));
        }
        if !(noise_variance >= 0.0 && noise_variance < offset) {
            return Err(Error::domain(
                "noise variance must lie in [0, offset)",
                noise_variance,
            ));
        }
        Ok(Self {
            family: Family::Quadratic(QuadraticSuite {
                dim,
                centers,
                noise_variance,
            }),
            scales,
            offset,
        })
    }

    pub fn mlp_regression(
        task_count: usize,
        input_dim: usize,
        hidden: usize,
        samples_per_task: usize,
        scales: &[f64],
        seed: u64,
    ) -> Result<Self> {
        if task_count == 0 || input_dim == 0 || hidden == 0 || samples_per_task == 0 {
            return Err(Error::Argument(
                "MLP dimensions must all be at least 1".into(),
            ));
        }
        if scales.len() != task_count {
            return Err(Error::Dimension {
                expected: task_count,
                found: scales.len(),
            });
        }
        check_scales(scales)?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_std = 1.0 / (input_dim as f64).sqrt();
        let v_std = 1.0 / (hidden as f64).sqrt();
        let mut data = Vec::with_capacity(task_count);
        for _ in 0..task_count {
            let teacher_w: Vec<f64> = (0..hidden * input_dim)
                .map(|_| w_std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let teacher_b: Vec<f64> = (0..hidden)
                .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let teacher_v: Vec<f64> = (0..hidden)
                .map(|_| v_std * rng.sample::<f64, _>(StandardNormal))
                .collect();

            let xs: Vec<f64> = (0..samples_per_task * input_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let inputs = Matrix::new(samples_per_task, input_dim, xs)?;
            let mut ys: Vec<f64> = (0..samples_per_task)
                .map(|i| {
                    let x = inputs.row(i);
                    let out: f64 = (0..hidden)
                        .map(|j| {
                            let z = teacher_b[j]
                                + dot(&teacher_w[j * input_dim..(j + 1) * input_dim], x);
                            teacher_v[j] * z.tanh()
                        })
                        .sum();
                    out + MLP_TARGET_NOISE * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            standardize(&mut ys);
            data.push(RegressionData {
                inputs,
                targets: ys,
            });
        }
        Ok(Self {
            family: Family::Mlp(MlpSuite {
                input_dim,
                hidden,
                data,
            }),
            scales: scales.to_vec(),
            offset: MLP_OFFSET,
        })
    }

    pub fn kind(&self) -> TaskKind {
        match self.family {
            Family::Quadratic(_) => TaskKind::ScaledQuadratic,
            Family::Mlp(_) => TaskKind::MlpRegression,
        }
    }

    pub fn task_count(&self) -> usize {
        self.scales.len()
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn shared_dim(&self) -> usize {
        match &self.family {
            Family::Quadratic(q) => q.dim,
            Family::Mlp(m) => m.hidden * m.input_dim + m.hidden,
        }
    }

    pub fn task_specific_dim(&self) -> usize {
        match &self.family {
            Family::Quadratic(_) => 0,
            Family::Mlp(m) => m.hidden + 1,
        }
    }

    /// Centers of a quadratic suite.
    pub fn centers(&self) -> Option<&[RealVector]> {
        match &self.family {
            Family::Quadratic(q) => Some(&q.centers),
            Family::Mlp(_) => None,
        }
    }

    /// Same suite with task `t` only.
    pub fn single_task(&self, t: usize) -> Result<TaskSet> {
        self.check_task(t)?;
        let family = match &self.family {
            Family::Quadratic(q) => Family::Quadratic(QuadraticSuite {
                dim: q.dim,
                centers: vec![q.centers[t].clone()],
                noise_variance: q.noise_variance,
            }),
            Family::Mlp(m) => Family::Mlp(MlpSuite {
                input_dim: m.input_dim,
                hidden: m.hidden,
                data: vec![m.data[t].clone()],
            }),
        };
        Ok(TaskSet {
            family,
            scales: vec![self.scales[t]],
            offset: self.offset,
        })
    }

    /// Returns a copy whose task `t` targets are replaced by `f(i, y_i)`.
    /// Only meaningful for MLP suites; used to probe isolation between tasks.
    pub fn with_mapped_targets<F>(&self, t: usize, f: F) -> Result<TaskSet>
    where
        F: Fn(usize, f64) -> f64,
    {
        self.check_task(t)?;
        let mut out = self.clone();
        match &mut out.family {
            Family::Mlp(m) => {
                for (i, y) in m.data[t].targets.iter_mut().enumerate() {
                    *y = f(i, *y);
                }
                Ok(out)
            }
            Family::Quadratic(_) => Err(Error::Argument(
                "quadratic suites have no regression targets".into(),
            )),
        }
    }

    fn check_task(&self, t: usize) -> Result<()> {
        if t >= self.task_count() {
            return Err(Error::Argument(format!(
                "task index {t} out of range for {} tasks",
                self.task_count()
            )));
        }
        Ok(())
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.shared.len() != self.shared_dim() {
            return Err(Error::Dimension {
                expected: self.shared_dim(),
                found: params.shared.len(),
            });
        }
        if params.task_specific.len() != self.task_count() {
            return Err(Error::Dimension {
                expected: self.task_count(),
                found: params.task_specific.len(),
            });
        }
        for psi in &params.task_specific {
            if psi.len() != self.task_specific_dim() {
                return Err(Error::Dimension {
                    expected: self.task_specific_dim(),
                    found: psi.len(),
                });
            }
        }
        Ok(())
    }

    /// Draws `θ_0` then `ψ_{1,0}..ψ_{T,0}` from `N(0, init_scale²)`.
    pub fn init_params<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        init_scale: f64,
    ) -> Result<ModelParams> {
        let normal = Normal::new(0.0, init_scale)
            .map_err(|_| Error::domain("init scale must be positive", init_scale))?;
        let mut draw = |n: usize| RealVector::new((0..n).map(|_| normal.sample(rng)).collect());
        let shared = draw(self.shared_dim())?;
        let task_specific = (0..self.task_count())
            .map(|_| draw(self.task_specific_dim()))
            .collect::<Result<_>>()?;
        Ok(ModelParams {
            shared,
            task_specific,
        })
    }

    /// Samples a mini-batch for task `t`, i.i.d. with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        t: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Batch> {
        self.check_task(t)?;
        if batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        match &self.family {
            Family::Quadratic(q) => {
                let center = &q.centers[t];
                let coord_std = (q.noise_variance / q.dim as f64).sqrt();
                let mut inputs = Matrix::new(batch_size, q.dim, vec![0.0; batch_size * q.dim])?;
                for i in 0..batch_size {
                    for (x, a) in inputs.row_mut(i).iter_mut().zip(center.iter()) {
                        let xi: f64 = rng.sample(StandardNormal);
                        *x = a + coord_std * xi;
                    }
                }
                let targets = Matrix::new(batch_size, 1, vec![q.noise_variance; batch_size])?;
                Ok(Batch {
                    inputs,
                    targets,
                    task_index: t,
                })
            }
            Family::Mlp(m) => {
                let data = &m.data[t];
                let n = data.targets.len();
                let mut xs = Vec::with_capacity(batch_size * m.input_dim);
                let mut ys = Vec::with_capacity(batch_size);
                for _ in 0..batch_size {
                    let i = rng.random_range(0..n);
                    xs.extend_from_slice(data.inputs.row(i));
                    ys.push(data.targets[i]);
                }
                Ok(Batch {
                    inputs: Matrix::new(batch_size, m.input_dim, xs)?,
                    targets: Matrix::new(batch_size, 1, ys)?,
                    task_index: t,
                })
            }
        }
    }

    /// The whole dataset of task `t` as one batch; for quadratics this is the
    /// noise-free center, whose loss is the full-dataset loss.
    pub fn full_batch(&self, t: usize) -> Result<Batch> {
        self.check_task(t)?;
        match &self.family {
            Family::Quadratic(q) => Ok(Batch {
                inputs: Matrix::new(1, q.dim, q.centers[t].as_slice().to_vec())?,
                targets: Matrix::new(1, 1, vec![0.0])?,
                task_index: t,
            }),
            Family::Mlp(m) => {
                let data = &m.data[t];
                Ok(Batch {
                    inputs: data.inputs.clone(),
                    targets: Matrix::new(data.targets.len(), 1, data.targets.clone())?,
                    task_index: t,
                })
            }
        }
    }

    fn check_batch(&self, t: usize, batch: &Batch) -> Result<()> {
        self.check_task(t)?;
        if batch.task_index != t {
            return Err(Error::Argument(format!(
                "batch belongs to task {} but task {t} was requested",
                batch.task_index
            )));
        }
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let want_cols = match &self.family {
            Family::Quadratic(q) => q.dim,
            Family::Mlp(m) => m.input_dim,
        };
        if batch.inputs.cols() != want_cols {
            return Err(Error::Dimension {
                expected: want_cols,
                found: batch.inputs.cols(),
            });
        }
        if batch.targets.rows() != batch.inputs.rows() || batch.targets.cols() != 1 {
            return Err(Error::Dimension {
                expected: batch.inputs.rows(),
                found: batch.targets.rows(),
            });
        }
        Ok(())
    }

    /// Batch loss and both gradients in one pass.
    pub fn evaluate(&self, t: usize, params: &ModelParams, batch: &Batch) -> Result<Evaluation> {
        self.check_batch(t, batch)?;
        self.check_params(params)?;
        let scale = self.scales[t];
        let n = batch.len() as f64;
        let eval_err = |reason: &str| Error::Evaluation {
            task: t,
            reason: reason.to_string(),
        };

        let (raw_loss, grad_shared, grad_psi) = match &self.family {
            Family::Quadratic(_) => {
                let theta = params.shared.as_slice();
                let mut total = 0.0;
                let mut grad = vec![0.0; theta.len()];
                for i in 0..batch.len() {
                    let x = batch.inputs.row(i);
                    let mut sq = 0.0;
                    for (j, (th, xj)) in theta.iter().zip(x).enumerate() {
                        let d = th - xj;
                        sq += d * d;
                        grad[j] += 2.0 * d;
                    }
                    total += sq - batch.targets.row(i)[0] + self.offset;
                }
                let grad: Vec<f64> = grad.into_iter().map(|g| scale * g / n).collect();
                (scale * total / n, grad, Vec::new())
            }
            Family::Mlp(m) => mlp_forward_backward(m, scale, self.offset, params, t, batch),
        };

        if !raw_loss.is_finite() {
            return Err(eval_err("non-finite loss"));
        }
        if raw_loss <= 0.0 {
            return Err(eval_err("non-positive loss"));
        }
        let grad_shared =
            RealVector::new(grad_shared).map_err(|_| eval_err("non-finite shared gradient"))?;
        let grad_task_specific =
            RealVector::new(grad_psi).map_err(|_| eval_err("non-finite task-specific gradient"))?;
        Ok(Evaluation {
            loss: raw_loss,
            grad_shared,
            grad_task_specific,
        })
    }

    /// Mean loss of task `t` over `batch`.
    pub fn loss(&self, t: usize, params: &ModelParams, batch: &Batch) -> Result<f64> {
        Ok(self.evaluate(t, params, batch)?.loss)
    }

    /// Gradient of the batch loss with respect to `θ`.
    pub fn grad_shared(&self, t: usize, params: &ModelParams, batch: &Batch) -> Result<RealVector> {
        Ok(self.evaluate(t, params, batch)?.grad_shared)
    }

    /// Gradient of the batch loss with respect to `ψ_t`.
    pub fn grad_task_specific(
        &self,
        t: usize,
        params: &ModelParams,
        batch: &Batch,
    ) -> Result<RealVector> {
        Ok(self.evaluate(t, params, batch)?.grad_task_specific)
    }

    /// Loss of task `t` over its full dataset.
    pub fn full_loss(&self, t: usize, params: &ModelParams) -> Result<f64> {
        self.loss(t, params, &self.full_batch(t)?)
    }

    /// Single-task reference for task `t`. Quadratics are solved in closed
    /// form. MLP tasks are trained alone by plain gradient descent with the
    /// step size, batch size and step count of `budget`, keeping the best of
    /// `STL_RESTARTS` seeds starting at `budget.seed`.
    pub fn stl_reference(&self, t: usize, budget: &TrainConfig) -> Result<StlReference> {
        self.check_task(t)?;
        match &self.family {
            Family::Quadratic(q) => Ok(StlReference {
                loss: self.scales[t] * self.offset,
                shared: Some(q.centers[t].clone()),
            }),
            Family::Mlp(_) => {
                let single = self.single_task(t)?;
                let mut best = f64::INFINITY;
                for r in 0..STL_RESTARTS {
                    let cfg = TrainConfig {
                        method: Method::Ew,
                        seed: budget.seed.wrapping_add(r),
                        ..budget.clone()
                    };
                    let trace = train(&cfg, &single)?;
                    best = best.min(trace.final_losses[0]);
                }
                Ok(StlReference {
                    loss: best,
                    shared: None,
                })
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn standardize(ys: &mut [f64]) {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    for y in ys.iter_mut() {
        *y = (*y - mean) / sd;
    }
}

/// Forward pass and hand-derived reverse pass of the tanh MLP.
///
/// Shared layout: `W` (hidden × input, row-major) followed by `b` (hidden).
/// Head layout: `v` (hidden) followed by the output bias.
fn mlp_forward_backward(
    m: &MlpSuite,
    scale: f64,
    offset: f64,
    params: &ModelParams,
    t: usize,
    batch: &Batch,
) -> (f64, Vec<f64>, Vec<f64>) {
    let (din, h) = (m.input_dim, m.hidden);
    let theta = params.shared.as_slice();
    let (w, b) = theta.split_at(h * din);
    let psi = params.task_specific[t].as_slice();
    let (v, c) = (&psi[..h], psi[h]);
    let n = batch.len() as f64;

    let mut grad_w = vec![0.0; h * din];
    let mut grad_b = vec![0.0; h];
    let mut grad_v = vec![0.0; h];
    let mut grad_c = 0.0;
    let mut sse = 0.0;
    let mut hidden = vec![0.0; h];

    for i in 0..batch.len() {
        let x = batch.inputs.row(i);
        let y = batch.targets.row(i)[0];
        for j in 0..h {
            hidden[j] = (b[j] + dot(&w[j * din..(j + 1) * din], x)).tanh();
        }
        let pred = dot(v, &hidden) + c;
        let resid = pred - y;
        sse += resid * resid;

        // d(scale * mean sq)/d pred
        let r = 2.0 * scale * resid / n;
        grad_c += r;
        for j in 0..h {
            grad_v[j] += r * hidden[j];
            let dz = r * v[j] * (1.0 - hidden[j] * hidden[j]);
            grad_b[j] += dz;
            for (gw, xk) in grad_w[j * din..(j + 1) * din].iter_mut().zip(x) {
                *gw += dz * xk;
            }
        }
    }
    let loss = scale * (sse / n + offset);
    grad_w.extend_from_slice(&grad_b);
    grad_v.push(grad_c);
    (loss, grad_w, grad_v)
}
