//! Experiment configuration files (TOML).
//!
//! ```toml
//! seeds = [0, 1, 2]
//! out = "runs"
//!
//! [task]
//! kind = "quadratic"        # or "mlp"
//! dim = 10
//! scales = [1.0, 1000.0]
//!
//! [train]
//! method = "si_mtl"
//! lr = 0.01
//!
//! [sweep]
//! alpha = ["max", "min", "mean", "median"]
//! ```
//!
//! Every key has a default and unknown keys are rejected. Errors carry the
//! dotted key path and, when it can be located, the line and column.

use std::fmt;
use std::ops::Range;
use std::path::PathBuf;

use mtl_balance::balancers::{AlphaStrategy, BetaSchedule};
use mtl_balance::tasks::{self, TaskSet, DEFAULT_NOISE_VARIANCE, DEFAULT_OFFSET};
use mtl_balance::trainer::{Method, TrainConfig};
use mtl_balance::RealVector;
use serde::{Deserialize, Serialize};
use toml::de::{DeTable, DeValue};
use toml::Spanned;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub task: TaskSpec,
    pub train: TrainSpec,
    #[serde(skip_serializing_if = "SweepSpec::is_empty")]
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            out: PathBuf::from("runs"),
            task: TaskSpec::default(),
            train: TrainSpec::default(),
            sweep: SweepSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    Quadratic(QuadraticSpec),
    Mlp(MlpSpec),
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec::Quadratic(QuadraticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub scales: Vec<f64>,
    pub offset: f64,
    pub noise_variance: f64,
    /// One center per task. Two tasks default to `±𝟙/√dim`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<Vec<f64>>>,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        Self {
            dim: 10,
            scales: vec![1.0, 1000.0],
            offset: DEFAULT_OFFSET,
            noise_variance: DEFAULT_NOISE_VARIANCE,
            centers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSpec {
    pub tasks: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub samples_per_task: usize,
    pub scales: Vec<f64>,
    pub data_seed: u64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            tasks: 2,
            input_dim: 4,
            hidden: 4,
            samples_per_task: 128,
            scales: vec![1.0, 10.0],
            data_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    Constant,
    InvSqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub method: Method,
    pub alpha: AlphaStrategy,
    pub beta: f64,
    pub beta_schedule: BetaKind,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_halve_at: Option<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub init_scale: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let d = TrainConfig::default();
        let (beta_schedule, beta) = match d.beta {
            BetaSchedule::Constant(c) => (BetaKind::Constant, c),
            BetaSchedule::InvSqrt(c) => (BetaKind::InvSqrt, c),
        };
        Self {
            method: d.method,
            alpha: d.alpha,
            beta,
            beta_schedule,
            lr: d.lr,
            lr_halve_at: d.lr_halve_at,
            steps: d.steps,
            batch_size: d.batch_size,
            init_scale: d.init_scale,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub method: Vec<Method>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub alpha: Vec<AlphaStrategy>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub beta: Vec<f64>,
}

impl SweepSpec {
    pub fn is_empty(&self) -> bool {
        self.method.is_empty() && self.alpha.is_empty() && self.beta.is_empty()
    }
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub method: Method,
    pub alpha: AlphaStrategy,
    pub beta: f64,
}

impl Cell {
    /// Directory name of the cell's outputs.
    pub fn name(&self) -> String {
        format!(
            "{}-{}-beta{}",
            self.method.name(),
            self.alpha.name(),
            self.beta
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: Option<String>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error")?;
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, " at line {l}, column {c}")?;
        }
        if let Some(p) = &self.path {
            write!(f, ": {p}")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn at(text: &str, path: &str, message: impl Into<String>) -> Self {
        let pos = span_of(text, path).map(|s| line_col(text, s.start));
        Self {
            path: Some(path.to_string()),
            line: pos.map(|p| p.0),
            column: pos.map(|p| p.1),
            message: message.into(),
        }
    }
}

/// Parses and validates a config, applying defaults for missing keys.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let span = e.span();
        let pos = span.clone().map(|s| line_col(text, s.start));
        ConfigError {
            path: span.and_then(|s| path_at(text, s.start)),
            line: pos.map(|p| p.0),
            column: pos.map(|p| p.1),
            message: e.message().trim().to_string(),
        }
    })?;
    validate(&config).map_err(|(path, msg)| ConfigError::at(text, &path, msg))?;
    Ok(config)
}

/// Renders a config as TOML that parses back to an equal value.
pub fn render(config: &ExperimentConfig) -> String {
    toml::to_string(config).expect("configs always serialize")
}

type Violation = (String, String);

fn violation(path: &str, msg: impl Into<String>) -> Violation {
    (path.to_string(), msg.into())
}

/// Checks every constraint; the first violation is reported with its key path.
pub fn validate(config: &ExperimentConfig) -> Result<(), Violation> {
    if config.seeds.is_empty() {
        return Err(violation("seeds", "at least one seed is required"));
    }
    if config.seeds.iter().any(|&s| s > i64::MAX as u64) {
        return Err(violation(
            "seeds",
            "seeds must fit in a signed 64-bit integer",
        ));
    }
    validate_task(&config.task)?;
    validate_train(&config.train)?;
    for (i, &b) in config.sweep.beta.iter().enumerate() {
        check_beta(config.train.beta_schedule, b)
            .map_err(|m| violation(&format!("sweep.beta[{i}]"), m))?;
    }
    Ok(())
}

fn validate_task(task: &TaskSpec) -> Result<(), Violation> {
    let check_scales = |scales: &[f64]| {
        if scales.is_empty() {
            return Err(violation("task.scales", "need at least one task"));
        }
        match scales.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            Some(i) => Err(violation(
                &format!("task.scales[{i}]"),
                "scales must be positive",
            )),
            None => Ok(()),
        }
    };
    match task {
        TaskSpec::Quadratic(q) => {
            if q.dim == 0 {
                return Err(violation("task.dim", "must be at least 1"));
            }
            check_scales(&q.scales)?;
            if !(q.offset > 0.0 && q.offset.is_finite()) {
                return Err(violation("task.offset", "must be positive"));
            }
            if !(q.noise_variance >= 0.0 && q.noise_variance < q.offset) {
                return Err(violation("task.noise_variance", "must lie in [0, offset)"));
            }
            match &q.centers {
                Some(c) => {
                    if c.len() != q.scales.len() {
                        return Err(violation(
                            "task.centers",
                            format!("{} centers for {} scales", c.len(), q.scales.len()),
                        ));
                    }
                    for (i, row) in c.iter().enumerate() {
                        if row.len() != q.dim || row.iter().any(|x| !x.is_finite()) {
                            return Err(violation(
                                &format!("task.centers[{i}]"),
                                format!("need {} finite coordinates", q.dim),
                            ));
                        }
                    }
                }
                None if q.scales.len() != 2 => {
                    return Err(violation(
                        "task.centers",
                        "required unless there are exactly two tasks",
                    ));
                }
                None => {}
            }
        }
        TaskSpec::Mlp(m) => {
            for (key, v) in [
                ("tasks", m.tasks),
                ("input_dim", m.input_dim),
                ("hidden", m.hidden),
                ("samples_per_task", m.samples_per_task),
            ] {
                if v == 0 {
                    return Err(violation(&format!("task.{key}"), "must be at least 1"));
                }
            }
            check_scales(&m.scales)?;
            if m.scales.len() != m.tasks {
                return Err(violation(
                    "task.scales",
                    format!("{} scales for {} tasks", m.scales.len(), m.tasks),
                ));
            }
        }
    }
    Ok(())
}

fn validate_train(t: &TrainSpec) -> Result<(), Violation> {
    if !(t.lr > 0.0 && t.lr.is_finite()) {
        return Err(violation(
            "train.lr",
            format!("must be positive, got {}", t.lr),
        ));
    }
    if t.steps == 0 {
        return Err(violation("train.steps", "must be at least 1"));
    }
    if t.batch_size == 0 {
        return Err(violation("train.batch_size", "must be at least 1"));
    }
    if !(t.init_scale > 0.0 && t.init_scale.is_finite()) {
        return Err(violation("train.init_scale", "must be positive"));
    }
    check_beta(t.beta_schedule, t.beta).map_err(|m| violation("train.beta", m))
}

fn check_beta(kind: BetaKind, b: f64) -> Result<(), String> {
    beta_schedule(kind, b).validate().map_err(|e| e.to_string())
}

fn beta_schedule(kind: BetaKind, b: f64) -> BetaSchedule {
    match kind {
        BetaKind::Constant => BetaSchedule::Constant(b),
        BetaKind::InvSqrt => BetaSchedule::InvSqrt(b),
    }
}

impl ExperimentConfig {
    /// The sweep grid in method, alpha, beta order; a single cell when no
    /// axis is set.
    pub fn cells(&self) -> Vec<Cell> {
        fn or<T: Copy>(v: &[T], d: T) -> Vec<T> {
            if v.is_empty() {
                vec![d]
            } else {
                v.to_vec()
            }
        }
        let methods = or(&self.sweep.method, self.train.method);
        let alphas = or(&self.sweep.alpha, self.train.alpha);
        let betas = or(&self.sweep.beta, self.train.beta);
        let mut cells = Vec::new();
        for &method in &methods {
            for &alpha in &alphas {
                for &beta in &betas {
                    cells.push(Cell {
                        method,
                        alpha,
                        beta,
                    });
                }
            }
        }
        cells
    }

    pub fn train_config(&self, cell: &Cell, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            method: cell.method,
            alpha: cell.alpha,
            beta: beta_schedule(t.beta_schedule, cell.beta),
            lr: t.lr,
            lr_halve_at: t.lr_halve_at,
            steps: t.steps,
            batch_size: t.batch_size,
            seed,
            init_scale: t.init_scale,
        }
    }

    pub fn task_set(&self) -> mtl_balance::Result<TaskSet> {
        match &self.task {
            TaskSpec::Quadratic(q) => {
                let centers = match &q.centers {
                    Some(c) => c
                        .iter()
                        .map(|row| RealVector::new(row.clone()))
                        .collect::<mtl_balance::Result<_>>()?,
                    None => default_centers(q.dim),
                };
                TaskSet::scaled_quadratics(
                    q.dim,
                    centers,
                    q.scales.clone(),
                    q.offset,
                    q.noise_variance,
                )
            }
            TaskSpec::Mlp(m) => tasks::make_mlp_regression(
                m.tasks,
                m.input_dim,
                m.hidden,
                m.samples_per_task,
                &m.scales,
                m.data_seed,
            ),
        }
    }
}

/// `±𝟙/√dim`: two unit-norm centers at distance 2.
pub fn default_centers(dim: usize) -> Vec<RealVector> {
    let c = 1.0 / (dim as f64).sqrt();
    [-c, c]
        .iter()
        .map(|&x| RealVector::new(vec![x; dim]).expect("finite"))
        .collect()
}

/// 1-based line and column (in characters) of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn parse_spans(text: &str) -> Option<Spanned<DeTable<'_>>> {
    DeTable::parse(text).ok()
}

/// Span of the value at a dotted path such as `train.lr` or `task.scales[1]`.
fn span_of(text: &str, path: &str) -> Option<Range<usize>> {
    let doc = parse_spans(text)?;
    let mut table = doc.get_ref();
    let mut span = None;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let (key, index) = match seg.split_once('[') {
            Some((k, rest)) => (k, rest.trim_end_matches(']').parse::<usize>().ok()),
            None => (*seg, None),
        };
        let (k, v) = table.iter().find(|(k, _)| k.get_ref().as_ref() == key)?;
        span = Some(k.span());
        let mut value = v;
        if let Some(idx) = index {
            if let DeValue::Array(items) = value.get_ref() {
                if let Some(item) = items.get(idx) {
                    value = item;
                    span = Some(item.span());
                }
            }
        }
        match value.get_ref() {
            DeValue::Table(t) if i + 1 < segments.len() => table = t,
            _ if i + 1 < segments.len() => return span,
            _ => {}
        }
    }
    span
}

/// Dotted path of the innermost key whose key or value span contains `offset`.
fn path_at(text: &str, offset: usize) -> Option<String> {
    fn walk(table: &DeTable<'_>, offset: usize, prefix: &str) -> Option<String> {
        for (k, v) in table.iter() {
            let key = if prefix.is_empty() {
                k.get_ref().to_string()
            } else {
                format!("{prefix}.{}", k.get_ref())
            };
            let inside = |r: Range<usize>| r.start <= offset && offset < r.end.max(r.start + 1);
            if let DeValue::Table(t) = v.get_ref() {
                if let Some(p) = walk(t, offset, &key) {
                    return Some(p);
                }
            }
            if inside(k.span()) || inside(v.span()) {
                return Some(key);
            }
        }
        None
    }
    let doc = parse_spans(text)?;
    walk(doc.get_ref(), offset, "")
}
