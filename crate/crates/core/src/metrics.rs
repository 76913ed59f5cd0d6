//! The Δp overall metric and multi-seed summaries.
//!
//! `Δp,t = 100/N_t · Σ_i (−1)^{s_i} (M_i − M_i^STL) / M_i^STL` with
//! `s_i = 0` when larger is better, and `Δp` is the mean of `Δp,t` over
//! tasks. Tasks and metrics are matched by name and summed in name order, so
//! the result does not depend on how either table is laid out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub higher_is_better: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub name: String,
    pub metrics: Vec<Metric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub tasks: Vec<TaskMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaPResult {
    /// `Δp,t` per task, in the reference table's task order, in percent.
    pub per_task: Vec<f64>,
    pub overall: f64,
}

impl TaskMetrics {
    pub fn new(name: impl Into<String>, metrics: Vec<Metric>) -> Self {
        Self {
            name: name.into(),
            metrics,
        }
    }

    fn check_unique(&self) -> Result<()> {
        let mut names: Vec<&str> = self.metrics.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Structure(format!(
                "metric {:?} appears twice in task {:?}",
                w[0], self.name
            )));
        }
        Ok(())
    }
}

impl Metric {
    pub fn new(name: impl Into<String>, value: f64, higher_is_better: bool) -> Self {
        Self {
            name: name.into(),
            value,
            higher_is_better,
        }
    }
}

/// `Δp,t` of `method` against `stl` for one task, in percent.
pub fn delta_p_task(stl: &TaskMetrics, method: &TaskMetrics) -> Result<f64> {
    stl.check_unique()?;
    method.check_unique()?;
    if stl.metrics.len() != method.metrics.len() {
        return Err(Error::Structure(format!(
            "task {:?}: {} reference metrics vs {} method metrics",
            stl.name,
            stl.metrics.len(),
            method.metrics.len()
        )));
    }
    if stl.metrics.is_empty() {
        return Err(Error::Structure(format!(
            "task {:?} has no metrics",
            stl.name
        )));
    }
    let mut reference: Vec<&Metric> = stl.metrics.iter().collect();
    reference.sort_by(|a, b| a.name.cmp(&b.name));

    let mut sum = 0.0;
    for r in reference {
        let m = method
            .metrics
            .iter()
            .find(|m| m.name == r.name)
            .ok_or_else(|| {
                Error::Structure(format!("task {:?} lacks metric {:?}", method.name, r.name))
            })?;
        if m.higher_is_better != r.higher_is_better {
            return Err(Error::Structure(format!(
                "metric {:?} of task {:?} disagrees on direction",
                r.name, stl.name
            )));
        }
        if r.value == 0.0 {
            return Err(Error::domain(
                format!("reference value of {}/{} is zero", stl.name, r.name),
                r.value,
            ));
        }
        let rel = (m.value - r.value) / r.value;
        sum += if r.higher_is_better { rel } else { -rel };
    }
    Ok(100.0 * sum / stl.metrics.len() as f64)
}

/// `Δp` of `method` against `stl`.
pub fn delta_p(stl: &MetricTable, method: &MetricTable) -> Result<DeltaPResult> {
    if stl.tasks.len() != method.tasks.len() {
        return Err(Error::Structure(format!(
            "{} reference tasks vs {} method tasks",
            stl.tasks.len(),
            method.tasks.len()
        )));
    }
    if stl.tasks.is_empty() {
        return Err(Error::Structure("no tasks".into()));
    }
    let per_task: Vec<f64> = stl
        .tasks
        .iter()
        .map(|r| {
            let m = method
                .tasks
                .iter()
                .find(|m| m.name == r.name)
                .ok_or_else(|| Error::Structure(format!("method table lacks task {:?}", r.name)))?;
            delta_p_task(r, m)
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..stl.tasks.len()).collect();
    order.sort_by(|&a, &b| stl.tasks[a].name.cmp(&stl.tasks[b].name));
    let overall = order.iter().map(|&i| per_task[i]).sum::<f64>() / per_task.len() as f64;
    Ok(DeltaPResult { per_task, overall })
}

/// Mean and sample (n − 1) standard deviation; a single value has stddev 0.
pub fn summarize_runs(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Argument("cannot summarize zero runs".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}
