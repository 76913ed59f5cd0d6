//! Published result tables shipped as fixtures, and the Δp recomputation
//! check over them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mtl_balance::metrics::{delta_p, Metric, MetricTable, TaskMetrics};
use serde::Deserialize;

/// Largest accepted difference between a recomputed and a printed Δp.
pub const DELTA_P_TOLERANCE: f64 = 0.05;

pub const EMBEDDED: [(&str, &str); 2] = [
    (
        "cityscapes.toml",
        include_str!("../fixtures/cityscapes.toml"),
    ),
    ("nyuv2.toml", include_str!("../fixtures/nyuv2.toml")),
];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub task: String,
    pub name: String,
    pub higher_is_better: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Row {
    pub method: String,
    pub delta_p: f64,
    #[serde(flatten)]
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultTable {
    pub dataset: String,
    pub reference: String,
    pub metrics: Vec<MetricSpec>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowCheck {
    pub dataset: String,
    pub method: String,
    pub printed: f64,
    pub recomputed: f64,
}

impl RowCheck {
    pub fn passed(&self) -> bool {
        (self.recomputed - self.printed).abs() <= DELTA_P_TOLERANCE
    }

    /// `dataset/method/delta_p`, the cell the check is about.
    pub fn cell(&self) -> String {
        format!("{}/{}/delta_p", self.dataset, self.method)
    }
}

pub fn parse_table(text: &str) -> Result<ResultTable, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

/// Loads the fixtures from `dir`, or the embedded copies when `dir` is None.
pub fn load_tables(dir: Option<&Path>) -> Result<Vec<ResultTable>, String> {
    EMBEDDED
        .iter()
        .map(|(file, embedded)| {
            let text = match dir {
                Some(d) => {
                    let p = d.join(file);
                    fs::read_to_string(&p).map_err(|e| format!("fixture {}: {e}", p.display()))?
                }
                None => embedded.to_string(),
            };
            parse_table(&text).map_err(|e| format!("fixture {file}: {e}"))
        })
        .collect()
}

impl ResultTable {
    fn row(&self, method: &str) -> Result<&Row, String> {
        self.rows
            .iter()
            .find(|r| r.method == method)
            .ok_or_else(|| format!("{}: no row {method:?}", self.dataset))
    }

    /// A row's values grouped by task, in metric-spec order.
    pub fn metric_table(&self, method: &str) -> Result<MetricTable, String> {
        let row = self.row(method)?;
        let mut tasks: Vec<TaskMetrics> = Vec::new();
        for spec in &self.metrics {
            let value = *row.values.get(&spec.name).ok_or_else(|| {
                format!("{}/{}/{}: missing value", self.dataset, method, spec.name)
            })?;
            let metric = Metric::new(spec.name.clone(), value, spec.higher_is_better);
            match tasks.iter_mut().find(|t| t.name == spec.task) {
                Some(t) => t.metrics.push(metric),
                None => tasks.push(TaskMetrics::new(spec.task.clone(), vec![metric])),
            }
        }
        if let Some(extra) = row
            .values
            .keys()
            .find(|k| !self.metrics.iter().any(|m| &&m.name == k))
        {
            return Err(format!(
                "{}/{}/{extra}: unknown metric",
                self.dataset, method
            ));
        }
        Ok(MetricTable { tasks })
    }

    /// Recomputes Δp of every row against the reference row.
    pub fn check_rows(&self) -> Result<Vec<RowCheck>, String> {
        let stl = self.metric_table(&self.reference)?;
        self.rows
            .iter()
            .map(|row| {
                let table = self.metric_table(&row.method)?;
                let r = delta_p(&stl, &table)
                    .map_err(|e| format!("{}/{}: {e}", self.dataset, row.method))?;
                Ok(RowCheck {
                    dataset: self.dataset.clone(),
                    method: row.method.clone(),
                    printed: row.delta_p,
                    recomputed: r.overall,
                })
            })
            .collect()
    }
}
