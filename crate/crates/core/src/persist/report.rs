use std::fs::OpenOptions;
use std::path::Path;

use serde::Serialize;

use crate::engine::{ClusteredSystem, CostLedger, CostProjection, Evaluation, StorageReport};
use crate::error::Result;

/// One line of a flat report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub event_index: usize,
    /// A task id, or `all` for aggregates.
    pub task_id: String,
    pub metric: String,
    pub value: f64,
}

impl ReportRow {
    fn new(method: &str, event_index: usize, task_id: impl ToString, metric: &str, value: f64) -> Self {
        Self { method: method.into(), event_index, task_id: task_id.to_string(), metric: metric.into(), value }
    }
}

pub fn evaluation_rows(method: &str, event_index: usize, metric: &str, eval: &Evaluation) -> Vec<ReportRow> {
    let mut rows: Vec<ReportRow> = eval
        .per_task
        .iter()
        .map(|t| ReportRow::new(method, event_index, t.task, metric, t.accuracy))
        .collect();
    if let Some(a) = eval.aggregate {
        rows.push(ReportRow::new(method, event_index, "all", metric, a));
    }
    rows
}

/// One `task_finetunes` and one `finetune_steps` row per ledger event.
pub fn ledger_rows(method: &str, ledger: &CostLedger) -> Vec<ReportRow> {
    ledger
        .events()
        .iter()
        .enumerate()
        .flat_map(|(i, e)| {
            let task = e.task.map_or_else(|| "all".to_string(), |t| t.to_string());
            [
                ReportRow::new(method, i, &task, "task_finetunes", e.task_finetunes as f64),
                ReportRow::new(method, i, &task, "finetune_steps", e.finetune_steps() as f64),
            ]
        })
        .collect()
}

/// Cumulative task-finetunes after each projected deletion.
pub fn projection_rows(method: &str, projection: &CostProjection) -> Vec<ReportRow> {
    projection
        .cumulative()
        .into_iter()
        .enumerate()
        .map(|(i, c)| ReportRow::new(method, i + 1, "all", "cumulative_task_finetunes", c as f64))
        .collect()
}

/// Writes rows with a header, or appends them without one when the file
/// already exists and `append` is set.
pub fn write_csv(path: impl AsRef<Path>, rows: &[ReportRow], append: bool) -> Result<()> {
    let path = path.as_ref();
    let exists = path.exists();
    let file = OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(!(append && exists)).from_writer(file);
    for row in rows {
        w.serialize(row).map_err(std::io::Error::other)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub method: String,
    pub clusters: usize,
    pub retained: usize,
    pub unlearned: usize,
    pub build_task_finetunes: u64,
    pub build_finetune_steps: u64,
    pub unlearn_task_finetunes: u64,
    pub unlearn_finetune_steps: u64,
    pub storage: StorageReport,
    pub held_in_accuracy: Option<f64>,
    pub held_out_accuracy: Option<f64>,
    pub zeroshot_accuracy: Option<f64>,
}

impl Summary {
    pub fn of(system: &ClusteredSystem) -> Self {
        let ledger = system.ledger();
        let (build, unlearn) = (ledger.build(), ledger.unlearn());
        let retained = system.systems().iter().map(|s| s.retained().len()).sum();
        let unlearned = system.systems().iter().map(|s| s.unlearned().count()).sum();
        Self {
            method: system.systems()[0].method().to_string(),
            clusters: system.systems().len(),
            retained,
            unlearned,
            build_task_finetunes: build.task_finetunes,
            build_finetune_steps: build.finetune_steps,
            unlearn_task_finetunes: unlearn.task_finetunes,
            unlearn_finetune_steps: unlearn.finetune_steps,
            storage: system.storage(),
            held_in_accuracy: None,
            held_out_accuracy: None,
            zeroshot_accuracy: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}
