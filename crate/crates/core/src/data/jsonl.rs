use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Example, TaskId, TaskSpec};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    task_id: u32,
    features: Vec<f64>,
    label: usize,
}

/// Reads JSON-lines records, grouping them by `task_id` in order of first
/// appearance. When `num_classes` is given, labels at or above it are
/// rejected with the offending line number.
pub fn load_tasks(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Vec<TaskSpec>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut groups: Vec<(u32, Vec<Example>)> = Vec::new();
    let mut index = std::collections::HashMap::new();
    let mut dim: Option<usize> = None;
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_owned(), line, message };

    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        if let Some(c) = num_classes {
            if rec.label >= c {
                return Err(parse_err(line_no, format!("label {} out of range for {c} classes", rec.label)));
            }
        }
        match dim {
            None => dim = Some(rec.features.len()),
            Some(d) if d != rec.features.len() => {
                return Err(parse_err(
                    line_no,
                    format!("expected {d} features, found {}", rec.features.len()),
                ));
            }
            _ => {}
        }
        if rec.features.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(line_no, "non-finite feature".into()));
        }
        let slot = *index.entry(rec.task_id).or_insert_with(|| {
            groups.push((rec.task_id, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(Example { features: rec.features, label: rec.label });
    }
    if groups.is_empty() {
        return Err(Error::Data { path: path.to_owned(), message: "no records".into() });
    }
    groups
        .into_iter()
        .map(|(id, examples)| TaskSpec::with_tail_split(TaskId(id), examples, 0))
        .collect()
}

/// Writes every example of every task, in task order.
pub fn save_tasks(path: impl AsRef<Path>, tasks: &[TaskSpec]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for task in tasks {
        for e in task.examples() {
            let rec = Record { task_id: task.id().0, features: e.features.clone(), label: e.label };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}
