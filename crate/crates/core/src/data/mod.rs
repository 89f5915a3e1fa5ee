//! Task-partitioned datasets.

mod jsonl;
mod synth;

pub use jsonl::{load_tasks, save_tasks};
pub use synth::{synth_generate, GeneratorConfig, HeterogeneityRegime, REGION_GAP};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Number of held-out examples for a task of `n` examples: the last
/// `ceil(n / 5)`, but always leaving one training example.
pub fn eval_count(n: usize) -> usize {
    n.div_ceil(5).min(n.saturating_sub(1))
}

/// One task: its examples, which of them are held out, and the seed its data
/// was generated from (0 for loaded data).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    id: TaskId,
    examples: Vec<Example>,
    eval_split: Vec<usize>,
    train_split: Vec<usize>,
    seed: u64,
}

impl TaskSpec {
    /// Builds a task whose last `eval_count(n)` examples form the eval split.
    pub fn with_tail_split(id: TaskId, examples: Vec<Example>, seed: u64) -> Result<Self> {
        let n = examples.len();
        let eval = (n - eval_count(n)..n).collect();
        Self::new(id, examples, eval, seed)
    }

    pub fn new(id: TaskId, examples: Vec<Example>, eval_split: Vec<usize>, seed: u64) -> Result<Self> {
        let n = examples.len();
        let mut is_eval = vec![false; n];
        for &i in &eval_split {
            if i >= n || is_eval[i] {
                return Err(Error::InvalidParameter(format!("task {id}: bad eval index {i}")));
            }
            is_eval[i] = true;
        }
        let train_split: Vec<usize> = (0..n).filter(|&i| !is_eval[i]).collect();
        if train_split.is_empty() {
            return Err(Error::EmptyTask(id));
        }
        if let Some(first) = examples.first() {
            let d = first.features.len();
            if let Some(bad) = examples.iter().find(|e| e.features.len() != d) {
                return Err(Error::DimensionMismatch { expected: d, actual: bad.features.len() });
            }
        }
        Ok(Self { id, examples, eval_split, train_split, seed })
    }

    pub fn id(&self) -> TaskId {
        self.id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn input_dim(&self) -> usize {
        self.examples[0].features.len()
    }

    pub fn eval_split(&self) -> &[usize] {
        &self.eval_split
    }

    pub fn train_split(&self) -> &[usize] {
        &self.train_split
    }

    pub fn train(&self) -> impl Iterator<Item = &Example> + '_ {
        self.train_split.iter().map(|&i| &self.examples[i])
    }

    pub fn eval(&self) -> impl Iterator<Item = &Example> + '_ {
        self.eval_split.iter().map(|&i| &self.examples[i])
    }

    pub fn max_label(&self) -> usize {
        self.examples.iter().map(|e| e.label).max().unwrap_or(0)
    }
}

/// Checks that tasks have distinct ids, a common feature dimension and
/// labels below `num_classes`.
pub fn validate_tasks(tasks: &[TaskSpec], input_dim: usize, num_classes: usize) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::NoTasks);
    }
    let mut seen = std::collections::BTreeSet::new();
    for task in tasks {
        if !seen.insert(task.id()) {
            return Err(Error::DuplicateTask(task.id()));
        }
        if task.input_dim() != input_dim {
            return Err(Error::DimensionMismatch { expected: input_dim, actual: task.input_dim() });
        }
        if task.max_label() >= num_classes {
            return Err(Error::LabelOutOfRange { label: task.max_label(), num_classes });
        }
    }
    Ok(())
}
