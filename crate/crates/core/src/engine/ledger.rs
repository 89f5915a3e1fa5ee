use serde::{Deserialize, Serialize};

use crate::data::TaskId;
use crate::merging::Method;
use crate::param::words_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Build,
    Unlearn,
}

/// Compute charged by one build or deletion. `steps_per_finetune` is the
/// step count of one task-finetune under that event's configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub phase: Phase,
    pub task: Option<TaskId>,
    pub task_finetunes: u64,
    pub steps_per_finetune: u64,
}

impl LedgerEvent {
    pub fn finetune_steps(&self) -> u64 {
        self.task_finetunes * self.steps_per_finetune
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCost {
    pub task_finetunes: u64,
    pub finetune_steps: u64,
}

/// Running account of finetuning work, in task-finetunes and steps.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    events: Vec<LedgerEvent>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: Vec<LedgerEvent>) -> Self {
        Self { events }
    }

    pub fn record(&mut self, event: LedgerEvent) {
        self.events.push(event);
    }

    pub fn extend(&mut self, other: &CostLedger) {
        self.events.extend_from_slice(&other.events);
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn phase(&self, phase: Phase) -> PhaseCost {
        self.events.iter().filter(|e| e.phase == phase).fold(PhaseCost::default(), |acc, e| PhaseCost {
            task_finetunes: acc.task_finetunes + e.task_finetunes,
            finetune_steps: acc.finetune_steps + e.finetune_steps(),
        })
    }

    pub fn build(&self) -> PhaseCost {
        self.phase(Phase::Build)
    }

    pub fn unlearn(&self) -> PhaseCost {
        self.phase(Phase::Unlearn)
    }

    pub fn task_finetunes(&self) -> u64 {
        self.events.iter().map(|e| e.task_finetunes).sum()
    }

    pub fn finetune_steps(&self) -> u64 {
        self.events.iter().map(|e| e.finetune_steps()).sum()
    }
}

/// Stored 32-bit words: one model plus one bit mask per retained task for
/// mask-bearing methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageReport {
    pub model_words: u64,
    pub mask_words: u64,
    pub words: u64,
}

impl StorageReport {
    pub fn for_method(method: &Method, params: usize, tasks: usize) -> Self {
        let model_words = params as u64;
        let mask_words = if method.stores_masks() { (tasks * words_for(params)) as u64 } else { 0 };
        Self { model_words, mask_words, words: model_words + mask_words }
    }
}

/// Task-finetunes charged by deleting one task when `retained_after` tasks
/// remain.
pub fn deletion_cost(method: &Method, retained_after: usize) -> u64 {
    if method.unlearns_by_subtraction() {
        u64::from(retained_after > 0)
    } else {
        retained_after as u64
    }
}

/// Closed-form cost of deleting every task one at a time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostProjection {
    /// Task-finetunes charged by each deletion, in order.
    pub per_event: Vec<u64>,
    pub total_task_finetunes: u64,
    pub total_finetune_steps: u64,
}

impl CostProjection {
    pub fn cumulative(&self) -> Vec<u64> {
        self.per_event
            .iter()
            .scan(0u64, |acc, c| {
                *acc += c;
                Some(*acc)
            })
            .collect()
    }
}

/// Projection for one unclustered system of `tasks` tasks.
pub fn project_total_cost(tasks: usize, method: &Method, steps_per_finetune: u64) -> CostProjection {
    project_clustered_cost(&[tasks], method, steps_per_finetune)
}

/// Projection for independent clusters of the given sizes, deleting every
/// task of cluster 0 first, then cluster 1 and so on. The total does not
/// depend on the deletion order.
pub fn project_clustered_cost(cluster_sizes: &[usize], method: &Method, steps_per_finetune: u64) -> CostProjection {
    let per_event: Vec<u64> = cluster_sizes
        .iter()
        .flat_map(|&n| (0..n).rev().map(|after| deletion_cost(method, after)))
        .collect();
    let total: u64 = per_event.iter().sum();
    CostProjection { per_event, total_task_finetunes: total, total_finetune_steps: total * steps_per_finetune }
}
