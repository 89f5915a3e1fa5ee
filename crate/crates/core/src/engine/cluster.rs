use std::collections::BTreeMap;

use crate::data::{TaskId, TaskSpec};
use crate::error::{Error, Result};
use crate::param::PrngStream;

use super::ledger::{CostLedger, StorageReport};
use super::system::{EngineConfig, EvalMode, Evaluation, System, UnlearnOutcome};

/// Shuffles `ids` and deals them round-robin into `clusters` groups, whose
/// sizes then differ by at most one. Each group is returned sorted.
pub fn cluster_random(ids: &[TaskId], clusters: usize, seed: u64) -> Result<Vec<Vec<TaskId>>> {
    if clusters == 0 || clusters > ids.len() {
        return Err(Error::InvalidParameter(format!(
            "cluster count {clusters} must lie in [1, {}]",
            ids.len()
        )));
    }
    let mut order = ids.to_vec();
    order.sort();
    PrngStream::new(seed).shuffle(&mut order);
    let mut out = vec![Vec::new(); clusters];
    for (i, id) in order.into_iter().enumerate() {
        out[i % clusters].push(id);
    }
    out.iter_mut().for_each(|c| c.sort());
    Ok(out)
}

/// Independent systems over a random partition of the tasks. Deleting a task
/// only touches its own cluster.
#[derive(Debug, Clone)]
pub struct ClusteredSystem {
    assignment: BTreeMap<TaskId, usize>,
    systems: Vec<System>,
}

impl ClusteredSystem {
    pub fn build(config: EngineConfig, tasks: &[TaskSpec], clusters: usize, seed: u64) -> Result<Self> {
        let ids: Vec<TaskId> = tasks.iter().map(|t| t.id()).collect();
        let groups = cluster_random(&ids, clusters, seed)?;
        Self::from_groups(config, tasks, &groups)
    }

    pub fn from_groups(config: EngineConfig, tasks: &[TaskSpec], groups: &[Vec<TaskId>]) -> Result<Self> {
        let mut assignment = BTreeMap::new();
        let mut systems = Vec::with_capacity(groups.len());
        for (k, group) in groups.iter().enumerate() {
            let members: Vec<TaskSpec> = group
                .iter()
                .map(|&id| tasks.iter().find(|t| t.id() == id).cloned().ok_or(Error::UnknownTask(id)))
                .collect::<Result<_>>()?;
            for &id in group {
                if assignment.insert(id, k).is_some() {
                    return Err(Error::DuplicateTask(id));
                }
            }
            systems.push(System::build(config.clone(), &members)?);
        }
        Ok(Self { assignment, systems })
    }

    /// Reassembles from per-cluster systems; the assignment is read from
    /// their registries.
    pub fn from_systems(systems: Vec<System>) -> Result<Self> {
        let mut assignment = BTreeMap::new();
        for (k, s) in systems.iter().enumerate() {
            for &id in s.registry().keys() {
                if assignment.insert(id, k).is_some() {
                    return Err(Error::DuplicateTask(id));
                }
            }
        }
        Ok(Self { assignment, systems })
    }

    pub fn assignment(&self) -> &BTreeMap<TaskId, usize> {
        &self.assignment
    }

    pub fn systems(&self) -> &[System] {
        &self.systems
    }

    pub fn cluster_of(&self, id: TaskId) -> Result<usize> {
        self.assignment.get(&id).copied().ok_or(Error::UnknownTask(id))
    }

    pub fn unlearn(&mut self, u: TaskId, tasks: &[TaskSpec]) -> Result<UnlearnOutcome> {
        let k = self.cluster_of(u)?;
        self.systems[k].unlearn(u, tasks)
    }

    pub fn unlearn_audited(&mut self, u: TaskId, tasks: &[TaskSpec]) -> Result<UnlearnOutcome> {
        let k = self.cluster_of(u)?;
        self.systems[k].unlearn_audited(u, tasks)
    }

    pub fn evaluate(&self, tasks: &[TaskSpec], mode: EvalMode) -> Result<Evaluation> {
        let mut per_task = Vec::new();
        for s in &self.systems {
            per_task.extend(s.evaluate_tasks(tasks, mode)?);
        }
        Ok(Evaluation::from_tasks(per_task))
    }

    /// Concatenation of every cluster's ledger, cluster by cluster.
    pub fn ledger(&self) -> CostLedger {
        let mut out = CostLedger::new();
        self.systems.iter().for_each(|s| out.extend(s.ledger()));
        out
    }

    pub fn storage(&self) -> StorageReport {
        self.systems.iter().map(System::storage).fold(
            StorageReport { model_words: 0, mask_words: 0, words: 0 },
            |a, b| StorageReport {
                model_words: a.model_words + b.model_words,
                mask_words: a.mask_words + b.mask_words,
                words: a.words + b.words,
            },
        )
    }
}
