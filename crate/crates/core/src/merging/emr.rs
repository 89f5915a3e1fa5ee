use std::collections::BTreeMap;

use crate::data::TaskId;
use crate::error::{Error, Result};
use crate::param::{BitMask, ParamVector};
use crate::trainer::TaskVector;

/// Output of [`emr_build`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmrModel {
    pub unified: Vec<f64>,
    pub masks: BTreeMap<TaskId, BitMask>,
    pub scales: BTreeMap<TaskId, f64>,
}

impl EmrModel {
    /// `scale_t * (mask_t ⊙ unified)`.
    pub fn localized_delta(&self, id: TaskId) -> Result<Vec<f64>> {
        let mask = self.masks.get(&id).ok_or(Error::MissingMask(id))?;
        let scale = self.scales[&id];
        Ok(self.unified.iter().enumerate().map(|(i, &u)| if mask.get(i) { scale * u } else { 0.0 }).collect())
    }

    pub fn localize(&self, base: &ParamVector, id: TaskId) -> Result<ParamVector> {
        base.offset_by(&self.localized_delta(id)?)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Elect a sign per entry from the sum of task vectors, keep the largest
/// magnitude that agrees with it, then give each task the entries where it
/// agrees with the unified vector, rescaled to its own l1 norm.
///
/// An entry whose task values sum to exactly zero gets sign 0 and is dropped
/// from every mask.
pub fn emr_build(task_vectors: &[TaskVector]) -> Result<EmrModel> {
    let first = task_vectors.first().ok_or(Error::NoTasks)?;
    let m = first.len();
    for tv in task_vectors {
        if tv.len() != m {
            return Err(Error::LengthMismatch { expected: m, actual: tv.len() });
        }
    }
    let unified: Vec<f64> = (0..m)
        .map(|j| {
            let elected = sign(task_vectors.iter().map(|t| t.delta[j] as f64).sum());
            if elected == 0.0 {
                return 0.0;
            }
            let peak = task_vectors
                .iter()
                .map(|t| t.delta[j] as f64)
                .filter(|&x| sign(x) == elected)
                .fold(0.0, |acc: f64, x| acc.max(x.abs()));
            elected * peak
        })
        .collect();

    let mut masks = BTreeMap::new();
    let mut scales = BTreeMap::new();
    for tv in task_vectors {
        let id = tv.source_task;
        if masks.contains_key(&id) {
            return Err(Error::DuplicateTask(id));
        }
        let mask = BitMask::from_fn(m, |j| tv.delta[j] as f64 * unified[j] > 0.0);
        let own: f64 = tv.delta.iter().map(|x| (*x as f64).abs()).sum();
        let masked: f64 = mask.iter_ones().map(|j| unified[j].abs()).sum();
        let scale = if masked > 0.0 { own / masked } else { 1.0 };
        masks.insert(id, mask);
        scales.insert(id, scale);
    }
    Ok(EmrModel { unified, masks, scales })
}
