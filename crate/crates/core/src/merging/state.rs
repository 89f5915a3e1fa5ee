use std::collections::{BTreeMap, BTreeSet};

use crate::data::TaskId;
use crate::error::{Error, Result};
use crate::param::{dequantize, BitMask, FxpVector, ParamVector, DEFAULT_SCALE_BITS};
use crate::trainer::TaskVector;

use super::Method;

/// Denominator used when localizing a masked sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divisor {
    /// Current number of retained tasks.
    #[default]
    Retained,
    /// Per entry, the number of retained masks covering it.
    Overlap,
}

/// The stored merged model.
///
/// For additive methods (`sift_masks`, `ft_merge`, `tall_masks`) the
/// accumulator is the exact fixed-point sum of the retained tasks' quantized
/// vectors. For `emr` it holds the unified vector, for `ties` the merged
/// delta, and for `central` the trained delta from the base model.
///
/// `scales` carries per-task localization scalars: the rescale `alpha` for
/// TALL and the l1 ratio for EMR.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedState {
    pub base_seed: u64,
    pub sign_seed: u64,
    pub method: Method,
    accumulator: FxpVector,
    retained: BTreeSet<TaskId>,
    masks: BTreeMap<TaskId, BitMask>,
    scales: BTreeMap<TaskId, f64>,
}

impl MergedState {
    pub fn empty(len: usize, method: Method) -> Self {
        Self {
            base_seed: 0,
            sign_seed: 0,
            method,
            accumulator: FxpVector::zeros(len, DEFAULT_SCALE_BITS),
            retained: BTreeSet::new(),
            masks: BTreeMap::new(),
            scales: BTreeMap::new(),
        }
    }

    /// Reassembles a state from stored parts, checking its invariants.
    pub fn from_parts(
        method: Method,
        base_seed: u64,
        sign_seed: u64,
        accumulator: FxpVector,
        retained: BTreeSet<TaskId>,
        masks: BTreeMap<TaskId, BitMask>,
        scales: BTreeMap<TaskId, f64>,
    ) -> Result<Self> {
        let len = accumulator.len();
        if method.stores_masks() && !masks.keys().eq(retained.iter()) {
            return Err(Error::InvalidParameter("mask keys must equal the retained set".into()));
        }
        if !method.stores_masks() && !masks.is_empty() {
            return Err(Error::InvalidParameter(format!("{method} stores no masks")));
        }
        if let Some(m) = masks.values().find(|m| m.len() != len) {
            return Err(Error::LengthMismatch { expected: len, actual: m.len() });
        }
        if scales.keys().any(|k| !retained.contains(k)) {
            return Err(Error::InvalidParameter("scale for a task that is not retained".into()));
        }
        Ok(Self { base_seed, sign_seed, method, accumulator, retained, masks, scales })
    }

    pub fn len(&self) -> usize {
        self.accumulator.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accumulator.is_empty()
    }

    pub fn accumulator(&self) -> &FxpVector {
        &self.accumulator
    }

    pub fn retained(&self) -> &BTreeSet<TaskId> {
        &self.retained
    }

    pub fn masks(&self) -> &BTreeMap<TaskId, BitMask> {
        &self.masks
    }

    pub fn mask(&self, id: TaskId) -> Option<&BitMask> {
        self.masks.get(&id)
    }

    pub fn scales(&self) -> &BTreeMap<TaskId, f64> {
        &self.scales
    }

    pub fn set_scale(&mut self, id: TaskId, scale: f64) -> Result<()> {
        if !self.retained.contains(&id) {
            return Err(Error::UnknownTask(id));
        }
        self.scales.insert(id, scale);
        Ok(())
    }

    pub fn set_mask(&mut self, id: TaskId, mask: BitMask) -> Result<()> {
        if !self.retained.contains(&id) {
            return Err(Error::UnknownTask(id));
        }
        if mask.len() != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), actual: mask.len() });
        }
        self.masks.insert(id, mask);
        Ok(())
    }

    /// Adds one quantized task vector to the sum.
    pub fn insert(&mut self, id: TaskId, q: &FxpVector, mask: Option<BitMask>) -> Result<()> {
        if self.retained.contains(&id) {
            return Err(Error::DuplicateTask(id));
        }
        if let Some(m) = &mask {
            if m.len() != self.len() {
                return Err(Error::LengthMismatch { expected: self.len(), actual: m.len() });
            }
        }
        self.accumulator.add_assign(q)?;
        self.retained.insert(id);
        if let Some(m) = mask {
            self.masks.insert(id, m);
        }
        Ok(())
    }

    /// Subtracts a task's quantized vector and forgets its mask and scale.
    pub fn remove(&mut self, id: TaskId, q: &FxpVector) -> Result<()> {
        if !self.retained.contains(&id) {
            return Err(Error::UnknownTask(id));
        }
        if !self.method.is_additive() {
            return Err(Error::Unsupported { op: "unmerge", method: self.method.to_string() });
        }
        self.accumulator.sub_assign(q)?;
        self.retained.remove(&id);
        self.masks.remove(&id);
        self.scales.remove(&id);
        Ok(())
    }

    /// Corrupts one accumulator word. Only for fault-injection tests.
    #[doc(hidden)]
    pub fn accumulator_mut(&mut self) -> &mut FxpVector {
        &mut self.accumulator
    }

    /// Removes `tau_u` from the merge.
    pub fn unmerge(&self, tau_u: &TaskVector) -> Result<MergedState> {
        let q = FxpVector::quantize(&tau_u.delta, self.accumulator.scale_bits())?;
        let mut next = self.clone();
        next.remove(tau_u.source_task, &q)?;
        Ok(next)
    }

    fn scaled_delta(&self, mask: Option<&BitMask>, factor: f64, divisor: Option<&[u32]>) -> Vec<f64> {
        let bits = self.accumulator.scale_bits();
        self.accumulator
            .values()
            .iter()
            .enumerate()
            .map(|(i, &q)| {
                if mask.is_some_and(|m| !m.get(i)) || q == 0 {
                    return 0.0;
                }
                let d = divisor.map_or(1.0, |c| c[i].max(1) as f64);
                dequantize(q, bits) * factor / d
            })
            .collect()
    }

    fn overlap_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.len()];
        for m in self.masks.values() {
            for i in m.iter_ones() {
                counts[i] += 1;
            }
        }
        counts
    }

    /// `base + (m_t ⊙ acc) / |retained|` for a sign-masked task.
    pub fn localize_sift(&self, base: &ParamVector, id: TaskId) -> Result<ParamVector> {
        self.localize_sift_with(base, id, Divisor::Retained)
    }

    pub fn localize_sift_with(&self, base: &ParamVector, id: TaskId, divisor: Divisor) -> Result<ParamVector> {
        if self.method != Method::SiftMasks {
            return Err(Error::Unsupported { op: "localize_sift", method: self.method.to_string() });
        }
        self.masked_average(base, id, 1.0, divisor)
    }

    fn masked_average(&self, base: &ParamVector, id: TaskId, alpha: f64, divisor: Divisor) -> Result<ParamVector> {
        if !self.retained.contains(&id) {
            return Err(Error::UnknownTask(id));
        }
        let mask = self.masks.get(&id).ok_or(Error::MissingMask(id))?;
        let delta = match divisor {
            Divisor::Retained => self.scaled_delta(Some(mask), alpha / self.retained.len() as f64, None),
            Divisor::Overlap => self.scaled_delta(Some(mask), alpha, Some(&self.overlap_counts())),
        };
        base.offset_by(&delta)
    }

    /// Model served without any mask. For additive methods this is the
    /// average of the retained models; with nothing retained it is `base`.
    pub fn serve_merged(&self, base: &ParamVector) -> Result<ParamVector> {
        base.ensure_len(self.len())?;
        if self.method.is_additive() {
            if self.retained.is_empty() {
                return Ok(base.clone());
            }
            base.offset_by(&self.scaled_delta(None, 1.0 / self.retained.len() as f64, None))
        } else {
            base.offset_by(&self.scaled_delta(None, 1.0, None))
        }
    }

    /// Model used for a retained task under this state's method.
    pub fn localize(&self, base: &ParamVector, id: TaskId, divisor: Divisor) -> Result<ParamVector> {
        if !self.retained.contains(&id) {
            return Err(Error::UnknownTask(id));
        }
        match &self.method {
            Method::SiftMasks => self.masked_average(base, id, 1.0, divisor),
            Method::TallMasks { .. } => {
                let alpha = self.scales.get(&id).copied().unwrap_or(1.0);
                self.masked_average(base, id, alpha, divisor)
            }
            Method::Emr => {
                let mask = self.masks.get(&id).ok_or(Error::MissingMask(id))?;
                let scale = self.scales.get(&id).copied().unwrap_or(1.0);
                base.offset_by(&self.scaled_delta(Some(mask), scale, None))
            }
            Method::FtMerge | Method::Ties { .. } | Method::Central { .. } => self.serve_merged(base),
        }
    }
}

/// Merges task vectors under `ft_merge`, quantizing each one.
pub fn merge(task_vectors: &[TaskVector]) -> Result<MergedState> {
    merge_as(task_vectors, Method::FtMerge)
}

/// Merges task vectors, attaching no masks.
pub fn merge_as(task_vectors: &[TaskVector], method: Method) -> Result<MergedState> {
    let len = task_vectors.first().map_or(0, |t| t.len());
    let mut state = MergedState::empty(len, method);
    for tv in task_vectors {
        if tv.len() != len {
            return Err(Error::LengthMismatch { expected: len, actual: tv.len() });
        }
        let q = FxpVector::quantize(&tv.delta, DEFAULT_SCALE_BITS)?;
        state.insert(tv.source_task, &q, None)?;
    }
    Ok(state)
}

/// Merges sign-fixed task vectors with their masks.
pub fn merge_sift(items: &[(TaskVector, BitMask)]) -> Result<MergedState> {
    let len = items.first().map_or(0, |(t, _)| t.len());
    let mut state = MergedState::empty(len, Method::SiftMasks);
    for (tv, mask) in items {
        if tv.len() != len {
            return Err(Error::LengthMismatch { expected: len, actual: tv.len() });
        }
        let q = FxpVector::quantize(&tv.delta, DEFAULT_SCALE_BITS)?;
        state.insert(tv.source_task, &q, Some(mask.clone()))?;
    }
    Ok(state)
}
