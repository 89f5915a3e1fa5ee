//! Deterministic finetuning: plain (FT) and sign-fixed (SIFT).

use serde::{Deserialize, Serialize};

use crate::data::{Example, TaskId, TaskSpec};
use crate::error::{Error, Result};
use crate::param::{mix, BitMask, ParamVector, PrngStream, SignVector};

use super::adam::{AdamHyper, AdamState};
use super::model::{loss_and_grad_f64, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl TrainConfig {
    pub fn new(steps: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        let AdamHyper { beta1, beta2, epsilon } = AdamHyper::default();
        Self { steps, batch_size, learning_rate, seed, beta1, beta2, epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::InvalidParameter("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper { beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }

    /// Seed of the batch stream used when finetuning `task`.
    pub fn task_seed(&self, task: TaskId) -> u64 {
        mix(self.seed, task.0 as u64)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(20, 32, 0.05, 0)
    }
}

/// `delta = M_t - M_0` for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    pub delta: ParamVector,
    pub source_task: TaskId,
    pub steps_used: usize,
}

impl TaskVector {
    pub fn new(delta: ParamVector, source_task: TaskId) -> Self {
        Self { delta, source_task, steps_used: 0 }
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }
}

/// Zeroes every entry whose sign disagrees with `signs`.
pub fn project_sign(tau: &ParamVector, signs: &SignVector) -> Result<ParamVector> {
    let mut out = tau.clone();
    project_in_place(&mut out, signs)?;
    Ok(out)
}

fn project_in_place(tau: &mut ParamVector, signs: &SignVector) -> Result<()> {
    tau.ensure_len(signs.len())?;
    for (i, t) in tau.as_mut_slice().iter_mut().enumerate() {
        if *t * signs.sign(i) < 0.0 {
            *t = 0.0;
        }
    }
    Ok(())
}

/// `1{tau * v > 0}`; zero entries are excluded.
pub fn sign_mask(tau: &ParamVector, signs: &SignVector) -> Result<BitMask> {
    tau.ensure_len(signs.len())?;
    Ok(BitMask::from_fn(tau.len(), |i| tau[i] * signs.sign(i) > 0.0))
}

/// Runs `steps` Adam steps on `tau` starting from zero. Batches are drawn
/// uniformly with replacement from `pool` unless the pool fits in one batch,
/// in which case every step uses the full pool in order.
fn optimize(
    pool: &[&Example],
    base: &ParamVector,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    steps: usize,
    mut stream: PrngStream,
    signs: Option<&SignVector>,
) -> Result<ParamVector> {
    let m = spec.param_count();
    base.ensure_len(m)?;
    if let Some(v) = signs {
        if v.len() != m {
            return Err(Error::LengthMismatch { expected: m, actual: v.len() });
        }
    }
    let base64 = base.to_f64();
    let mut tau = ParamVector::zeros(m);
    let mut adam = AdamState::new(m);
    let mut model = vec![0.0; m];
    let mut batch: Vec<&Example> = Vec::with_capacity(cfg.batch_size.min(pool.len()));
    for _ in 0..steps {
        batch.clear();
        if pool.len() <= cfg.batch_size {
            batch.extend_from_slice(pool);
        } else {
            for _ in 0..cfg.batch_size {
                batch.push(pool[stream.next_below(pool.len() as u64) as usize]);
            }
        }
        for ((w, b), t) in model.iter_mut().zip(&base64).zip(tau.iter()) {
            *w = b + *t as f64;
        }
        let (_, grad) = loss_and_grad_f64(&model, spec, &batch)?;
        adam.step(&mut tau, &grad, cfg.learning_rate, cfg.adam())?;
        if let Some(v) = signs {
            // Only the parameters are projected; Adam moments keep their values.
            project_in_place(&mut tau, v)?;
        }
    }
    if let Some(index) = tau.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(tau)
}

fn task_pool(task: &TaskSpec) -> Result<Vec<&Example>> {
    let pool: Vec<&Example> = task.train().collect();
    if pool.is_empty() {
        return Err(Error::EmptyTask(task.id()));
    }
    Ok(pool)
}

/// Plain finetuning of `base` on one task.
pub fn ft_finetune(task: &TaskSpec, base: &ParamVector, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TaskVector> {
    cfg.validate()?;
    let pool = task_pool(task)?;
    let stream = PrngStream::new(cfg.task_seed(task.id()));
    let delta = optimize(&pool, base, spec, cfg, cfg.steps, stream, None)?;
    Ok(TaskVector { delta, source_task: task.id(), steps_used: cfg.steps })
}

/// Sign-fixed finetuning: after each Adam step every entry of the task
/// vector that disagrees in sign with `signs` is clipped to zero. Returns the
/// task vector and its mask `1{tau * v > 0}`, which equals its support.
pub fn sift_finetune(
    task: &TaskSpec,
    base: &ParamVector,
    signs: &SignVector,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<(TaskVector, BitMask)> {
    cfg.validate()?;
    let pool = task_pool(task)?;
    let stream = PrngStream::new(cfg.task_seed(task.id()));
    let delta = optimize(&pool, base, spec, cfg, cfg.steps, stream, Some(signs))?;
    let mask = sign_mask(&delta, signs)?;
    Ok((TaskVector { delta, source_task: task.id(), steps_used: cfg.steps }, mask))
}

/// Trains one model on the pooled training data of `tasks`, visited in
/// ascending task id and then example order, for `steps` steps. Returns the
/// delta from `base`.
pub fn central_finetune(
    tasks: &[&TaskSpec],
    base: &ParamVector,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    steps: usize,
) -> Result<ParamVector> {
    cfg.validate()?;
    let mut ordered: Vec<&TaskSpec> = tasks.to_vec();
    ordered.sort_by_key(|t| t.id());
    let pool: Vec<&Example> = ordered.iter().flat_map(|t| t.train()).collect();
    if pool.is_empty() {
        return Err(Error::NoTasks);
    }
    let stream = PrngStream::new(cfg.seed).named("central");
    optimize(&pool, base, spec, cfg, steps, stream, None)
}
