use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::data::{validate_tasks, Example, TaskId, TaskSpec};
use crate::error::{Error, Result};
use crate::merging::{emr_build, tall_tune, ties_merge_f64, Divisor, MergedState, Method};
use crate::param::{BitMask, FxpVector, ParamVector, SignVector, DEFAULT_SCALE_BITS};
use crate::trainer::{
    accuracy, central_finetune, ft_finetune, init_params, sift_finetune, ModelSpec, TaskVector, TrainConfig,
};

use super::ledger::{deletion_cost, CostLedger, LedgerEvent, Phase, StorageReport};

/// Everything needed to build, and later replay, a merged system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub method: Method,
    pub base_seed: u64,
    pub sign_seed: u64,
    pub divisor: Divisor,
    /// Keep task vectors in memory so rebuilding methods can skip retraining.
    /// Never persisted.
    pub cache_task_vectors: bool,
}

impl EngineConfig {
    pub fn new(model: ModelSpec, train: TrainConfig, method: Method) -> Self {
        Self {
            model,
            train,
            method,
            base_seed: 0,
            sign_seed: 1,
            divisor: Divisor::Retained,
            cache_task_vectors: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.method.validate()
    }

    /// Steps of one task-finetune under this configuration.
    pub fn steps_per_finetune(&self) -> u64 {
        match self.method {
            Method::Central { steps_per_task } => steps_per_task as u64,
            _ => self.train.steps as u64,
        }
    }
}

pub type Digest = [u8; 32];

/// SHA-256 of the little-endian words of a quantized task vector.
pub fn digest(q: &FxpVector) -> Digest {
    let mut h = Sha256::new();
    for v in q.values() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub replay_seed: u64,
    /// Digest of the build-time quantized task vector; absent for `central`.
    pub digest: Option<Digest>,
    pub unlearned: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactnessReport {
    pub task: Option<TaskId>,
    /// Every replayed task vector matched its build-time digest.
    pub replay_matches: bool,
    /// The state equals a fresh build on the retained set. `None` when the
    /// comparison was not run.
    pub state_matches_oracle: Option<bool>,
}

impl ExactnessReport {
    pub fn is_exact(&self) -> bool {
        self.replay_matches && self.state_matches_oracle == Some(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    HeldIn,
    HeldOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: TaskId,
    pub retained: bool,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_task: Vec<TaskAccuracy>,
    /// Unweighted mean over tasks; `None` when no task was evaluated.
    pub aggregate: Option<f64>,
}

impl Evaluation {
    pub fn from_tasks(mut per_task: Vec<TaskAccuracy>) -> Self {
        per_task.sort_by_key(|t| t.task);
        let aggregate = if per_task.is_empty() {
            None
        } else {
            Some(per_task.iter().map(|t| t.accuracy).sum::<f64>() / per_task.len() as f64)
        };
        Self { per_task, aggregate }
    }
}

/// Result of one deletion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnlearnOutcome {
    pub report: ExactnessReport,
    pub cost: LedgerEvent,
}

type Trained = (TaskVector, Option<BitMask>);

/// A merged multi-task system that supports exact deletion of tasks.
///
/// The system stores only the merged state, per-task masks and replay
/// metadata. Task data is passed in whenever training is needed.
#[derive(Debug, Clone)]
pub struct System {
    config: EngineConfig,
    base: ParamVector,
    signs: Option<SignVector>,
    state: MergedState,
    registry: BTreeMap<TaskId, RegistryEntry>,
    ledger: CostLedger,
    cache: BTreeMap<TaskId, TaskVector>,
}

fn find(tasks: &[TaskSpec], id: TaskId) -> Result<&TaskSpec> {
    tasks.iter().find(|t| t.id() == id).ok_or(Error::UnknownTask(id))
}

impl System {
    pub fn build(config: EngineConfig, tasks: &[TaskSpec]) -> Result<Self> {
        config.validate()?;
        if tasks.is_empty() {
            return Err(Error::NoTasks);
        }
        validate_tasks(tasks, config.model.input_dim, config.model.num_classes)?;
        let mut ids = BTreeSet::new();
        for t in tasks {
            if !ids.insert(t.id()) {
                return Err(Error::DuplicateTask(t.id()));
            }
        }
        let m = config.model.param_count();
        let base = init_params(&config.model, config.base_seed);
        let signs = (config.method == Method::SiftMasks).then(|| SignVector::generate(config.sign_seed, m));
        let mut system = Self {
            state: MergedState::empty(m, config.method.clone()),
            config,
            base,
            signs,
            registry: BTreeMap::new(),
            ledger: CostLedger::new(),
            cache: BTreeMap::new(),
        };
        let mut ordered: Vec<&TaskSpec> = tasks.iter().collect();
        ordered.sort_by_key(|t| t.id());

        let mut digests = BTreeMap::new();
        let state = if system.config.method.is_central() {
            system.central_state(&ordered)?
        } else {
            let trained = system.train_many(&ordered)?;
            for (tv, _) in &trained {
                digests.insert(tv.source_task, digest(&FxpVector::quantize(&tv.delta, DEFAULT_SCALE_BITS)?));
            }
            let state = system.assemble(&trained, &ordered)?;
            if system.config.cache_task_vectors {
                system.cache = trained.into_iter().map(|(tv, _)| (tv.source_task, tv)).collect();
            }
            state
        };
        system.state = state;
        for t in &ordered {
            system.registry.insert(
                t.id(),
                RegistryEntry {
                    replay_seed: system.config.train.task_seed(t.id()),
                    digest: digests.get(&t.id()).copied(),
                    unlearned: false,
                },
            );
        }
        system.ledger.record(LedgerEvent {
            phase: Phase::Build,
            task: None,
            task_finetunes: ordered.len() as u64,
            steps_per_finetune: system.config.steps_per_finetune(),
        });
        Ok(system)
    }

    /// Reassembles a system from persisted parts. The base model and sign
    /// vector are regenerated from their seeds.
    pub fn restore(
        config: EngineConfig,
        state: MergedState,
        registry: BTreeMap<TaskId, RegistryEntry>,
        ledger: CostLedger,
    ) -> Result<Self> {
        config.validate()?;
        let m = config.model.param_count();
        if state.len() != m {
            return Err(Error::LengthMismatch { expected: m, actual: state.len() });
        }
        if state.method != config.method || state.base_seed != config.base_seed || state.sign_seed != config.sign_seed {
            return Err(Error::InvalidParameter("merged state does not match the engine configuration".into()));
        }
        for id in state.retained() {
            match registry.get(id) {
                Some(e) if !e.unlearned => {}
                _ => return Err(Error::InvalidParameter(format!("retained task {id} missing from registry"))),
            }
        }
        if registry.iter().any(|(id, e)| !e.unlearned && !state.retained().contains(id)) {
            return Err(Error::InvalidParameter("registry lists a retained task absent from the state".into()));
        }
        let base = init_params(&config.model, config.base_seed);
        let signs = (config.method == Method::SiftMasks).then(|| SignVector::generate(config.sign_seed, m));
        Ok(Self { config, base, signs, state, registry, ledger, cache: BTreeMap::new() })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn method(&self) -> &Method {
        &self.config.method
    }

    pub fn base(&self) -> &ParamVector {
        &self.base
    }

    pub fn signs(&self) -> Option<&SignVector> {
        self.signs.as_ref()
    }

    pub fn state(&self) -> &MergedState {
        &self.state
    }

    /// Mutable state access. Only for fault-injection tests.
    #[doc(hidden)]
    pub fn state_mut(&mut self) -> &mut MergedState {
        &mut self.state
    }

    pub fn registry(&self) -> &BTreeMap<TaskId, RegistryEntry> {
        &self.registry
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn retained(&self) -> &BTreeSet<TaskId> {
        self.state.retained()
    }

    pub fn unlearned(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.registry.iter().filter(|(_, e)| e.unlearned).map(|(id, _)| *id)
    }

    pub fn storage(&self) -> StorageReport {
        let model_words = self.state.len() as u64;
        let mask_words = self.state.masks().values().map(|m| m.storage_words() as u64).sum();
        StorageReport { model_words, mask_words, words: model_words + mask_words }
    }

    fn train_one(&self, task: &TaskSpec) -> Result<Trained> {
        let (spec, cfg) = (&self.config.model, &self.config.train);
        match &self.signs {
            Some(v) => {
                let (tv, mask) = sift_finetune(task, &self.base, v, spec, cfg)?;
                Ok((tv, Some(mask)))
            }
            None => Ok((ft_finetune(task, &self.base, spec, cfg)?, None)),
        }
    }

    fn train_many(&self, tasks: &[&TaskSpec]) -> Result<Vec<Trained>> {
        tasks.par_iter().map(|t| self.train_one(t)).collect()
    }

    fn central_state(&self, tasks: &[&TaskSpec]) -> Result<MergedState> {
        let Method::Central { steps_per_task } = self.config.method else {
            unreachable!("central_state called for {}", self.config.method)
        };
        let m = self.config.model.param_count();
        let acc = if tasks.is_empty() {
            FxpVector::zeros(m, DEFAULT_SCALE_BITS)
        } else {
            let steps = steps_per_task * tasks.len();
            let delta = central_finetune(tasks, &self.base, &self.config.model, &self.config.train, steps)?;
            FxpVector::quantize(&delta, DEFAULT_SCALE_BITS)?
        };
        self.state_from(acc, tasks.iter().map(|t| t.id()).collect(), BTreeMap::new(), BTreeMap::new())
    }

    fn state_from(
        &self,
        acc: FxpVector,
        retained: BTreeSet<TaskId>,
        masks: BTreeMap<TaskId, BitMask>,
        scales: BTreeMap<TaskId, f64>,
    ) -> Result<MergedState> {
        MergedState::from_parts(
            self.config.method.clone(),
            self.config.base_seed,
            self.config.sign_seed,
            acc,
            retained,
            masks,
            scales,
        )
    }

    /// Builds the merged state for a merge-family method from trained task
    /// vectors.
    fn assemble(&self, trained: &[Trained], tasks: &[&TaskSpec]) -> Result<MergedState> {
        let m = self.config.model.param_count();
        let mut state = self.state_from(
            FxpVector::zeros(m, DEFAULT_SCALE_BITS),
            BTreeSet::new(),
            BTreeMap::new(),
            BTreeMap::new(),
        )?;
        if trained.is_empty() {
            return Ok(state);
        }
        let vectors: Vec<TaskVector> = trained.iter().map(|(tv, _)| tv.clone()).collect();
        match &self.config.method {
            Method::SiftMasks | Method::FtMerge => {
                for (tv, mask) in trained {
                    let q = FxpVector::quantize(&tv.delta, DEFAULT_SCALE_BITS)?;
                    state.insert(tv.source_task, &q, mask.clone())?;
                }
            }
            Method::TallMasks { density_grid, alpha_grid } => {
                for tv in &vectors {
                    let q = FxpVector::quantize(&tv.delta, DEFAULT_SCALE_BITS)?;
                    state.insert(tv.source_task, &q, None)?;
                }
                let merged = state.clone();
                let spec = &self.config.model;
                let tuned: Vec<_> = vectors
                    .par_iter()
                    .zip(tasks.par_iter())
                    .map(|(tv, task)| {
                        let train: Vec<&Example> = task.train().collect();
                        tall_tune(tv, &merged, density_grid, alpha_grid, &self.base, spec, &train, self.config.divisor)
                    })
                    .collect::<Result<_>>()?;
                for (tv, (mask, choice)) in vectors.iter().zip(tuned) {
                    state.set_mask(tv.source_task, mask)?;
                    state.set_scale(tv.source_task, choice.alpha)?;
                }
            }
            Method::Emr => {
                let emr = emr_build(&vectors)?;
                let acc = FxpVector::quantize_f64(&emr.unified, DEFAULT_SCALE_BITS)?;
                let ids = vectors.iter().map(|t| t.source_task).collect();
                state = self.state_from(acc, ids, emr.masks, emr.scales)?;
            }
            Method::Ties { density } => {
                let merged = ties_merge_f64(&vectors, *density)?;
                let acc = FxpVector::quantize_f64(&merged, DEFAULT_SCALE_BITS)?;
                let ids = vectors.iter().map(|t| t.source_task).collect();
                state = self.state_from(acc, ids, BTreeMap::new(), BTreeMap::new())?;
            }
            Method::Central { .. } => unreachable!("central systems are not assembled from task vectors"),
        }
        Ok(state)
    }

    fn check_replay(&self, tv: &TaskVector) -> Result<FxpVector> {
        let q = FxpVector::quantize(&tv.delta, DEFAULT_SCALE_BITS)?;
        let expected = self.registry.get(&tv.source_task).and_then(|e| e.digest);
        if expected != Some(digest(&q)) {
            return Err(Error::ReplayMismatch(tv.source_task));
        }
        Ok(q)
    }

    /// Deletes task `u`. Sign-masked and plain merges replay `u`'s finetune
    /// and subtract it; every other method rebuilds from the remaining tasks.
    pub fn unlearn(&mut self, u: TaskId, tasks: &[TaskSpec]) -> Result<UnlearnOutcome> {
        match self.registry.get(&u) {
            None => return Err(Error::UnknownTask(u)),
            Some(e) if e.unlearned => return Err(Error::AlreadyUnlearned(u)),
            Some(_) => {}
        }
        let remaining: Vec<&TaskSpec> = self
            .state
            .retained()
            .iter()
            .filter(|&&id| id != u)
            .map(|&id| find(tasks, id))
            .collect::<Result<_>>()?;
        let method = self.config.method.clone();
        let mut finetunes = deletion_cost(&method, remaining.len());

        let next = if method.unlearns_by_subtraction() {
            let mut next = self.state.clone();
            if remaining.is_empty() {
                // The accumulator is exactly this task's vector; no replay needed.
                if self.registry[&u].digest != Some(digest(self.state.accumulator())) {
                    return Err(Error::ReplayMismatch(u));
                }
                let zero = FxpVector::zeros(self.state.len(), DEFAULT_SCALE_BITS);
                next.remove(u, self.state.accumulator())?;
                debug_assert_eq!(next.accumulator(), &zero);
            } else {
                let (tv, _) = self.train_one(find(tasks, u)?)?;
                let q = self.check_replay(&tv)?;
                next.remove(u, &q)?;
            }
            next
        } else if method.is_central() {
            self.central_state(&remaining)?
        } else {
            let (cached, missing): (Vec<&TaskSpec>, Vec<&TaskSpec>) =
                remaining.iter().partition(|t| self.cache.contains_key(&t.id()));
            let fresh = self.train_many(&missing)?;
            for (tv, _) in &fresh {
                self.check_replay(tv)?;
            }
            finetunes = fresh.len() as u64;
            let mut trained: BTreeMap<TaskId, Trained> =
                fresh.into_iter().map(|(tv, m)| (tv.source_task, (tv, m))).collect();
            for t in cached {
                trained.insert(t.id(), (self.cache[&t.id()].clone(), None));
            }
            let trained: Vec<Trained> = trained.into_values().collect();
            self.assemble(&trained, &remaining)?
        };

        self.state = next;
        self.cache.remove(&u);
        self.registry.get_mut(&u).expect("checked above").unlearned = true;
        let cost = LedgerEvent {
            phase: Phase::Unlearn,
            task: Some(u),
            task_finetunes: finetunes,
            steps_per_finetune: self.config.steps_per_finetune(),
        };
        self.ledger.record(cost);
        Ok(UnlearnOutcome {
            report: ExactnessReport { task: Some(u), replay_matches: true, state_matches_oracle: None },
            cost,
        })
    }

    /// [`unlearn`](Self::unlearn) followed by a full oracle comparison.
    pub fn unlearn_audited(&mut self, u: TaskId, tasks: &[TaskSpec]) -> Result<UnlearnOutcome> {
        let mut outcome = self.unlearn(u, tasks)?;
        let audit = self.verify_exactness(tasks)?;
        outcome.report.replay_matches &= audit.replay_matches;
        outcome.report.state_matches_oracle = audit.state_matches_oracle;
        Ok(outcome)
    }

    /// Replays every retained task and compares a fresh build of the
    /// retained set with the stored state, bit for bit.
    pub fn verify_exactness(&self, tasks: &[TaskSpec]) -> Result<ExactnessReport> {
        let retained: Vec<&TaskSpec> =
            self.state.retained().iter().map(|&id| find(tasks, id)).collect::<Result<_>>()?;
        let (fresh, replay_matches) = if self.config.method.is_central() {
            (self.central_state(&retained)?, true)
        } else {
            let trained = self.train_many(&retained)?;
            let replay_matches = trained.iter().all(|(tv, _)| self.check_replay(tv).is_ok());
            (self.assemble(&trained, &retained)?, replay_matches)
        };
        Ok(ExactnessReport { task: None, replay_matches, state_matches_oracle: Some(fresh == self.state) })
    }

    /// Model used for task `id`: its localized model while retained, the
    /// unmasked merged model once unlearned.
    pub fn model_for(&self, id: TaskId) -> Result<ParamVector> {
        if self.state.retained().contains(&id) {
            self.state.localize(&self.base, id, self.config.divisor)
        } else if self.registry.contains_key(&id) {
            self.state.serve_merged(&self.base)
        } else {
            Err(Error::UnknownTask(id))
        }
    }

    pub(crate) fn evaluate_tasks(&self, tasks: &[TaskSpec], mode: EvalMode) -> Result<Vec<TaskAccuracy>> {
        let selected: Vec<&TaskSpec> = tasks
            .iter()
            .filter(|t| match mode {
                EvalMode::HeldIn => self.state.retained().contains(&t.id()),
                EvalMode::HeldOut => self.registry.contains_key(&t.id()),
            })
            .collect();
        let merged = self.state.serve_merged(&self.base)?;
        let results: Vec<Option<TaskAccuracy>> = selected
            .par_iter()
            .map(|t| {
                let retained = self.state.retained().contains(&t.id());
                let model =
                    if retained { self.state.localize(&self.base, t.id(), self.config.divisor)? } else { merged.clone() };
                Ok(accuracy(&model, &self.config.model, t.eval())
                    .map(|accuracy| TaskAccuracy { task: t.id(), retained, accuracy }))
            })
            .collect::<Result<_>>()?;
        Ok(results.into_iter().flatten().collect())
    }

    /// Held-in: retained tasks under their localized models. Held-out: every
    /// task ever merged, with unlearned tasks served the unmasked model.
    pub fn evaluate(&self, tasks: &[TaskSpec], mode: EvalMode) -> Result<Evaluation> {
        Ok(Evaluation::from_tasks(self.evaluate_tasks(tasks, mode)?))
    }

    /// Accuracy of the base model on every registered task.
    pub fn zeroshot(&self, tasks: &[TaskSpec]) -> Evaluation {
        let per_task = tasks
            .iter()
            .filter(|t| self.registry.contains_key(&t.id()))
            .filter_map(|t| {
                accuracy(&self.base, &self.config.model, t.eval()).map(|accuracy| TaskAccuracy {
                    task: t.id(),
                    retained: self.state.retained().contains(&t.id()),
                    accuracy,
                })
            })
            .collect();
        Evaluation::from_tasks(per_task)
    }
}
