//! Binary checkpoint of a (possibly clustered) merged system.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SFTM" | u32 version | u32 len | run config JSON
//! u32 scale_bits | u64 base_seed | u64 sign_seed | u32 clusters
//! per cluster:
//!   u32 n, n x (u32 id | u64 replay_seed | u8 unlearned | u8 has_digest | [u8; 32] digest)
//!   u32 n, n x u32 retained id
//!   u64 M, M x i64 accumulator
//!   u32 n, n x (u32 id | ceil(M/32) x u32 mask words)
//!   u32 n, n x (u32 id | f64 scale)
//!   u32 n, n x (u8 phase | u8 has_task | u32 task | u64 task_finetunes | u64 steps_per_finetune)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::data::TaskId;
use crate::engine::{ClusteredSystem, CostLedger, LedgerEvent, Phase, RegistryEntry, System};
use crate::error::{Error, Result};
use crate::merging::MergedState;
use crate::param::{words_for, BitMask, FxpVector, DEFAULT_SCALE_BITS};

use super::config::RunConfig;

pub const MAGIC: &[u8; 4] = b"SFTM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub system: ClusteredSystem,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) -> Result<()> {
        let n = u32::try_from(n).map_err(|_| Error::Checkpoint("count exceeds u32".into()))?;
        self.u32(n);
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.array()?))
    }
    fn count(&mut self) -> Result<usize> {
        let n = self.u32()? as usize;
        // Every counted item occupies at least four bytes.
        if n > (self.bytes.len() - self.pos) / 4 + 1 {
            return Err(Error::Checkpoint(format!("implausible count {n} at byte {}", self.pos - 4)));
        }
        Ok(n)
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Checkpoint(format!("bad flag byte {v}"))),
        }
    }
}

fn write_system(w: &mut Writer, s: &System) -> Result<()> {
    w.len(s.registry().len())?;
    for (id, e) in s.registry() {
        w.u32(id.0);
        w.u64(e.replay_seed);
        w.u8(e.unlearned as u8);
        w.u8(e.digest.is_some() as u8);
        w.0.extend_from_slice(&e.digest.unwrap_or([0; 32]));
    }
    let state = s.state();
    w.len(state.retained().len())?;
    state.retained().iter().for_each(|id| w.u32(id.0));
    w.u64(state.len() as u64);
    state.accumulator().values().iter().for_each(|&v| w.i64(v));
    w.len(state.masks().len())?;
    for (id, m) in state.masks() {
        w.u32(id.0);
        m.words().iter().for_each(|&x| w.u32(x));
    }
    w.len(state.scales().len())?;
    for (id, v) in state.scales() {
        w.u32(id.0);
        w.u64(v.to_bits());
    }
    w.len(s.ledger().events().len())?;
    for e in s.ledger().events() {
        w.u8(match e.phase {
            Phase::Build => 0,
            Phase::Unlearn => 1,
        });
        w.u8(e.task.is_some() as u8);
        w.u32(e.task.map_or(0, |t| t.0));
        w.u64(e.task_finetunes);
        w.u64(e.steps_per_finetune);
    }
    Ok(())
}

fn read_system(r: &mut Reader<'_>, config: &RunConfig) -> Result<System> {
    let engine = config.engine_config();
    let mut registry = BTreeMap::new();
    for _ in 0..r.count()? {
        let id = TaskId(r.u32()?);
        let replay_seed = r.u64()?;
        let unlearned = r.flag()?;
        let has_digest = r.flag()?;
        let digest: [u8; 32] = r.array()?;
        registry.insert(id, RegistryEntry { replay_seed, digest: has_digest.then_some(digest), unlearned });
    }
    let retained: BTreeSet<TaskId> = (0..r.count()?).map(|_| r.u32().map(TaskId)).collect::<Result<_>>()?;
    let m = r.u64()? as usize;
    if m != engine.model.param_count() {
        return Err(Error::Checkpoint(format!(
            "accumulator length {m} does not match the model's {} parameters",
            engine.model.param_count()
        )));
    }
    let acc: Vec<i64> = (0..m).map(|_| r.i64()).collect::<Result<_>>()?;
    let acc = FxpVector::from_raw(acc, DEFAULT_SCALE_BITS)?;
    let mut masks = BTreeMap::new();
    for _ in 0..r.count()? {
        let id = TaskId(r.u32()?);
        let words: Vec<u32> = (0..words_for(m)).map(|_| r.u32()).collect::<Result<_>>()?;
        masks.insert(id, BitMask::from_words(words, m)?);
    }
    let mut scales = BTreeMap::new();
    for _ in 0..r.count()? {
        let id = TaskId(r.u32()?);
        scales.insert(id, f64::from_bits(r.u64()?));
    }
    let mut events = Vec::new();
    for _ in 0..r.count()? {
        let phase = match r.u8()? {
            0 => Phase::Build,
            1 => Phase::Unlearn,
            v => return Err(Error::Checkpoint(format!("bad ledger phase {v}"))),
        };
        let has_task = r.flag()?;
        let task = TaskId(r.u32()?);
        let task_finetunes = r.u64()?;
        let steps_per_finetune = r.u64()?;
        events.push(LedgerEvent { phase, task: has_task.then_some(task), task_finetunes, steps_per_finetune });
    }
    let state = MergedState::from_parts(
        engine.method.clone(),
        engine.base_seed,
        engine.sign_seed,
        acc,
        retained,
        masks,
        scales,
    )?;
    System::restore(engine, state, registry, CostLedger::from_events(events))
}

impl Checkpoint {
    pub fn new(config: RunConfig, system: ClusteredSystem) -> Self {
        Self { config, system }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let json = serde_json::to_vec(&self.config)?;
        w.len(json.len())?;
        w.0.extend_from_slice(&json);
        let engine = self.config.engine_config();
        w.u32(DEFAULT_SCALE_BITS);
        w.u64(engine.base_seed);
        w.u64(engine.sign_seed);
        w.len(self.system.systems().len())?;
        for s in self.system.systems() {
            write_system(&mut w, s)?;
        }
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = r.u32()? as usize;
        let config: RunConfig = serde_json::from_slice(r.take(n)?)?;
        let engine = config.engine_config();
        let scale_bits = r.u32()?;
        if scale_bits != DEFAULT_SCALE_BITS {
            return Err(Error::Checkpoint(format!("unsupported scale_bits {scale_bits}")));
        }
        if r.u64()? != engine.base_seed || r.u64()? != engine.sign_seed {
            return Err(Error::Checkpoint("seeds disagree with the stored configuration".into()));
        }
        let clusters = r.count()?;
        let systems = (0..clusters).map(|_| read_system(&mut r, &config)).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { config, system: ClusteredSystem::from_systems(systems)? })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
