use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_tasks, validate_tasks, GeneratorConfig, HeterogeneityRegime, TaskSpec};
use crate::engine::{ClusteredSystem, EngineConfig};
use crate::error::{Error, Result};
use crate::merging::{Divisor, Method};
use crate::param::PrngStream;
use crate::trainer::{ModelKind, ModelSpec, TrainConfig};

/// Where task data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic { regime: HeterogeneityRegime, tasks: usize, n_per_task: usize },
    File { path: PathBuf },
}

/// One experiment, fully specified. Every field is written out when the
/// config is serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    pub data: DataSource,
    pub model: ModelSpec,
    pub method: Method,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub divisor: Divisor,
    pub clusters: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSource::Synthetic {
                regime: HeterogeneityRegime::Conflicting { conflict_rate: 0.5 },
                tasks: 10,
                n_per_task: 400,
            },
            model: ModelSpec { kind: ModelKind::Mlp, input_dim: 20, hidden_dim: 64, num_classes: 2 },
            method: Method::SiftMasks,
            steps: 20,
            batch_size: 64,
            learning_rate: 0.05,
            divisor: Divisor::Retained,
            clusters: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Child seed of the run seed for one consumer.
pub fn stream_seed(root: u64, name: &str) -> u64 {
    PrngStream::new(root).named(name).seed()
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Data { path: path.to_owned(), message: e.to_string() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.method.validate()?;
        self.train_config().validate()?;
        if self.clusters == 0 {
            return Err(Error::InvalidParameter("clusters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn generator(&self) -> Option<GeneratorConfig> {
        match &self.data {
            DataSource::Synthetic { regime, tasks, n_per_task } => Some(GeneratorConfig {
                regime: *regime,
                tasks: *tasks,
                n_per_task: *n_per_task,
                input_dim: self.model.input_dim,
                num_classes: self.model.num_classes,
                seed: stream_seed(self.seed, "data"),
            }),
            DataSource::File { .. } => None,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig::new(self.steps, self.batch_size, self.learning_rate, stream_seed(self.seed, "batches"))
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            model: self.model,
            train: self.train_config(),
            method: self.method.clone(),
            base_seed: stream_seed(self.seed, "init"),
            sign_seed: stream_seed(self.seed, "signs"),
            divisor: self.divisor,
            cache_task_vectors: false,
        }
    }

    pub fn cluster_seed(&self) -> u64 {
        stream_seed(self.seed, "clusters")
    }

    /// Generates or loads the task data and checks it against the model.
    pub fn tasks(&self) -> Result<Vec<TaskSpec>> {
        let tasks = match &self.data {
            DataSource::Synthetic { .. } => self.generator().expect("synthetic").generate()?,
            DataSource::File { path } => load_tasks(path, Some(self.model.num_classes))?,
        };
        validate_tasks(&tasks, self.model.input_dim, self.model.num_classes)?;
        Ok(tasks)
    }

    pub fn build(&self, tasks: &[TaskSpec]) -> Result<ClusteredSystem> {
        self.validate()?;
        ClusteredSystem::build(self.engine_config(), tasks, self.clusters, self.cluster_seed())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_lists_every_field() {
        let cfg = RunConfig::default();
        let v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        for key in [
            "seed",
            "data",
            "model",
            "method",
            "steps",
            "batch_size",
            "learning_rate",
            "divisor",
            "clusters",
            "output_dir",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: RunConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<RunConfig>("{\"seed\": 1}").is_err());
    }

    #[test]
    fn child_streams_differ() {
        let cfg = RunConfig::default();
        let e = cfg.engine_config();
        let seeds = [e.base_seed, e.sign_seed, e.train.seed, cfg.cluster_seed(), cfg.generator().unwrap().seed];
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }
}
