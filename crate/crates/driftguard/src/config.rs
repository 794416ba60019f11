//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use driftguard_core::data::SyntheticSpec;
use driftguard_core::strategies::{StrategyConfig, StrategyKind};
use driftguard_core::OptimizerKind;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Environment variable naming the default dataset root.
pub const DATA_ENV: &str = "DRIFTGUARD_DATA";
pub const DEFAULT_DATA_ROOT: &str = "data/mnist";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    /// Pixel-permuted MNIST, one shared 10-way head.
    #[default]
    Permuted,
    /// MNIST split into disjoint class groups, one head per task.
    Split,
    /// Gaussian clusters; needs no files.
    Synthetic,
}

impl Benchmark {
    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Permuted => "permuted",
            Benchmark::Split => "split",
            Benchmark::Synthetic => "synthetic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding the four MNIST IDX files. Falls back to
    /// `$DRIFTGUARD_DATA`, then `data/mnist`.
    pub root: Option<PathBuf>,
    /// Average 2x2 pixel blocks (28x28 becomes 14x14).
    pub downsample: bool,
    /// Keep only the first N training / test examples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    /// Classes per task of the split benchmark.
    pub classes_per_task: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: None,
            downsample: false,
            train_limit: None,
            test_limit: None,
            classes_per_task: 2,
        }
    }
}

impl DataConfig {
    pub fn resolved_root(&self) -> PathBuf {
        if let Some(r) = &self.root {
            return r.clone();
        }
        match std::env::var_os(DATA_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from(DEFAULT_DATA_ROOT),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: vec![400; 4] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 1,
            batch_size: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Tasks whose test embeddings are exported after the last task.
    pub embeddings: Vec<usize>,
    pub memory_dump: bool,
    pub checkpoint: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            embeddings: vec![0],
            memory_dump: true,
            checkpoint: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub n_tasks: usize,
    pub seed: u64,
    /// Artifacts are written here when set.
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    /// Only read by the synthetic benchmark; its `n_tasks` is replaced by
    /// the top-level value.
    pub synthetic: SyntheticSpec,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    pub strategy: StrategyConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            benchmark: Benchmark::Permuted,
            n_tasks: 4,
            seed: 0,
            out_dir: None,
            data: DataConfig::default(),
            synthetic: SyntheticSpec::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            training: TrainingConfig::default(),
            strategy: StrategyConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.n_tasks == 0 {
            return fail("n_tasks must be at least 1");
        }
        if self.training.epochs == 0 || self.training.batch_size == 0 {
            return fail("training.epochs and training.batch_size must be positive");
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return fail("optimizer.lr must be positive");
        }
        if self.model.hidden.contains(&0) {
            return fail("model.hidden sizes must be positive");
        }
        if self.output.embeddings.iter().any(|&t| t >= self.n_tasks) {
            return fail("output.embeddings names a task outside the stream");
        }
        self.strategy.validate()?;
        Ok(())
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub strategy: Option<StrategyKind>,
    pub memory_per_task: Option<usize>,
    pub downsample: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        if let Some(k) = self.strategy {
            cfg.strategy.kind = k;
        }
        if let Some(m) = self.memory_per_task {
            cfg.strategy.memory_per_task = Some(m);
        }
        if self.downsample {
            cfg.data.downsample = true;
        }
        cfg.validate()
    }
}

/// Parses a strategy name as written in config files (`ewc_online`, `er`, ...).
pub fn parse_strategy(name: &str) -> Result<StrategyKind> {
    #[derive(Deserialize)]
    struct Probe {
        kind: StrategyKind,
    }
    let probe: Probe = toml::from_str(&format!("kind = {:?}", name))
        .map_err(|_| HarnessError::Config(format!("unknown strategy {name:?}")))?;
    Ok(probe.kind)
}
