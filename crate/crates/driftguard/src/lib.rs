//! Experiment runner for `driftguard-core`: TOML configs, MNIST IDX
//! loading, sequential training with per-task evaluation, and the files a
//! run leaves behind (`rmatrix.csv`, `metrics.json`, `trajectory.csv`,
//! `embeddings_task<k>.csv`, `memory_dump/`, `checkpoint/`).

pub mod compare;
pub mod config;
pub mod dataset;
pub mod error;
pub mod export;
pub mod runner;

pub use compare::{timing_report, ComparisonTable};
pub use config::{Benchmark, ExperimentConfig, Overrides};
pub use error::{HarnessError, Result};
pub use runner::{run_experiment, run_stream, RunOutcome, RunReport};

/// Runs `cfg` once per memory size. With an output directory each run
/// writes into `<out>/memory_<m>`.
pub fn run_sweep(cfg: &ExperimentConfig, memories: &[usize]) -> Result<Vec<(usize, RunReport)>> {
    if memories.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one memory size".into()));
    }
    let stream = dataset::load_stream(cfg)?;
    let mut out = Vec::with_capacity(memories.len());
    for &m in memories {
        let mut c = cfg.clone();
        c.strategy.memory_per_task = Some(m);
        c.out_dir = cfg.out_dir.as_ref().map(|d| d.join(format!("memory_{m}")));
        c.validate()?;
        out.push((m, run_stream(&c, &stream)?.report));
    }
    Ok(out)
}
