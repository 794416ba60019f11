//! Sequential training over a task stream.

use std::path::Path;
use std::time::Instant;

use driftguard_core::data::TaskStream;
use driftguard_core::metrics::{eval_task, RMatrix, Scores};
use driftguard_core::rng::{stream, stream_rng};
use driftguard_core::strategies::{
    build_strategy, train_task_observed, BuildContext, Strategy, StrategyKind, StrategyStats, TrainOptions,
};
use driftguard_core::{Architecture, Network, Optimizer};
use serde::Serialize;

use crate::config::{Benchmark, ExperimentConfig};
use crate::dataset::load_stream;
use crate::error::{HarnessError, Result};
use crate::export;

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub benchmark: Benchmark,
    pub strategy: StrategyKind,
    pub n_tasks: usize,
    /// Lower triangle of R, row `i` holding tasks `0..=i`.
    pub r_matrix: Vec<Vec<f64>>,
    pub accuracy: f64,
    pub bwt: f64,
    pub remembering: f64,
    pub positive_bwt: f64,
    /// Accuracy on the first task after each task.
    pub trajectory: Vec<f64>,
    /// Wall-clock training seconds per task (evaluation excluded).
    pub task_seconds: Vec<f64>,
    pub seconds: f64,
    pub stats: StrategyStats,
    pub config: ExperimentConfig,
    #[serde(skip)]
    pub r: RMatrix,
}

impl RunReport {
    /// The report with every wall-clock field zeroed; two runs of the same
    /// config and seed give identical values.
    pub fn without_timing(&self) -> RunReport {
        RunReport {
            task_seconds: vec![0.0; self.task_seconds.len()],
            seconds: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        export::to_json(self)
    }
}

/// Final state of a run, for callers that inspect more than the report.
pub struct RunOutcome {
    pub report: RunReport,
    pub net: Network,
    pub strategy: Box<dyn Strategy>,
}

/// Loads the configured stream, trains, evaluates and writes artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let stream = load_stream(cfg)?;
    Ok(run_stream(cfg, &stream)?.report)
}

/// [`run_experiment`] on an already built stream.
pub fn run_stream(cfg: &ExperimentConfig, stream: &TaskStream) -> Result<RunOutcome> {
    run_stream_observed(cfg, stream, &mut |_, _| {})
}

/// [`run_stream`] calling `observe(task, params)` after every optimizer step.
pub fn run_stream_observed(
    cfg: &ExperimentConfig,
    stream: &TaskStream,
    observe: &mut dyn FnMut(usize, &[f64]),
) -> Result<RunOutcome> {
    cfg.validate()?;
    if stream.len() != cfg.n_tasks {
        return Err(HarnessError::Config(format!(
            "stream has {} tasks but n_tasks is {}",
            stream.len(),
            cfg.n_tasks
        )));
    }
    let arch = Architecture::new(stream.input_dim(), cfg.model.hidden.clone(), stream.head_policy(), stream.len())?;
    let mut net = Network::new(arch, &mut stream_rng(cfg.seed, stream::INIT));
    let mut strategy = build_strategy(
        &cfg.strategy,
        &BuildContext {
            net: &net,
            seed: cfg.seed,
            batch_size: cfg.training.batch_size,
            permuted: cfg.benchmark == Benchmark::Permuted,
        },
    )?;
    let mut opt = Optimizer::new(cfg.optimizer.kind, cfg.optimizer.lr, net.param_count())?;
    let mut shuffle = stream_rng(cfg.seed, stream::SHUFFLE);
    let opts = TrainOptions {
        epochs: cfg.training.epochs,
        batch_size: cfg.training.batch_size,
    };
    log::info!(
        "{} on {} ({} tasks, {} inputs, {} parameters)",
        cfg.strategy.kind.name(),
        cfg.benchmark.name(),
        stream.len(),
        stream.input_dim(),
        net.param_count()
    );

    let mut r = RMatrix::new(stream.len());
    let mut trajectory = Vec::with_capacity(stream.len());
    let mut task_seconds = Vec::with_capacity(stream.len());
    for (i, split) in stream.tasks().iter().enumerate() {
        let wrap = |source| HarnessError::Task { task: i, source };
        let start = Instant::now();
        let log = train_task_observed(
            &mut net,
            strategy.as_mut(),
            &split.train,
            opts,
            &mut opt,
            &mut shuffle,
            &mut |p| observe(i, p),
        )
        .map_err(wrap)?;
        let secs = start.elapsed().as_secs_f64();
        task_seconds.push(secs);
        let mut row = Vec::with_capacity(i + 1);
        for seen in &stream.tasks()[..=i] {
            row.push(eval_task(&net, &seen.test).map_err(wrap)?);
        }
        log::info!(
            "task {i}: {} steps, loss {:.4}, {secs:.1}s, accuracies {:?}",
            log.steps,
            log.mean_loss,
            row.iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>()
        );
        trajectory.push(row[0]);
        r.push_row(&row).map_err(wrap)?;
    }
    let scores = Scores::of(&r)?;
    let report = RunReport {
        benchmark: cfg.benchmark,
        strategy: cfg.strategy.kind,
        n_tasks: stream.len(),
        r_matrix: (0..stream.len())
            .map(|i| (0..=i).map(|j| r.get(i, j).expect("row filled")).collect())
            .collect(),
        accuracy: scores.accuracy,
        bwt: scores.bwt,
        remembering: scores.remembering,
        positive_bwt: scores.positive_bwt,
        trajectory,
        seconds: task_seconds.iter().sum(),
        task_seconds,
        stats: strategy.stats(),
        config: cfg.clone(),
        r,
    };
    log::info!(
        "accuracy {:.4}, bwt {:.4}, remembering {:.4}, positive bwt {:.4}, {:.1}s",
        report.accuracy,
        report.bwt,
        report.remembering,
        report.positive_bwt,
        report.seconds
    );
    if let Some(dir) = &cfg.out_dir {
        write_artifacts(&report, &net, strategy.as_ref(), stream, dir)?;
    }
    Ok(RunOutcome { report, net, strategy })
}

/// Writes every run artifact into `dir`.
pub fn write_artifacts(
    report: &RunReport,
    net: &Network,
    strategy: &dyn Strategy,
    stream: &TaskStream,
    dir: &Path,
) -> Result<()> {
    let cfg = &report.config;
    export::write_rmatrix(&report.r, &dir.join("rmatrix.csv"))?;
    export::write_file(&dir.join("metrics.json"), report.to_json()?)?;
    export::write_trajectory(&report.trajectory, &dir.join("trajectory.csv"))?;
    export::write_file(&dir.join("config.toml"), cfg.to_toml())?;
    for &k in &cfg.output.embeddings {
        export::export_embeddings(net, &stream.tasks()[k].test, &dir.join(format!("embeddings_task{k}.csv")))?;
    }
    if cfg.output.memory_dump {
        if let Some(mem) = strategy.replay_memory() {
            export::dump_memory(mem, &dir.join("memory_dump"))?;
        }
    }
    if cfg.output.checkpoint {
        export::save_checkpoint(net, &dir.join("checkpoint"))?;
    }
    Ok(())
}
