//! Continual-learning strategies as hooks around one training loop.
//!
//! Every mini-batch goes through the same sequence: the task cross-entropy
//! plus an optional [`Strategy::penalty`] is differentiated, the gradient
//! may be rewritten by [`Strategy::project`], the optimizer steps, and
//! [`Strategy::after_step`] runs (SI bookkeeping, the extra ER step). When
//! the task ends [`Strategy::after_task`] consolidates and the optimizer is
//! reset.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{epoch_batches, TaskDataset};
use crate::error::{Error, Result};
use crate::memory::Weighting;
use crate::model::{Forward, Network};
use crate::optim::Optimizer;
use crate::rng::RunRng;
use crate::tensor::{Graph, Tensor, Var};

mod embedding;
mod episodic;
mod regularizers;

pub use embedding::{er_loss, er_regularize, EmbeddingRegularization};
pub use episodic::{agem_project, gem_project, AGem, EpisodicStore, Gem, GemProjection};
pub use regularizers::{
    ewc_penalty, fisher_diagonal, lwf_penalty, online_fisher_update, si_consolidate, ConsolidatedTask,
    Ewc, Lwf, OnlineEwc, SiPath, SynapticIntelligence,
};

pub const DEFAULT_ER_MEMORY: usize = 100;
pub const DEFAULT_GEM_MEMORY: usize = 200;
pub const DEFAULT_AGEM_BATCH: usize = 256;
pub const DEFAULT_FISHER_SAMPLES: usize = 200;
pub const DEFAULT_XI: f64 = 0.1;
/// SI scale for permuted-input streams and for everything else.
pub const SI_C_PERMUTED: f64 = 1.0;
pub const SI_C_OTHER: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    #[default]
    Naive,
    Ewc,
    EwcOnline,
    Si,
    Lwf,
    Gem,
    Agem,
    Er,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Naive => "naive",
            StrategyKind::Ewc => "ewc",
            StrategyKind::EwcOnline => "ewc_online",
            StrategyKind::Si => "si",
            StrategyKind::Lwf => "lwf",
            StrategyKind::Gem => "gem",
            StrategyKind::Agem => "agem",
            StrategyKind::Er => "er",
        }
    }
}

/// Hyperparameters of every strategy; each kind reads only its own.
/// Unset optional fields take a kind-dependent default at build time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Penalty weight (EWC, online EWC, SI, LWF, ER).
    pub lambda: f64,
    /// Online EWC discount.
    pub gamma: f64,
    /// SI scale; defaults to 1 on permuted streams and 0.01 otherwise.
    pub c: Option<f64>,
    /// SI damping.
    pub xi: f64,
    /// Stored examples per task (ER: 100, GEM and A-GEM: 200).
    pub memory_per_task: Option<usize>,
    /// Memory entries drawn per ER step; defaults to the training batch size.
    pub reg_batch: Option<usize>,
    pub weighting: Weighting,
    /// Examples used to estimate the Fisher diagonal after each task.
    pub fisher_samples: usize,
    /// Size of the pooled A-GEM reference batch.
    pub agem_batch: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            kind: StrategyKind::Naive,
            lambda: 1.0,
            gamma: 1.0,
            c: None,
            xi: DEFAULT_XI,
            memory_per_task: None,
            reg_batch: None,
            weighting: Weighting::Distance,
            fisher_samples: DEFAULT_FISHER_SAMPLES,
            agem_batch: DEFAULT_AGEM_BATCH,
        }
    }
}

impl StrategyConfig {
    pub fn of(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::config(format!("{} strategy: {what}", self.kind.name())));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if let Some(c) = self.c {
            if !(0.0..=1.0).contains(&c) {
                return bad("c must lie in [0, 1]");
            }
        }
        if !(self.xi > 0.0) {
            return bad("xi must be positive");
        }
        if self.memory_per_task == Some(0) {
            return bad("memory_per_task must be positive");
        }
        if self.reg_batch == Some(0) {
            return bad("reg_batch must be positive");
        }
        if self.fisher_samples == 0 || self.agem_batch == 0 {
            return bad("fisher_samples and agem_batch must be positive");
        }
        Ok(())
    }

    pub fn memory_or_default(&self) -> usize {
        self.memory_per_task.unwrap_or(match self.kind {
            StrategyKind::Gem | StrategyKind::Agem => DEFAULT_GEM_MEMORY,
            _ => DEFAULT_ER_MEMORY,
        })
    }
}

/// What a strategy needs from the run when it is built.
#[derive(Clone, Debug)]
pub struct BuildContext<'a> {
    /// The freshly initialized network (its architecture sizes buffers).
    pub net: &'a Network,
    pub seed: u64,
    pub batch_size: usize,
    /// Permuted-input stream; selects the SI scale default.
    pub permuted: bool,
}

/// The current mini-batch as recorded on the step-1 tape.
pub struct StepContext<'a> {
    pub net: &'a Network,
    pub theta: Var,
    pub x: Var,
    pub inputs: &'a Tensor,
    pub labels: &'a [usize],
    pub task: usize,
    pub forward: Forward,
}

/// One completed optimizer step.
pub struct StepRecord<'a> {
    /// Parameters before the step.
    pub before: &'a [f64],
    /// Gradient handed to the optimizer.
    pub grad: &'a [f64],
    pub inputs: &'a Tensor,
    pub task: usize,
}

/// Counters a strategy accumulates over a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StrategyStats {
    /// Optimizer steps that went through a constraint check.
    pub checked_steps: u64,
    /// Steps whose gradient was rewritten by a projection.
    pub projected_steps: u64,
    /// Smallest `<g_applied, g_past>` over every checked step and past task.
    pub worst_alignment: Option<f64>,
    /// QP solves that did not converge (the raw gradient was applied).
    pub qp_failures: u64,
    /// Extra ER optimizer steps.
    pub er_steps: u64,
    /// Mean embedding distance of each ER step, before the step.
    pub er_distances: Vec<f64>,
}

impl StrategyStats {
    pub(crate) fn record_alignment(&mut self, a: f64) {
        self.worst_alignment = Some(self.worst_alignment.map_or(a, |w| w.min(a)));
    }
}

pub trait Strategy {
    fn kind(&self) -> StrategyKind;

    fn before_task(&mut self, _net: &Network, _task: &TaskDataset) -> Result<()> {
        Ok(())
    }

    /// Extra loss added to the step-1 cross-entropy.
    fn penalty(&mut self, _g: &mut Graph, _ctx: &StepContext<'_>) -> Result<Option<Var>> {
        Ok(None)
    }

    /// May rewrite the step-1 gradient before the optimizer sees it.
    fn project(&mut self, _ctx: &StepContext<'_>, _grad: &mut [f64]) -> Result<()> {
        Ok(())
    }

    fn after_step(&mut self, _net: &mut Network, _opt: &mut Optimizer, _step: &StepRecord<'_>) -> Result<()> {
        Ok(())
    }

    fn after_task(&mut self, _net: &Network, _task: &TaskDataset) -> Result<()> {
        Ok(())
    }

    fn stats(&self) -> StrategyStats {
        StrategyStats::default()
    }

    fn replay_memory(&self) -> Option<&crate::memory::ReplayMemory> {
        None
    }
}

/// Plain sequential fine-tuning.
#[derive(Clone, Debug, Default)]
pub struct Naive;

impl Strategy for Naive {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Naive
    }
}

pub fn build_strategy(cfg: &StrategyConfig, ctx: &BuildContext<'_>) -> Result<Box<dyn Strategy>> {
    cfg.validate()?;
    let p = ctx.net.param_count();
    Ok(match cfg.kind {
        StrategyKind::Naive => Box::new(Naive),
        StrategyKind::Ewc => Box::new(Ewc::new(cfg.lambda, cfg.fisher_samples, ctx.seed)),
        StrategyKind::EwcOnline => Box::new(OnlineEwc::new(cfg.lambda, cfg.gamma, cfg.fisher_samples, ctx.seed)?),
        StrategyKind::Si => {
            let c = cfg.c.unwrap_or(if ctx.permuted { SI_C_PERMUTED } else { SI_C_OTHER });
            Box::new(SynapticIntelligence::new(cfg.lambda, c, cfg.xi, p)?)
        }
        StrategyKind::Lwf => Box::new(Lwf::new(cfg.lambda)),
        StrategyKind::Gem => Box::new(Gem::new(cfg.memory_or_default(), ctx.seed)),
        StrategyKind::Agem => Box::new(AGem::new(cfg.memory_or_default(), cfg.agem_batch, ctx.seed)),
        StrategyKind::Er => Box::new(EmbeddingRegularization::new(
            cfg.lambda,
            cfg.memory_or_default(),
            cfg.reg_batch.unwrap_or(ctx.batch_size),
            cfg.weighting,
            ctx.net.architecture(),
            ctx.seed,
        )?),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
}

impl TrainOptions {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        Ok(())
    }
}

/// Summary of one task's training.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TaskLog {
    pub steps: u64,
    /// Mean step-1 cross-entropy over all batches.
    pub mean_loss: f64,
}

/// Trains on one task, then consolidates and resets the optimizer.
pub fn train_task(
    net: &mut Network,
    strategy: &mut dyn Strategy,
    task: &TaskDataset,
    opts: TrainOptions,
    opt: &mut Optimizer,
    rng: &mut RunRng,
) -> Result<TaskLog> {
    train_task_observed(net, strategy, task, opts, opt, rng, &mut |_| {})
}

/// [`train_task`] calling `observe` with the parameters after every step.
pub fn train_task_observed(
    net: &mut Network,
    strategy: &mut dyn Strategy,
    task: &TaskDataset,
    opts: TrainOptions,
    opt: &mut Optimizer,
    rng: &mut RunRng,
    observe: &mut dyn FnMut(&[f64]),
) -> Result<TaskLog> {
    opts.validate()?;
    if task.is_empty() {
        return Err(Error::contract(format!("task {} has no training examples", task.task_id())));
    }
    let t = task.task_id();
    strategy.before_task(net, task)?;
    let mut log = TaskLog::default();
    let mut loss_sum = 0.0;
    for _ in 0..opts.epochs {
        for batch in epoch_batches(task.len(), opts.batch_size, rng) {
            let inputs = task.gather(&batch)?;
            let labels = task.gather_labels(&batch);
            let mut g = Graph::new();
            let theta = g.param(net.flat_params());
            let x = g.constant(inputs.clone());
            let forward = net.forward(&mut g, theta, x, t)?;
            let ce = g.cross_entropy(forward.logits, &labels)?;
            loss_sum += g.value(ce).item();
            let ctx = StepContext {
                net,
                theta,
                x,
                inputs: &inputs,
                labels: &labels,
                task: t,
                forward,
            };
            let loss = match strategy.penalty(&mut g, &ctx)? {
                Some(p) => g.add(ce, p)?,
                None => ce,
            };
            g.backward(loss)?;
            let mut grad = g.take_grad(theta).expect("theta is tracked").into_data();
            strategy.project(&ctx, &mut grad)?;
            opt.step(net.params_mut(), &grad)?;
            let record = StepRecord {
                before: g.value(theta).data(),
                grad: &grad,
                inputs: &inputs,
                task: t,
            };
            strategy.after_step(net, opt, &record)?;
            log.steps += 1;
            observe(net.params());
        }
    }
    strategy.after_task(net, task)?;
    opt.reset();
    log.mean_loss = loss_sum / log.steps as f64;
    Ok(log)
}

/// Gradient of `sum_k (n_k / n) * CE_k` where each group holds inputs and
/// labels of one task evaluated on that task's head.
pub(crate) fn grouped_loss_gradient(net: &Network, groups: &[(usize, &Tensor, &[usize])]) -> Result<Vec<f64>> {
    let total: usize = groups.iter().map(|(_, _, y)| y.len()).sum();
    if total == 0 {
        return Err(Error::contract("loss gradient over an empty batch"));
    }
    let mut g = Graph::new();
    let theta = g.param(net.flat_params());
    let mut loss: Option<Var> = None;
    for &(task, x, y) in groups {
        if y.is_empty() {
            continue;
        }
        let xv = g.constant(x.clone());
        let f = net.forward(&mut g, theta, xv, task)?;
        let ce = g.cross_entropy(f.logits, y)?;
        let term = g.scale(ce, y.len() as f64 / total as f64);
        loss = Some(match loss {
            Some(l) => g.add(l, term)?,
            None => term,
        });
    }
    let loss = loss.expect("at least one non-empty group");
    g.backward(loss)?;
    Ok(g.take_grad(theta).expect("theta is tracked").into_data())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
