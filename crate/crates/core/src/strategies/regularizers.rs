//! Weight- and output-space penalties: EWC, online EWC, SI and LWF.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{sample_without_replacement, TaskDataset};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::rng::{stream, stream_rng, RunRng};
use crate::tensor::{log_softmax_rows, Graph, Tensor, Var};

use super::{Strategy, StepContext, StepRecord, StrategyKind};

/// Parameter snapshot and per-parameter importance of one finished task.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsolidatedTask {
    pub theta_star: Vec<f64>,
    pub fisher: Vec<f64>,
    pub task_id: usize,
}

/// `sum_k (lambda / 2) * sum_z F_kz (theta_z - theta*_kz)^2` recorded on
/// the tape. No stored task gives a constant zero.
pub fn ewc_penalty(g: &mut Graph, theta: Var, consolidated: &[ConsolidatedTask], lambda: f64) -> Result<Var> {
    if consolidated.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let th = g.value(theta).data();
    let p = th.len();
    // one fused pass; the tape would otherwise hold several P-vectors per task
    let mut value = 0.0;
    let mut grad = vec![0.0; p];
    for c in consolidated {
        if c.theta_star.len() != p || c.fisher.len() != p {
            return Err(Error::dim("ewc_penalty", &[p], &[c.theta_star.len(), c.fisher.len()]));
        }
        for (((gz, &t), &s), &f) in grad.iter_mut().zip(th).zip(&c.theta_star).zip(&c.fisher) {
            let w = f * (t - s);
            value += w * (t - s);
            *gz += w;
        }
    }
    grad.iter_mut().for_each(|v| *v *= lambda);
    g.scalar_fn(theta, value * lambda / 2.0, Tensor::vector(grad))
}

/// Empirical Fisher diagonal: the mean over examples of the squared
/// gradient of `log p(y_i | x_i)` on the task's head.
pub fn fisher_diagonal(net: &Network, x: &Tensor, labels: &[usize], task: usize) -> Result<Vec<f64>> {
    if labels.is_empty() || x.rows() != labels.len() {
        return Err(Error::contract(format!(
            "fisher estimate needs a non-empty batch, got {} inputs and {} labels",
            x.rows(),
            labels.len()
        )));
    }
    let mut fisher = vec![0.0; net.param_count()];
    for (i, &y) in labels.iter().enumerate() {
        let mut g = Graph::new();
        let theta = g.param(net.flat_params());
        let xi = g.constant(Tensor::matrix(1, x.cols(), x.row(i).to_vec())?);
        let f = net.forward(&mut g, theta, xi, task)?;
        let nll = g.cross_entropy(f.logits, &[y])?;
        g.backward(nll)?;
        let grad = g.take_grad(theta).expect("theta is tracked");
        for (acc, d) in fisher.iter_mut().zip(grad.data()) {
            *acc += d * d;
        }
    }
    let n = labels.len() as f64;
    fisher.iter_mut().for_each(|f| *f /= n);
    Ok(fisher)
}

/// `f_new + gamma * f_prev`.
pub fn online_fisher_update(f_new: &[f64], f_prev: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::config(format!("online EWC gamma {gamma} outside [0, 1]")));
    }
    if f_new.len() != f_prev.len() {
        return Err(Error::dim("online_fisher_update", &[f_new.len()], &[f_prev.len()]));
    }
    Ok(f_new.iter().zip(f_prev).map(|(a, b)| a + gamma * b).collect())
}

/// Distillation penalty `-(lambda / B') sum_i sum_c old_ic log softmax(new)_ic`.
/// `old_probs` is a frozen `[B' x C]` constant.
pub fn lwf_penalty(g: &mut Graph, old_probs: &Tensor, new_logits: Var, lambda: f64) -> Result<Var> {
    let shape = g.value(new_logits).shape().to_vec();
    if old_probs.shape() != shape.as_slice() || shape.len() != 2 || shape[0] == 0 {
        return Err(Error::dim("lwf_penalty", old_probs.shape(), &shape));
    }
    let rows = shape[0] as f64;
    let old = g.constant(old_probs.clone());
    let logp = g.log_softmax(new_logits)?;
    let prod = g.mul(old, logp)?;
    let s = g.sum(prod);
    Ok(g.scale(s, -lambda / rows))
}

/// Running SI path integral `Delta J_z`.
#[derive(Clone, Debug, PartialEq)]
pub struct SiPath {
    pub delta_j: Vec<f64>,
}

impl SiPath {
    pub fn new(n_params: usize) -> Self {
        SiPath {
            delta_j: vec![0.0; n_params],
        }
    }

    /// `Delta J_z += -grad_z * delta_theta_z` for one optimizer step.
    pub fn accumulate(&mut self, grad: &[f64], delta_theta: &[f64]) -> Result<()> {
        let p = self.delta_j.len();
        if grad.len() != p || delta_theta.len() != p {
            return Err(Error::dim("si_accumulate", &[grad.len(), delta_theta.len()], &[p]));
        }
        for ((j, g), d) in self.delta_j.iter_mut().zip(grad).zip(delta_theta) {
            *j -= g * d;
        }
        Ok(())
    }

    pub fn reset(&mut self) {
        self.delta_j.iter_mut().for_each(|j| *j = 0.0);
    }
}

/// Per-task SI importance `max(0, c * Delta J_z / (Delta_z^2 + xi))` with
/// `Delta_z = |end_z - start_z|`.
pub fn si_consolidate(path: &SiPath, start: &[f64], end: &[f64], xi: f64, c: f64) -> Result<Vec<f64>> {
    if !(xi > 0.0) {
        return Err(Error::config(format!("SI damping xi must be positive, got {xi}")));
    }
    let p = path.delta_j.len();
    if start.len() != p || end.len() != p {
        return Err(Error::dim("si_consolidate", &[start.len(), end.len()], &[p]));
    }
    Ok(path
        .delta_j
        .iter()
        .zip(start.iter().zip(end))
        .map(|(j, (s, e))| {
            let d = e - s;
            (c * j / (d * d + xi)).max(0.0)
        })
        .collect())
}

/// Draws up to `samples` training examples of `task` for a Fisher estimate.
fn fisher_of_task(net: &Network, task: &TaskDataset, samples: usize, rng: &mut RunRng) -> Result<Vec<f64>> {
    let picks = sample_without_replacement(task.len(), samples, rng);
    let x = task.gather(&picks)?;
    fisher_diagonal(net, &x, &task.gather_labels(&picks), task.task_id())
}

/// EWC with one consolidated snapshot per finished task.
#[derive(Clone, Debug)]
pub struct Ewc {
    lambda: f64,
    samples: usize,
    rng: RunRng,
    tasks: Vec<ConsolidatedTask>,
}

impl Ewc {
    pub fn new(lambda: f64, fisher_samples: usize, seed: u64) -> Self {
        Ewc {
            lambda,
            samples: fisher_samples,
            rng: stream_rng(seed, stream::FISHER),
            tasks: Vec::new(),
        }
    }

    pub fn consolidated(&self) -> &[ConsolidatedTask] {
        &self.tasks
    }
}

impl Strategy for Ewc {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Ewc
    }

    fn penalty(&mut self, g: &mut Graph, ctx: &StepContext<'_>) -> Result<Option<Var>> {
        if self.lambda == 0.0 || self.tasks.is_empty() {
            return Ok(None);
        }
        ewc_penalty(g, ctx.theta, &self.tasks, self.lambda).map(Some)
    }

    fn after_task(&mut self, net: &Network, task: &TaskDataset) -> Result<()> {
        let fisher = fisher_of_task(net, task, self.samples, &mut self.rng)?;
        self.tasks.push(ConsolidatedTask {
            theta_star: net.params().to_vec(),
            fisher,
            task_id: task.task_id(),
        });
        Ok(())
    }
}

/// Online EWC: a single discounted Fisher and the latest snapshot.
#[derive(Clone, Debug)]
pub struct OnlineEwc {
    lambda: f64,
    gamma: f64,
    samples: usize,
    rng: RunRng,
    state: Option<ConsolidatedTask>,
}

impl OnlineEwc {
    pub fn new(lambda: f64, gamma: f64, fisher_samples: usize, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::config(format!("online EWC gamma {gamma} outside [0, 1]")));
        }
        Ok(OnlineEwc {
            lambda,
            gamma,
            samples: fisher_samples,
            rng: stream_rng(seed, stream::FISHER),
            state: None,
        })
    }

    pub fn consolidated(&self) -> Option<&ConsolidatedTask> {
        self.state.as_ref()
    }
}

impl Strategy for OnlineEwc {
    fn kind(&self) -> StrategyKind {
        StrategyKind::EwcOnline
    }

    fn penalty(&mut self, g: &mut Graph, ctx: &StepContext<'_>) -> Result<Option<Var>> {
        match &self.state {
            Some(s) if self.lambda != 0.0 => ewc_penalty(g, ctx.theta, core::slice::from_ref(s), self.lambda).map(Some),
            _ => Ok(None),
        }
    }

    fn after_task(&mut self, net: &Network, task: &TaskDataset) -> Result<()> {
        let f_new = fisher_of_task(net, task, self.samples, &mut self.rng)?;
        let fisher = match &self.state {
            Some(prev) => online_fisher_update(&f_new, &prev.fisher, self.gamma)?,
            None => f_new,
        };
        self.state = Some(ConsolidatedTask {
            theta_star: net.params().to_vec(),
            fisher,
            task_id: task.task_id(),
        });
        Ok(())
    }
}

/// Synaptic intelligence: path-integral importances used as an EWC-style
/// quadratic penalty around the end of the previous task.
#[derive(Clone, Debug)]
pub struct SynapticIntelligence {
    lambda: f64,
    c: f64,
    xi: f64,
    path: SiPath,
    start: Vec<f64>,
    delta: Vec<f64>,
    state: Option<ConsolidatedTask>,
}

impl SynapticIntelligence {
    pub fn new(lambda: f64, c: f64, xi: f64, n_params: usize) -> Result<Self> {
        if !(xi > 0.0) {
            return Err(Error::config(format!("SI damping xi must be positive, got {xi}")));
        }
        Ok(SynapticIntelligence {
            lambda,
            c,
            xi,
            path: SiPath::new(n_params),
            start: Vec::new(),
            delta: vec![0.0; n_params],
            state: None,
        })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Accumulated importance (zero before the first task ends).
    pub fn importance(&self) -> Option<&[f64]> {
        self.state.as_ref().map(|s| s.fisher.as_slice())
    }
}

impl Strategy for SynapticIntelligence {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Si
    }

    fn before_task(&mut self, net: &Network, _task: &TaskDataset) -> Result<()> {
        self.start = net.params().to_vec();
        self.path.reset();
        Ok(())
    }

    fn penalty(&mut self, g: &mut Graph, ctx: &StepContext<'_>) -> Result<Option<Var>> {
        match &self.state {
            Some(s) if self.lambda != 0.0 && self.c != 0.0 => {
                ewc_penalty(g, ctx.theta, core::slice::from_ref(s), self.lambda).map(Some)
            }
            _ => Ok(None),
        }
    }

    fn after_step(&mut self, net: &mut Network, _opt: &mut crate::Optimizer, step: &StepRecord<'_>) -> Result<()> {
        for ((d, a), b) in self.delta.iter_mut().zip(net.params()).zip(step.before) {
            *d = a - b;
        }
        self.path.accumulate(step.grad, &self.delta)
    }

    fn after_task(&mut self, net: &Network, task: &TaskDataset) -> Result<()> {
        let imp = si_consolidate(&self.path, &self.start, net.params(), self.xi, self.c)?;
        let omega = match self.state.take() {
            Some(prev) => prev.fisher.iter().zip(&imp).map(|(a, b)| a + b).collect(),
            None => imp,
        };
        self.state = Some(ConsolidatedTask {
            theta_star: net.params().to_vec(),
            fisher: omega,
            task_id: task.task_id(),
        });
        Ok(())
    }
}

/// Learning without forgetting: the network frozen at the start of each
/// task labels the new batches for every head seen so far.
#[derive(Clone, Debug)]
pub struct Lwf {
    lambda: f64,
    teacher: Option<Network>,
    seen: Vec<usize>,
}

impl Lwf {
    pub fn new(lambda: f64) -> Self {
        Lwf {
            lambda,
            teacher: None,
            seen: Vec::new(),
        }
    }
}

fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let cols = logits.cols();
    let mut out = vec![0.0; logits.len()];
    log_softmax_rows(logits.data(), cols, &mut out);
    out.iter_mut().for_each(|v| *v = libm::exp(*v));
    Tensor::matrix(logits.rows(), cols, out)
}

impl Strategy for Lwf {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Lwf
    }

    fn before_task(&mut self, net: &Network, _task: &TaskDataset) -> Result<()> {
        if !self.seen.is_empty() {
            self.teacher = Some(net.clone());
        }
        Ok(())
    }

    fn penalty(&mut self, g: &mut Graph, ctx: &StepContext<'_>) -> Result<Option<Var>> {
        let Some(teacher) = self.teacher.as_ref() else { return Ok(None) };
        if self.lambda == 0.0 {
            return Ok(None);
        }
        let current_head = ctx.net.head_index(ctx.task)?;
        let mut heads: Vec<(usize, usize)> = Vec::new();
        for &t in &self.seen {
            let h = ctx.net.head_index(t)?;
            if !heads.iter().any(|&(_, seen)| seen == h) {
                heads.push((t, h));
            }
        }
        let mut total: Option<Var> = None;
        for (t, h) in heads {
            let old = softmax_rows(&teacher.predict(ctx.inputs, t)?.logits)?;
            let new_logits = if h == current_head {
                ctx.forward.logits
            } else {
                let slot = ctx.net.head_slots()[h];
                g.linear(ctx.forward.embedding, ctx.theta, slot.offset, slot.fan_in, slot.fan_out)?
            };
            let term = lwf_penalty(g, &old, new_logits, self.lambda)?;
            total = Some(match total {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
        Ok(total)
    }

    fn after_task(&mut self, _net: &Network, task: &TaskDataset) -> Result<()> {
        self.seen.push(task.task_id());
        Ok(())
    }
}
