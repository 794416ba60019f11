//! Embedding regularization with a weighted replay memory.

use alloc::vec::Vec;

use crate::data::TaskDataset;
use crate::error::Result;
use crate::memory::{ReplayMemory, Weighting};
use crate::model::{Architecture, Network};
use crate::optim::Optimizer;
use crate::rng::{stream, stream_rng, RunRng};
use crate::tensor::{Graph, Tensor, Var};

use super::{StepRecord, Strategy, StrategyKind, StrategyStats};

/// `lambda * mean_i d(h_i, embed(x_i))` with `d` the cosine dissimilarity.
/// Returns the loss and the per-row distances.
pub fn er_loss(g: &mut Graph, net: &Network, theta: Var, x: &Tensor, h: &Tensor, lambda: f64) -> Result<(Var, Var)> {
    let xv = g.constant(x.clone());
    let current = net.embed(g, theta, xv)?;
    let stored = g.constant(h.clone());
    let d = g.cosine_distance_rows(current, stored)?;
    let m = g.mean(d);
    Ok((g.scale(m, lambda), d))
}

/// Draws `reg_batch` memory entries, takes one optimizer step on the
/// embedding loss alone and reweights the memory. Returns the mean distance
/// measured before the step, or `None` when the memory is empty or
/// `lambda` is zero (nothing is touched then).
pub fn er_regularize(
    net: &mut Network,
    mem: &mut ReplayMemory,
    lambda: f64,
    reg_batch: usize,
    opt: &mut Optimizer,
    rng: &mut RunRng,
    current_batch: &Tensor,
) -> Result<Option<f64>> {
    if mem.is_empty() || lambda == 0.0 {
        return Ok(None);
    }
    let drawn = mem.sample(reg_batch, rng);
    let x = mem.gather_inputs(&drawn)?;
    let h = mem.gather_embeddings(&drawn)?;
    let mut g = Graph::new();
    let theta = g.param(net.flat_params());
    let (loss, d) = er_loss(&mut g, net, theta, &x, &h, lambda)?;
    let distances: Vec<f64> = g.value(d).data().iter().map(|v| v.max(0.0)).collect();
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    let dead = (0..h.rows())
        .filter(|&i| h.row(i).iter().all(|&v| v == 0.0))
        .count();
    if dead > 0 {
        log::debug!("{dead} stored embeddings have zero norm; their distance counts as 1");
    }
    g.backward(loss)?;
    let grad = g.take_grad(theta).expect("theta is tracked").into_data();
    opt.step(net.params_mut(), &grad)?;
    match mem.weighting() {
        Weighting::Uniform => {}
        Weighting::Frequency => mem.reweight_frequency(),
        Weighting::Distance => mem.reweight_distance(&drawn, &distances)?,
        Weighting::PretrainedReference => mem.reweight_pretrained_reference(current_batch, &drawn)?,
    }
    Ok(Some(mean))
}

#[derive(Clone, Debug)]
pub struct EmbeddingRegularization {
    lambda: f64,
    reg_batch: usize,
    memory: ReplayMemory,
    rng: RunRng,
    stats: StrategyStats,
}

impl EmbeddingRegularization {
    pub fn new(
        lambda: f64,
        memory_per_task: usize,
        reg_batch: usize,
        weighting: Weighting,
        arch: &Architecture,
        seed: u64,
    ) -> Result<Self> {
        let mut memory = ReplayMemory::new(memory_per_task, weighting)?;
        if weighting == Weighting::PretrainedReference {
            let mut rng = stream_rng(seed, stream::REFERENCE_NET);
            memory = memory.with_reference(Network::new(arch.clone(), &mut rng));
        }
        Ok(EmbeddingRegularization {
            lambda,
            reg_batch,
            memory,
            rng: stream_rng(seed, stream::MEMORY),
            stats: StrategyStats::default(),
        })
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }
}

impl Strategy for EmbeddingRegularization {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Er
    }

    fn after_step(&mut self, net: &mut Network, opt: &mut Optimizer, step: &StepRecord<'_>) -> Result<()> {
        let r = er_regularize(
            net,
            &mut self.memory,
            self.lambda,
            self.reg_batch,
            opt,
            &mut self.rng,
            step.inputs,
        )?;
        if let Some(d) = r {
            self.stats.er_steps += 1;
            self.stats.er_distances.push(d);
        }
        Ok(())
    }

    fn after_task(&mut self, net: &Network, task: &TaskDataset) -> Result<()> {
        self.memory.commit_task(net, task, &mut self.rng)?;
        Ok(())
    }

    fn stats(&self) -> StrategyStats {
        self.stats.clone()
    }

    fn replay_memory(&self) -> Option<&ReplayMemory> {
        Some(&self.memory)
    }
}
