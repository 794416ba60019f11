//! Gradient projection against stored examples: GEM and A-GEM.

use alloc::vec::Vec;

use crate::data::{sample_without_replacement, TaskDataset};
use crate::error::Result;
use crate::model::Network;
use crate::qpsolve::{solve_nnqp, NnQp, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::rng::{stream, stream_rng, RunRng};
use crate::tensor::Tensor;

use super::{dot, grouped_loss_gradient, StepContext, Strategy, StrategyKind, StrategyStats};

/// Fixed-size example store per finished task.
#[derive(Clone, Debug, Default)]
pub struct EpisodicStore {
    tasks: Vec<(usize, Tensor, Vec<usize>)>,
}

impl EpisodicStore {
    /// Keeps `budget` training examples of `task` chosen uniformly.
    pub fn commit(&mut self, task: &TaskDataset, budget: usize, rng: &mut RunRng) -> Result<()> {
        let picks = sample_without_replacement(task.len(), budget, rng);
        self.tasks.push((task.task_id(), task.gather(&picks)?, task.gather_labels(&picks)));
        Ok(())
    }

    pub fn tasks(&self) -> &[(usize, Tensor, Vec<usize>)] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.iter().map(|t| t.2.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GemProjection {
    /// Gradient to apply.
    pub grad: Vec<f64>,
    /// Some constraint was violated and the QP answer was applied.
    pub projected: bool,
    /// False when the QP did not converge and `g'` was kept.
    pub converged: bool,
    /// `<grad, g_t>` for each past-task gradient.
    pub alignments: Vec<f64>,
}

/// Keeps `g'` when it agrees with every past gradient; otherwise applies
/// `G^T v* + g'` with `v*` solving the non-negative dual.
pub fn gem_project(g_prime: &[f64], past: &[Vec<f64>]) -> Result<GemProjection> {
    let dots: Vec<f64> = past.iter().map(|g| dot(g, g_prime)).collect();
    if dots.iter().all(|&d| d >= 0.0) {
        return Ok(GemProjection {
            grad: g_prime.to_vec(),
            projected: false,
            converged: true,
            alignments: dots,
        });
    }
    let qp = NnQp::from_gradients(past, g_prime)?;
    let sol = solve_nnqp(&qp, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    if !sol.converged {
        log::warn!(
            "GEM dual did not converge (KKT residual {:e}); applying the raw gradient",
            sol.kkt_residual
        );
        return Ok(GemProjection {
            grad: g_prime.to_vec(),
            projected: false,
            converged: false,
            alignments: dots,
        });
    }
    let mut grad = g_prime.to_vec();
    for (g, &v) in past.iter().zip(&sol.v) {
        if v != 0.0 {
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += v * b);
        }
    }
    let alignments = past.iter().map(|g| dot(g, &grad)).collect();
    Ok(GemProjection {
        grad,
        projected: true,
        converged: true,
        alignments,
    })
}

/// Single-constraint projection. Returns the gradient to apply and whether
/// it differs from `g_prime`.
pub fn agem_project(g_prime: &[f64], g_ref: &[f64]) -> (Vec<f64>, bool) {
    let d = dot(g_prime, g_ref);
    let nn = dot(g_ref, g_ref);
    if d >= 0.0 || nn == 0.0 {
        return (g_prime.to_vec(), false);
    }
    let s = d / nn;
    (g_prime.iter().zip(g_ref).map(|(a, b)| a - s * b).collect(), true)
}

/// Gradient episodic memory with the full per-task store as constraints.
#[derive(Clone, Debug)]
pub struct Gem {
    budget: usize,
    rng: RunRng,
    store: EpisodicStore,
    stats: StrategyStats,
}

impl Gem {
    pub fn new(memory_per_task: usize, seed: u64) -> Self {
        Gem {
            budget: memory_per_task,
            rng: stream_rng(seed, stream::MEMORY),
            store: EpisodicStore::default(),
            stats: StrategyStats::default(),
        }
    }

    pub fn store(&self) -> &EpisodicStore {
        &self.store
    }
}

impl Strategy for Gem {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Gem
    }

    fn project(&mut self, ctx: &StepContext<'_>, grad: &mut [f64]) -> Result<()> {
        if self.store.is_empty() {
            return Ok(());
        }
        let mut past = Vec::with_capacity(self.store.tasks.len());
        for (t, x, y) in &self.store.tasks {
            past.push(grouped_loss_gradient(ctx.net, &[(*t, x, y)])?);
        }
        let out = gem_project(grad, &past)?;
        self.stats.checked_steps += 1;
        if out.projected {
            self.stats.projected_steps += 1;
        }
        if !out.converged {
            self.stats.qp_failures += 1;
        }
        for &a in &out.alignments {
            self.stats.record_alignment(a);
        }
        grad.copy_from_slice(&out.grad);
        Ok(())
    }

    fn after_task(&mut self, _net: &Network, task: &TaskDataset) -> Result<()> {
        self.store.commit(task, self.budget, &mut self.rng)
    }

    fn stats(&self) -> StrategyStats {
        self.stats.clone()
    }
}

/// A-GEM: one constraint from a batch pooled over all stored tasks.
#[derive(Clone, Debug)]
pub struct AGem {
    budget: usize,
    batch: usize,
    rng: RunRng,
    store: EpisodicStore,
    stats: StrategyStats,
}

impl AGem {
    pub fn new(memory_per_task: usize, reference_batch: usize, seed: u64) -> Self {
        AGem {
            budget: memory_per_task,
            batch: reference_batch,
            rng: stream_rng(seed, stream::MEMORY),
            store: EpisodicStore::default(),
            stats: StrategyStats::default(),
        }
    }

    /// Gradient of the mean loss over a pooled sample of the store.
    fn reference_gradient(&mut self, net: &Network) -> Result<Vec<f64>> {
        let total = self.store.len();
        let mut picks = sample_without_replacement(total, self.batch, &mut self.rng);
        picks.sort_unstable();
        let mut groups: Vec<(usize, Tensor, Vec<usize>)> = Vec::new();
        let mut base = 0;
        let mut k = 0;
        for (t, x, y) in &self.store.tasks {
            let mut rows = Vec::new();
            while k < picks.len() && picks[k] < base + y.len() {
                rows.push(picks[k] - base);
                k += 1;
            }
            if !rows.is_empty() {
                let ys = rows.iter().map(|&r| y[r]).collect();
                groups.push((*t, x.gather_rows(&rows)?, ys));
            }
            base += y.len();
        }
        let refs: Vec<(usize, &Tensor, &[usize])> = groups.iter().map(|(t, x, y)| (*t, x, y.as_slice())).collect();
        grouped_loss_gradient(net, &refs)
    }
}

impl Strategy for AGem {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Agem
    }

    fn project(&mut self, ctx: &StepContext<'_>, grad: &mut [f64]) -> Result<()> {
        if self.store.is_empty() {
            return Ok(());
        }
        let g_ref = self.reference_gradient(ctx.net)?;
        let (out, projected) = agem_project(grad, &g_ref);
        self.stats.checked_steps += 1;
        if projected {
            self.stats.projected_steps += 1;
        }
        self.stats.record_alignment(dot(&out, &g_ref));
        grad.copy_from_slice(&out);
        Ok(())
    }

    fn after_task(&mut self, _net: &Network, task: &TaskDataset) -> Result<()> {
        self.store.commit(task, self.budget, &mut self.rng)
    }

    fn stats(&self) -> StrategyStats {
        self.stats.clone()
    }
}
