//! External memory of `(x, t, h, p)` quadruplets for embedding
//! regularization.
//!
//! Each entry keeps an input, its task id, the embedding the network
//! produced for it when training on that task finished, and an unnormalized
//! sampling weight. Draws are made with replacement with probability
//! `p_m / sum(p)`. Four weighting schemes are supported: uniform (weights
//! never change), frequency (`1 / (1 + picks)`), distance (the last measured
//! embedding drift) and pretrained reference (mean cosine dissimilarity to
//! the current batch under a frozen, untrained network).

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_without_replacement, TaskDataset};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::{cosine_dissimilarity, Tensor};

/// Floor added to distance-derived weights so no entry becomes unreachable.
pub const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    Frequency,
    Distance,
    PretrainedReference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry {
    pub x: Vec<f64>,
    pub task: usize,
    pub h: Vec<f64>,
    pub p: f64,
    pub pick_count: u64,
    pub last_distance: Option<f64>,
}

/// What [`ReplayMemory::commit_task`] stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommitOutcome {
    pub stored: usize,
    /// The budget exceeded the dataset, so every example was stored.
    pub truncated: bool,
}

#[derive(Clone, Debug)]
pub struct ReplayMemory {
    entries: Vec<MemoryEntry>,
    per_task_budget: usize,
    weighting: Weighting,
    reference: Option<Network>,
}

impl ReplayMemory {
    pub fn new(per_task_budget: usize, weighting: Weighting) -> Result<Self> {
        if per_task_budget == 0 {
            return Err(Error::config("memory budget per task must be positive"));
        }
        Ok(ReplayMemory {
            entries: Vec::new(),
            per_task_budget,
            weighting,
            reference: None,
        })
    }

    /// Attaches the frozen network used by the pretrained-reference scheme.
    pub fn with_reference(mut self, reference: Network) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn per_task_budget(&self) -> usize {
        self.per_task_budget
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn reference(&self) -> Option<&Network> {
        self.reference.as_ref()
    }

    pub fn count_for_task(&self, task: usize) -> usize {
        self.entries.iter().filter(|e| e.task == task).count()
    }

    /// Stores up to `per_task_budget` examples of a finished task, chosen
    /// uniformly without replacement, each with the embedding `net` gives
    /// it now and weight 1.
    pub fn commit_task<R: Rng + ?Sized>(
        &mut self,
        net: &Network,
        task: &TaskDataset,
        rng: &mut R,
    ) -> Result<CommitOutcome> {
        let t = task.task_id();
        if self.count_for_task(t) > 0 {
            return Err(Error::contract(alloc::format!(
                "task {t} was already committed to memory"
            )));
        }
        let truncated = self.per_task_budget > task.len();
        if truncated {
            log::warn!(
                "memory budget {} exceeds the {} examples of task {t}; storing all of them",
                self.per_task_budget,
                task.len()
            );
        }
        let picks = sample_without_replacement(task.len(), self.per_task_budget, rng);
        if picks.is_empty() {
            return Ok(CommitOutcome {
                stored: 0,
                truncated,
            });
        }
        let x = task.gather(&picks)?;
        let h = net.embeddings(&x)?;
        for i in 0..picks.len() {
            self.entries.push(MemoryEntry {
                x: x.row(i).to_vec(),
                task: t,
                h: h.row(i).to_vec(),
                p: 1.0,
                pick_count: 0,
                last_distance: None,
            });
        }
        Ok(CommitOutcome {
            stored: picks.len(),
            truncated,
        })
    }

    /// Sampling distribution `p_m / sum(p)`.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.entries.iter().map(|e| e.p).sum();
        self.entries.iter().map(|e| e.p / total).collect()
    }

    /// `k` indices drawn with replacement proportionally to the weights.
    /// Each draw increments the entry's pick count. An empty memory or
    /// `k == 0` yields no draws.
    pub fn sample<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> Vec<usize> {
        if self.entries.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut cumulative = Vec::with_capacity(self.entries.len());
        let mut acc = 0.0;
        for e in &self.entries {
            acc += e.p;
            cumulative.push(acc);
        }
        let last = self.entries.len() - 1;
        let mut drawn = Vec::with_capacity(k);
        for _ in 0..k {
            let u = rng.gen::<f64>() * acc;
            let i = cumulative.partition_point(|&c| c <= u).min(last);
            self.entries[i].pick_count += 1;
            drawn.push(i);
        }
        drawn
    }

    /// Frequency scheme: `p_i = 1 / (1 + pick_count_i)` for every entry.
    pub fn reweight_frequency(&mut self) {
        for e in &mut self.entries {
            e.p = 1.0 / (1.0 + e.pick_count as f64);
        }
    }

    /// Distance scheme: each drawn entry takes its measured embedding
    /// distance (plus [`WEIGHT_FLOOR`]) as its new weight.
    pub fn reweight_distance(&mut self, drawn: &[usize], distances: &[f64]) -> Result<()> {
        if drawn.len() != distances.len() {
            return Err(Error::dim("reweight_distance", &[drawn.len()], &[distances.len()]));
        }
        if let Some(d) = distances.iter().find(|d| !(**d >= 0.0)) {
            return Err(Error::contract(alloc::format!(
                "embedding distance must be non-negative, got {d}"
            )));
        }
        for (&i, &d) in drawn.iter().zip(distances) {
            let e = self.entry_mut(i)?;
            e.p = d + WEIGHT_FLOOR;
            e.last_distance = Some(d);
        }
        Ok(())
    }

    /// Pretrained-reference scheme: each drawn entry's weight becomes the
    /// mean cosine dissimilarity between its reference embedding and the
    /// reference embeddings of the current batch (plus [`WEIGHT_FLOOR`]).
    pub fn reweight_pretrained_reference(&mut self, current_batch: &Tensor, drawn: &[usize]) -> Result<()> {
        let reference = self
            .reference
            .as_ref()
            .ok_or_else(|| Error::config("pretrained-reference weighting needs a reference network"))?;
        if drawn.is_empty() || current_batch.rows() == 0 {
            return Ok(());
        }
        let batch_phi = reference.embeddings(current_batch)?;
        let mut xs = Vec::with_capacity(drawn.len() * current_batch.cols());
        for &i in drawn {
            let e = self.entries.get(i).ok_or(Error::Index {
                op: "reweight_pretrained_reference",
                index: i,
                bound: self.entries.len(),
            })?;
            xs.extend_from_slice(&e.x);
        }
        let drawn_phi = reference.embeddings(&Tensor::matrix(drawn.len(), current_batch.cols(), xs)?)?;
        let b = batch_phi.rows();
        for (r, &i) in drawn.iter().enumerate() {
            let mean = (0..b)
                .map(|j| cosine_dissimilarity(drawn_phi.row(r), batch_phi.row(j)))
                .sum::<f64>()
                / b as f64;
            // rounding can leave identical vectors a hair below zero
            self.entries[i].p = mean.max(0.0) + WEIGHT_FLOOR;
        }
        Ok(())
    }

    fn entry_mut(&mut self, i: usize) -> Result<&mut MemoryEntry> {
        let bound = self.entries.len();
        self.entries.get_mut(i).ok_or(Error::Index {
            op: "memory entry",
            index: i,
            bound,
        })
    }

    /// Inputs of the given entries as a `[k x D]` tensor.
    pub fn gather_inputs(&self, drawn: &[usize]) -> Result<Tensor> {
        let dim = self.entries.first().map_or(0, |e| e.x.len());
        let mut xs = Vec::with_capacity(drawn.len() * dim);
        for &i in drawn {
            xs.extend_from_slice(&self.entries[i].x);
        }
        Tensor::matrix(drawn.len(), dim, xs)
    }

    /// Stored embeddings of the given entries as a `[k x H]` tensor.
    pub fn gather_embeddings(&self, drawn: &[usize]) -> Result<Tensor> {
        let dim = self.entries.first().map_or(0, |e| e.h.len());
        let mut hs = Vec::with_capacity(drawn.len() * dim);
        for &i in drawn {
            hs.extend_from_slice(&self.entries[i].h);
        }
        Tensor::matrix(drawn.len(), dim, hs)
    }
}
