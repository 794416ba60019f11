//! Feed-forward ReLU classifier with shared or per-task output heads.
//!
//! All weights live in one flat parameter vector. The layout is fixed:
//! for each hidden layer in order, the `fan_in x fan_out` row-major weight
//! followed by the `fan_out` bias; then each head in head order, weight
//! followed by bias. Gradients returned by the tape for the parameter leaf
//! use the same layout.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{affine, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// One head used by every task.
    Shared,
    /// One private head per task; the task id selects it.
    PerTask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadPolicy {
    pub mode: HeadMode,
    pub classes_per_head: usize,
}

impl HeadPolicy {
    pub fn shared(classes: usize) -> Self {
        HeadPolicy {
            mode: HeadMode::Shared,
            classes_per_head: classes,
        }
    }

    pub fn per_task(classes: usize) -> Self {
        HeadPolicy {
            mode: HeadMode::PerTask,
            classes_per_head: classes,
        }
    }
}

/// Architecture descriptor; enough to rebuild a [`Network`] from a flat
/// parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub head: HeadPolicy,
    pub n_heads: usize,
}

impl Architecture {
    /// `n_tasks` sizes the head list in per-task mode; shared mode has one head.
    pub fn new(input_dim: usize, hidden: Vec<usize>, head: HeadPolicy, n_tasks: usize) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) || head.classes_per_head == 0 {
            return Err(Error::config("layer widths must be positive"));
        }
        let n_heads = match head.mode {
            HeadMode::Shared => 1,
            HeadMode::PerTask => n_tasks,
        };
        if n_heads == 0 {
            return Err(Error::config("per-task heads need at least one task"));
        }
        Ok(Architecture {
            input_dim,
            hidden,
            head,
            n_heads,
        })
    }

    /// Width of the embedding (the input of every head).
    pub fn embedding_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }

    pub fn param_count(&self) -> usize {
        let (hidden, heads) = self.slots();
        hidden.iter().chain(&heads).map(LayerSlot::len).sum()
    }

    fn slots(&self) -> (Vec<LayerSlot>, Vec<LayerSlot>) {
        let mut offset = 0;
        let mut fan_in = self.input_dim;
        let mut hidden = Vec::with_capacity(self.hidden.len());
        for &fan_out in &self.hidden {
            let slot = LayerSlot {
                offset,
                fan_in,
                fan_out,
            };
            offset += slot.len();
            fan_in = fan_out;
            hidden.push(slot);
        }
        let mut heads = Vec::with_capacity(self.n_heads);
        for _ in 0..self.n_heads {
            let slot = LayerSlot {
                offset,
                fan_in,
                fan_out: self.head.classes_per_head,
            };
            offset += slot.len();
            heads.push(slot);
        }
        (hidden, heads)
    }
}

/// Location of one affine layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSlot {
    pub offset: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerSlot {
    pub fn len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight_range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> core::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    fn apply(&self, params: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        affine(x, rows, &params[self.weight_range()], &params[self.bias_range()])
    }
}

/// Tape handles produced by [`Network::forward`].
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub logits: Var,
    pub embedding: Var,
}

/// Values produced by [`Network::predict`].
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Tensor,
    pub embedding: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    arch: Architecture,
    hidden: Vec<LayerSlot>,
    heads: Vec<LayerSlot>,
    params: Vec<f64>,
}

impl Network {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut net = Network::zeros(arch);
        for slot in net.hidden.iter().chain(&net.heads) {
            let bound = libm::sqrt(6.0 / (slot.fan_in + slot.fan_out) as f64);
            for w in &mut net.params[slot.weight_range()] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        net
    }

    pub fn zeros(arch: Architecture) -> Self {
        let (hidden, heads) = arch.slots();
        let params = alloc::vec![0.0; arch.param_count()];
        Network {
            arch,
            hidden,
            heads,
            params,
        }
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        let mut net = Network::zeros(arch);
        net.set_params(&params)?;
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn hidden_slots(&self) -> &[LayerSlot] {
        &self.hidden
    }

    pub fn head_slots(&self) -> &[LayerSlot] {
        &self.heads
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn flat_params(&self) -> Tensor {
        Tensor::vector(self.params.clone())
    }

    pub fn set_flat_params(&mut self, v: &Tensor) -> Result<()> {
        if v.shape().len() != 1 {
            return Err(Error::dim("set_flat_params", v.shape(), &[self.params.len()]));
        }
        self.set_params(v.data())
    }

    pub fn set_params(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.params.len() {
            return Err(Error::dim("set_flat_params", &[v.len()], &[self.params.len()]));
        }
        self.params.copy_from_slice(v);
        Ok(())
    }

    /// Index of the head serving `task`.
    pub fn head_index(&self, task: usize) -> Result<usize> {
        match self.arch.head.mode {
            HeadMode::Shared => Ok(0),
            HeadMode::PerTask if task < self.heads.len() => Ok(task),
            HeadMode::PerTask => Err(Error::MissingHead { task }),
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.shape()[1] != self.arch.input_dim {
            return Err(Error::dim("forward", x.shape(), &[self.arch.input_dim]));
        }
        Ok(())
    }

    /// Records the hidden stack on the tape; the result is the embedding.
    pub fn embed(&self, g: &mut Graph, theta: Var, x: Var) -> Result<Var> {
        self.check_input(g.value(x))?;
        let mut h = x;
        for slot in &self.hidden {
            let z = g.linear(h, theta, slot.offset, slot.fan_in, slot.fan_out)?;
            h = g.relu(z);
        }
        Ok(h)
    }

    /// Records a full forward pass. `theta` must be a leaf holding a
    /// parameter vector laid out like [`Network::params`].
    pub fn forward(&self, g: &mut Graph, theta: Var, x: Var, task: usize) -> Result<Forward> {
        let head = self.heads[self.head_index(task)?];
        let embedding = self.embed(g, theta, x)?;
        let logits = g.linear(embedding, theta, head.offset, head.fan_in, head.fan_out)?;
        Ok(Forward { logits, embedding })
    }

    /// Embedding of every row of `x`, computed without a tape.
    pub fn embeddings(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let rows = x.rows();
        let mut h = x.data().to_vec();
        let mut width = self.arch.input_dim;
        for slot in &self.hidden {
            h = slot.apply(&self.params, &h, rows);
            h.iter_mut().for_each(|v| *v = v.max(0.0));
            width = slot.fan_out;
        }
        Tensor::matrix(rows, width, h)
    }

    /// Logits and embedding computed without a tape.
    pub fn predict(&self, x: &Tensor, task: usize) -> Result<Prediction> {
        let head = self.heads[self.head_index(task)?];
        let embedding = self.embeddings(x)?;
        let rows = embedding.rows();
        let logits = head.apply(&self.params, embedding.data(), rows);
        Ok(Prediction {
            logits: Tensor::matrix(rows, head.fan_out, logits)?,
            embedding,
        })
    }
}
