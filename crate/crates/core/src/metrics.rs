//! R-matrix bookkeeping and continual-learning scores.
//!
//! `R[i][j]` is the test accuracy on task `j` measured right after training
//! on task `i` finished. Rows are filled in order; only the lower triangle
//! including the diagonal is ever read.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::model::Network;

const EVAL_CHUNK: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct RMatrix {
    n: usize,
    cells: Vec<Option<f64>>,
    rows_done: usize,
}

impl RMatrix {
    pub fn new(n_tasks: usize) -> Self {
        RMatrix {
            n: n_tasks,
            cells: vec![None; n_tasks * n_tasks],
            rows_done: 0,
        }
    }

    /// Builds a matrix from its filled lower triangle (`rows[i].len() == i + 1`).
    pub fn from_lower(rows: &[Vec<f64>]) -> Result<Self> {
        let mut r = RMatrix::new(rows.len());
        for (i, row) in rows.iter().enumerate() {
            r.push_row(row)?;
            let _ = i;
        }
        Ok(r)
    }

    pub fn n_tasks(&self) -> usize {
        self.n
    }

    /// Number of completed rows.
    pub fn rows_done(&self) -> usize {
        self.rows_done
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i < self.n && j < self.n {
            self.cells[i * self.n + j]
        } else {
            None
        }
    }

    /// Appends the next row: accuracies on tasks `0..=i` after training on
    /// task `i`.
    pub fn push_row(&mut self, accuracies: &[f64]) -> Result<()> {
        let i = self.rows_done;
        if i >= self.n {
            return Err(Error::contract("R matrix is already complete"));
        }
        if accuracies.len() != i + 1 {
            return Err(Error::dim("R row", &[accuracies.len()], &[i + 1]));
        }
        if let Some(a) = accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::contract(format!("accuracy {a} outside [0, 1]")));
        }
        for (j, &a) in accuracies.iter().enumerate() {
            self.cells[i * self.n + j] = Some(a);
        }
        self.rows_done += 1;
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.rows_done == self.n
    }

    fn lower(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.n + j].expect("lower triangle filled")
    }

    fn require_complete(&self) -> Result<()> {
        if self.n == 0 || !self.is_complete() {
            return Err(Error::contract(format!(
                "R matrix incomplete: {} of {} rows filled",
                self.rows_done, self.n
            )));
        }
        Ok(())
    }

    /// CSV: one line per row, `n` comma-separated cells, unfilled cells empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if j > 0 {
                    out.push(',');
                }
                if let Some(v) = self.get(i, j) {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Mean of the lower triangle including the diagonal.
pub fn accuracy(r: &RMatrix) -> Result<f64> {
    r.require_complete()?;
    let n = r.n;
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..=i {
            sum += r.lower(i, j);
        }
    }
    Ok(sum / (n * (n + 1) / 2) as f64)
}

/// Mean change `R[i][j] - R[j][j]` over all `i > j`; zero for one task.
pub fn backward_transfer(r: &RMatrix) -> Result<f64> {
    r.require_complete()?;
    let n = r.n;
    if n < 2 {
        log::info!("backward transfer of a single-task stream is defined as 0");
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 1..n {
        for j in 0..i {
            sum += r.lower(i, j) - r.lower(j, j);
        }
    }
    Ok(sum / (n * (n - 1) / 2) as f64)
}

/// `1 - |min(0, bwt)|`.
pub fn remembering(bwt: f64) -> f64 {
    1.0 - bwt.min(0.0).abs()
}

/// `max(0, bwt)`.
pub fn positive_bwt(bwt: f64) -> f64 {
    bwt.max(0.0)
}

/// The four summary scores of a complete R matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub accuracy: f64,
    pub bwt: f64,
    pub remembering: f64,
    pub positive_bwt: f64,
}

impl Scores {
    pub fn of(r: &RMatrix) -> Result<Self> {
        let bwt = backward_transfer(r)?;
        Ok(Scores {
            accuracy: accuracy(r)?,
            bwt,
            remembering: remembering(bwt),
            positive_bwt: positive_bwt(bwt),
        })
    }
}

/// Fraction of test examples whose arg-max logit on the task's head equals
/// the label.
pub fn eval_task(net: &Network, test: &TaskDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::contract(format!("task {} has no test examples", test.task_id())));
    }
    let mut correct = 0usize;
    let positions: Vec<usize> = (0..test.len()).collect();
    for chunk in positions.chunks(EVAL_CHUNK) {
        let x = test.gather(chunk)?;
        let logits = net.predict(&x, test.task_id())?.logits;
        for (r, &i) in chunk.iter().enumerate() {
            if argmax(logits.row(r)) == test.labels()[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Index of the first maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
