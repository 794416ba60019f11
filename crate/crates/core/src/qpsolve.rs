//! Dense non-negative quadratic programs
//! `min_v 0.5 v'Qv + b'v  s.t.  v >= 0` with `Q` positive semidefinite.
//!
//! This is the dual of the GEM projection, where `Q = G G'` and `b = G g`
//! for past-task gradients `G` and the proposed gradient `g`. The number of
//! variables equals the number of past tasks, so everything is dense.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 10_000;

const SYMMETRY_TOL: f64 = 1e-10;
const POLISH_EVERY: usize = 10;
const NONMONOTONE_WINDOW: usize = 10;
const ARMIJO: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct NnQp {
    q: Vec<f64>,
    b: Vec<f64>,
    n: usize,
}

impl NnQp {
    /// `q` is `n x n` row-major and must be symmetric.
    pub fn new(q: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = b.len();
        if n == 0 {
            return Err(Error::contract("a QP needs at least one variable"));
        }
        if q.len() != n * n {
            return Err(Error::dim("nnqp", &[q.len()], &[n, n]));
        }
        for i in 0..n {
            for j in 0..i {
                let (a, c) = (q[i * n + j], q[j * n + i]);
                if (a - c).abs() > SYMMETRY_TOL * (1.0 + a.abs().max(c.abs())) {
                    return Err(Error::contract(format!(
                        "Q is not symmetric at ({i}, {j}): {a} vs {c}"
                    )));
                }
            }
        }
        Ok(NnQp { q, b, n })
    }

    /// GEM dual: `Q = G G'`, `b = G g` where the rows of `G` are `past`.
    pub fn from_gradients(past: &[Vec<f64>], g: &[f64]) -> Result<Self> {
        let n = past.len();
        let mut q = vec![0.0; n * n];
        let mut b = vec![0.0; n];
        for i in 0..n {
            if past[i].len() != g.len() {
                return Err(Error::dim("gem dual", &[past[i].len()], &[g.len()]));
            }
            b[i] = dot(&past[i], g);
            for j in 0..=i {
                let v = dot(&past[i], &past[j]);
                q[i * n + j] = v;
                q[j * n + i] = v;
            }
        }
        NnQp::new(q, b)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// `Q v + b`.
    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| dot(&self.q[i * self.n..(i + 1) * self.n], v) + self.b[i])
            .collect()
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        let qv: f64 = (0..self.n)
            .map(|i| v[i] * dot(&self.q[i * self.n..(i + 1) * self.n], v))
            .sum();
        0.5 * qv + dot(&self.b, v)
    }

    /// Largest violation of the KKT conditions: negativity of `v`,
    /// negativity of `Qv + b`, and `|v_i (Qv + b)_i|`.
    pub fn kkt_residual(&self, v: &[f64]) -> f64 {
        let grad = self.gradient(v);
        v.iter()
            .zip(&grad)
            .map(|(&x, &g)| (-x).max(-g).max((x * g).abs()).max(0.0))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub v: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Spectral projected gradient on the non-negative orthant, starting from
/// `v = 0`: Barzilai-Borwein step lengths with a nonmonotone Armijo line
/// search along the projected direction. Every few iterations the current
/// support is polished by solving its equality-constrained system exactly;
/// the polished point is kept only if it lowers the KKT residual. When
/// `max_iter` runs out, the iterate with the lowest residual is returned
/// with `converged == false`.
pub fn solve_nnqp(qp: &NnQp, tol: f64, max_iter: usize) -> Result<QpSolution> {
    if !(tol > 0.0) {
        return Err(Error::config("QP tolerance must be positive"));
    }
    let n = qp.n;
    let mut v = vec![0.0; n];
    let mut best = v.clone();
    let mut best_r = qp.kkt_residual(&v);
    if best_r <= tol {
        return Ok(QpSolution {
            v,
            converged: true,
            iterations: 0,
            kkt_residual: best_r,
        });
    }

    // Gershgorin bound on the largest eigenvalue
    let lipschitz = (0..n)
        .map(|i| qp.q[i * n..(i + 1) * n].iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if lipschitz == 0.0 {
        // Q = 0 and some b_i < 0: unbounded below along e_i
        return Err(Error::contract("QP is unbounded: zero curvature with negative linear term"));
    }
    let base_step = 1.0 / lipschitz;
    let mut step = base_step;
    let mut recent = [qp.objective(&v); NONMONOTONE_WINDOW];

    for it in 1..=max_iter {
        let grad = qp.gradient(&v);
        let d: Vec<f64> = v
            .iter()
            .zip(&grad)
            .map(|(&x, &g)| (x - step * g).max(0.0) - x)
            .collect();
        let gd = dot(&grad, &d);
        let qd = matvec(&qp.q, &d, n);
        let dqd = dot(&d, &qd);
        let f = qp.objective(&v);
        let f_ref = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // the objective along d is an exact quadratic in t
        let mut t = 1.0;
        while t > 1e-12 && f + t * gd + 0.5 * t * t * dqd > f_ref + ARMIJO * t * gd {
            t *= 0.5;
        }
        let s: Vec<f64> = d.iter().map(|x| t * x).collect();
        for (x, si) in v.iter_mut().zip(&s) {
            *x = (*x + si).max(0.0);
        }
        recent[it % NONMONOTONE_WINDOW] = qp.objective(&v);
        let ss = dot(&s, &s);
        if ss > 0.0 {
            let sy = t * t * dqd;
            step = if sy > 0.0 {
                (ss / sy).clamp(base_step * 1e-6, base_step * 1e12)
            } else {
                base_step
            };
        }

        let r = qp.kkt_residual(&v);
        if r < best_r {
            best_r = r;
            best.copy_from_slice(&v);
        }
        if it % POLISH_EVERY == 0 || ss == 0.0 || best_r <= tol {
            if let Some((cand, cr)) = polish(qp, &v) {
                if cr < best_r {
                    best_r = cr;
                    best.copy_from_slice(&cand);
                    v = cand;
                    recent = [qp.objective(&v); NONMONOTONE_WINDOW];
                }
            }
        }
        if best_r <= tol {
            return Ok(QpSolution {
                v: best,
                converged: true,
                iterations: it,
                kkt_residual: best_r,
            });
        }
    }
    log::warn!("nnqp: no convergence after {max_iter} iterations (KKT residual {best_r:e})");
    Ok(QpSolution {
        v: best,
        converged: false,
        iterations: max_iter,
        kkt_residual: best_r,
    })
}

/// Exact solve on the support suggested by `v`: the positive coordinates,
/// optionally widened by coordinates whose gradient pulls them positive.
/// Coordinates that come back non-positive are dropped and the reduced
/// system is solved again.
fn polish(qp: &NnQp, v: &[f64]) -> Option<(Vec<f64>, f64)> {
    let grad = qp.gradient(v);
    let positive: Vec<usize> = (0..qp.n).filter(|&i| v[i] > 0.0).collect();
    let widened: Vec<usize> = (0..qp.n).filter(|&i| v[i] > 0.0 || grad[i] < 0.0).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mut support in [positive, widened] {
        while !support.is_empty() {
            let k = support.len();
            let mut a = vec![0.0; k * k];
            let mut rhs = vec![0.0; k];
            for (r, &i) in support.iter().enumerate() {
                rhs[r] = -qp.b[i];
                for (c, &j) in support.iter().enumerate() {
                    a[r * k + c] = qp.q[i * qp.n + j];
                }
            }
            let Some(x) = solve_dense(a, rhs, k) else { break };
            if x.iter().any(|&xi| !(xi > 0.0)) {
                support = support.iter().zip(&x).filter(|(_, &xi)| xi > 0.0).map(|(&i, _)| i).collect();
                continue;
            }
            let mut cand = vec![0.0; qp.n];
            for (r, &i) in support.iter().enumerate() {
                cand[i] = x[r];
            }
            let res = qp.kkt_residual(&cand);
            if best.as_ref().map_or(true, |(_, br)| res < *br) {
                best = Some((cand, res));
            }
            break;
        }
    }
    best
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col].abs() <= 1e-13 * scale {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                a.swap(pivot * n + c, col * n + c);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f != 0.0 {
                for c in col..n {
                    a[row * n + c] -= f * a[col * n + c];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| a[row * n + c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    Some(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(q: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| dot(&q[i * n..(i + 1) * n], v)).collect()
}
