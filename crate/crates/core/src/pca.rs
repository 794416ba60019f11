//! Principal components by power iteration with deflation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

const MAX_ITER: usize = 10_000;
const TOL: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    mean: Vec<f64>,
    /// Unit-norm, mutually orthogonal, by decreasing variance.
    components: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl Pca {
    /// Fits the top `k` components of the rows of `x` (`n x d`, `n >= 1`).
    pub fn fit(x: &Tensor, k: usize) -> Result<Self> {
        if x.shape().len() != 2 || x.rows() == 0 {
            return Err(Error::contract("PCA needs a non-empty matrix"));
        }
        let (n, d) = (x.rows(), x.cols());
        if k == 0 || k > d {
            return Err(Error::config(format!("cannot fit {k} components in {d} dimensions")));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut centered = x.data().to_vec();
        for row in centered.chunks_mut(d) {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        let mut cov = vec![0.0; d * d];
        gemm(d, n, d, &centered, true, &centered, false, 0.0, &mut cov);
        cov.iter_mut().for_each(|c| *c /= n as f64);

        let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut variances = Vec::with_capacity(k);
        for _ in 0..k {
            let (v, lambda) = leading_eigenvector(&cov, d, &components);
            // deflate
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] -= lambda * v[i] * v[j];
                }
            }
            components.push(v);
            variances.push(lambda.max(0.0));
        }
        Ok(Pca {
            mean,
            components,
            variances,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Coordinates of each row in the component basis, `n x k`.
    pub fn project(&self, x: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        if x.shape().len() != 2 || x.cols() != d {
            return Err(Error::dim("pca project", x.shape(), &[x.rows(), d]));
        }
        let k = self.components.len();
        let mut out = Vec::with_capacity(x.rows() * k);
        for i in 0..x.rows() {
            let row = x.row(i);
            for c in &self.components {
                out.push(row.iter().zip(&self.mean).zip(c).map(|((a, m), w)| (a - m) * w).sum());
            }
        }
        Tensor::matrix(x.rows(), k, out)
    }

    /// Maps projected coordinates back into the input space.
    pub fn reconstruct(&self, coords: &Tensor) -> Result<Tensor> {
        let (d, k) = (self.mean.len(), self.components.len());
        if coords.shape().len() != 2 || coords.cols() != k {
            return Err(Error::dim("pca reconstruct", coords.shape(), &[coords.rows(), k]));
        }
        let mut out = Vec::with_capacity(coords.rows() * d);
        for i in 0..coords.rows() {
            let mut r = self.mean.clone();
            for (&a, c) in coords.row(i).iter().zip(&self.components) {
                for (o, w) in r.iter_mut().zip(c) {
                    *o += a * w;
                }
            }
            out.extend(r);
        }
        Tensor::matrix(coords.rows(), d, out)
    }
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
        v.iter_mut().zip(b).for_each(|(a, c)| *a -= p * c);
    }
}

/// Start vector: the largest column of `c` (it lies in the range of `c`),
/// falling back to the first basis vector not spanned by `found`.
fn start_vector(c: &[f64], d: usize, found: &[Vec<f64>]) -> Vec<f64> {
    let mut best = (0.0, 0);
    for j in 0..d {
        let s: f64 = (0..d).map(|i| c[i * d + j] * c[i * d + j]).sum();
        if s > best.0 {
            best = (s, j);
        }
    }
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    if best.0 > 0.0 {
        candidates.push((0..d).map(|i| c[i * d + best.1]).collect());
    }
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        candidates.push(e);
    }
    for mut v in candidates {
        orthogonalize(&mut v, found);
        orthogonalize(&mut v, found);
        let nv = norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            return v;
        }
    }
    unreachable!("fewer components than dimensions")
}

fn leading_eigenvector(c: &[f64], d: usize, found: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let mut v = start_vector(c, d, found);
    let mut w = vec![0.0; d];
    for _ in 0..MAX_ITER {
        gemm(d, d, 1, c, false, &v, false, 0.0, &mut w);
        orthogonalize(&mut w, found);
        let nw = norm(&w);
        if nw <= f64::MIN_POSITIVE {
            // remaining spectrum is zero: any orthogonal direction will do
            return (v, 0.0);
        }
        w.iter_mut().for_each(|x| *x /= nw);
        let diff = v.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        core::mem::swap(&mut v, &mut w);
        if libm::sqrt(diff) < TOL {
            break;
        }
    }
    gemm(d, d, 1, c, false, &v, false, 0.0, &mut w);
    let lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum();
    (v, lambda)
}
