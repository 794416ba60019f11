//! First-order optimizers acting on flat parameter vectors.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

/// Plain SGD or Adam. Adam moments are sized to the parameter count at
/// construction and cleared by [`Optimizer::reset`].
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => n_params,
        };
        Ok(Optimizer {
            kind,
            lr,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Optimizer::new(OptimizerKind::Sgd, lr, 0)
    }

    pub fn adam(lr: f64, n_params: usize) -> Result<Self> {
        Optimizer::new(OptimizerKind::Adam, lr, n_params)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Applies one update in place. Nothing is modified when a gradient
    /// element is non-finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim("optimizer step", &[params.len()], &[grads.len()]));
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::dim("adam step", &[params.len()], &[self.m.len()]));
                }
                let (b1, b2) = ADAM_BETAS;
                self.t += 1;
                let c1 = 1.0 - libm::pow(b1, self.t as f64);
                let c2 = 1.0 - libm::pow(b2, self.t as f64);
                for (((p, &g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= self.lr * m_hat / (libm::sqrt(v_hat) + ADAM_EPS);
                }
            }
        }
        Ok(())
    }

    /// Clears Adam moments and the step counter; SGD has no state.
    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_update_rule() {
        let mut opt = Optimizer::sgd(0.1).unwrap();
        let mut p = [1.0];
        opt.step(&mut p, &[2.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        opt.step(&mut p, &[0.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut opt = Optimizer::adam(1e-3, 3).unwrap();
        let mut p = [0.0, 0.0, 0.0];
        opt.step(&mut p, &[5.0, -0.01, 300.0]).unwrap();
        for (x, s) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((x - s * 1e-3).abs() < 1e-8, "{x}");
        }
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn adam_zero_grad_only_decays_moments() {
        let mut opt = Optimizer::adam(1e-3, 1).unwrap();
        let mut p = [1.0];
        opt.step(&mut p, &[1.0]).unwrap();
        let (m1, v1) = (opt.moments().0[0], opt.moments().1[0]);
        let before = p[0];
        opt.step(&mut p, &[0.0]).unwrap();
        assert!((opt.moments().0[0] - 0.9 * m1).abs() < 1e-18);
        assert!((opt.moments().1[0] - 0.999 * v1).abs() < 1e-18);
        // the decayed first moment still moves the parameter
        assert!(p[0] < before);
    }

    #[test]
    fn reset_restores_fresh_behaviour() {
        let g = [0.3, -0.7];
        let mut fresh = Optimizer::adam(1e-2, 2).unwrap();
        let mut a = [1.0, 1.0];
        fresh.step(&mut a, &g).unwrap();

        let mut used = Optimizer::adam(1e-2, 2).unwrap();
        let mut b = [1.0, 1.0];
        for _ in 0..5 {
            used.step(&mut b, &[1.0, 2.0]).unwrap();
        }
        used.reset();
        let once = used.clone();
        used.reset();
        assert_eq!(once, used);
        let mut c = [1.0, 1.0];
        used.step(&mut c, &g).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn sgd_reset_is_noop() {
        let mut opt = Optimizer::sgd(0.5).unwrap();
        let before = opt.clone();
        opt.reset();
        assert_eq!(before, opt);
    }

    #[test]
    fn non_finite_gradient_names_index() {
        let mut opt = Optimizer::sgd(0.1).unwrap();
        let mut p = [1.0, 2.0, 3.0];
        let err = opt.step(&mut p, &[0.0, f64::NAN, 1.0]).unwrap_err();
        assert_eq!(err, Error::NonFinite { index: 1 });
        assert_eq!(p, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // f(x) = 0.5 * |x - c|^2
        let c = [3.0, -2.0];
        let mut opt = Optimizer::adam(0.05, 2).unwrap();
        let mut x = [0.0, 0.0];
        for _ in 0..2000 {
            let g = [x[0] - c[0], x[1] - c[1]];
            opt.step(&mut x, &g).unwrap();
        }
        assert!((x[0] - c[0]).abs() < 1e-3 && (x[1] - c[1]).abs() < 1e-3);
    }
}
