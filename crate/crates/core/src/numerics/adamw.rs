use super::Element;
use crate::{Error, Result};

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<F> {
    pub step: u64,
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub hyper: AdamW,
}

impl<F: Element> AdamWState<F> {
    pub fn new(len: usize, hyper: AdamW) -> Self {
        AdamWState {
            step: 0,
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            hyper,
        }
    }

    /// One decoupled-weight-decay Adam update. A non-finite gradient aborts
    /// before anything is modified.
    pub fn step(&mut self, param: &mut [F], grad: &[F]) -> Result<()> {
        if param.len() != grad.len() || param.len() != self.m.len() {
            return Err(Error::Dimension {
                op: "adamw_step",
                axis: "length",
                expected: self.m.len(),
                actual: if param.len() != self.m.len() {
                    param.len()
                } else {
                    grad.len()
                },
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "adamw_step: gradient[{i}] = {:?} at step {}",
                grad[i],
                self.step + 1
            )));
        }
        let h = self.hyper;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        let decay = F::from_f64_lossy(1.0 - h.lr * h.weight_decay);
        let b1 = F::from_f64_lossy(h.beta1);
        let b2 = F::from_f64_lossy(h.beta2);
        let one = F::one();
        let step_size = F::from_f64_lossy(h.lr / bc1);
        let inv_bc2_sqrt = F::from_f64_lossy(1.0 / bc2.sqrt());
        let eps = F::from_f64_lossy(h.eps);
        for (((p, &g), m), v) in param
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let denom = v.sqrt() * inv_bc2_sqrt + eps;
            *p = *p * decay - step_size * *m / denom;
        }
        Ok(())
    }
}
