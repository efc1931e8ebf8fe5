//! Adaptive moment estimation.

use crate::autograd::GradReport;
use crate::error::{Error, Result};
use crate::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub steps: u64,
    m: Vec<Vec<Real>>,
    v: Vec<Vec<Real>>,
}

impl Adam {
    pub fn new(lr: Real) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, steps: 0, m: vec![], v: vec![] }
    }

    /// Descend along `grads`, whose tensors line up with `params`.
    pub fn step(&mut self, params: Vec<(&'static str, &mut [Real])>, grads: &GradReport) -> Result<()> {
        if params.len() != grads.tensors.len() {
            return Err(Error::Dimension(format!(
                "{} parameter tensors for {} gradients",
                params.len(),
                grads.tensors.len()
            )));
        }
        if self.m.is_empty() {
            self.m = grads.tensors.iter().map(|g| vec![0.0; g.values.len()]).collect();
            self.v = self.m.clone();
        }
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (i, ((name, p), g)) in params.into_iter().zip(&grads.tensors).enumerate() {
            if p.len() != g.values.len() || self.m[i].len() != p.len() {
                return Err(Error::Dimension(format!("gradient for {name} has the wrong length")));
            }
            for (((w, g), m), v) in p.iter_mut().zip(&g.values).zip(&mut self.m[i]).zip(&mut self.v[i]) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
