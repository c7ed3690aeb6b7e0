//! Adam optimizer state with bias-corrected moment estimates.

use super::Tensor;
use crate::error::{DasError, Result};

/// First/second moment buffers for a fixed list of parameters.
pub struct AdamState {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Defaults beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(param_lens: &[usize]) -> Self {
        Self::with_hyper(param_lens, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(param_lens: &[usize], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(params: &[Tensor]) -> Self {
        let lens: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(&lens)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimizer step over every parameter; grads align positionally.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(DasError::Dimension(format!(
                "adam state holds {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.m[i].len() || grads[i].len() != self.m[i].len() {
                return Err(DasError::Dimension(format!(
                    "adam parameter {i}: state {}, param {}, grad {}",
                    self.m[i].len(),
                    p.len(),
                    grads[i].len()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let g = grads[i];
            let data = p.data_mut();
            for j in 0..data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] -= lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
