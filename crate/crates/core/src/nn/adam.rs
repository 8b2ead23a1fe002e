//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state for an ordered list of parameter buffers. Moment buffers
/// are created on the first step and must keep their shapes afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update over every `(params, grads)` pair, in a stable order.
    pub fn step<'a>(
        &mut self,
        buffers: impl IntoIterator<Item = (&'a mut [f64], &'a [f64])>,
    ) -> Result<(), NnError> {
        let buffers: Vec<_> = buffers.into_iter().collect();
        for (i, (p, g)) in buffers.iter().enumerate() {
            if p.len() != g.len() {
                return Err(NnError::Shape(format!(
                    "adam buffer {i}: {} params but {} grads",
                    p.len(),
                    g.len()
                )));
            }
        }
        if self.step == 0 && self.first.is_empty() {
            self.first = buffers.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != buffers.len()
            || self.first.iter().zip(&buffers).any(|(m, (p, _))| m.len() != p.len())
        {
            return Err(NnError::Shape(
                "adam moment shapes do not match the parameter list".into(),
            ));
        }
        self.step += 1;
        let AdamConfig {
            alpha,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in buffers
            .into_iter()
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= alpha * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    /// Convenience for a single flat buffer.
    pub fn step_one(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        self.step([(params, grads)])
    }
}
