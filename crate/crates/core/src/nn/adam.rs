use serde::{Deserialize, Serialize};

use super::{MlpParams, NnError};
use crate::autodiff::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one network, in the same `[w0, b0, ...]` order as
/// [`MlpParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &MlpParams) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Self {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn reset(&mut self) {
        self.t = 0;
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            t.data_mut().fill(0.0);
        }
    }

    /// One bias-corrected Adam descent step.
    pub fn step(&mut self, params: &mut MlpParams, grads: &[Tensor]) -> Result<(), NnError> {
        let mut tensors = params.tensors_mut();
        if grads.len() != tensors.len() || self.m.len() != tensors.len() {
            return Err(NnError::GradientCount {
                expected: tensors.len(),
                got: grads.len(),
            });
        }
        for (i, (p, g)) in tensors.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].shape() != p.shape() {
                return Err(NnError::ParamShape {
                    index: i,
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in tensors
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
