use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moments: Vec<Tensor>,
    pub second_moments: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        Self {
            config,
            step_count: 0,
            first_moments: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second_moments: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn for_params(config: AdamConfig, params: &[&mut Param]) -> Self {
        let shapes: Vec<&[usize]> = params.iter().map(|p| p.value.shape()).collect();
        Self::new(config, &shapes)
    }

    /// Applies one update to `values` from `grads`.
    pub fn update(&mut self, values: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if values.len() != self.first_moments.len() || grads.len() != values.len() {
            return Err(Error::shape(
                "adam parameter count",
                &[self.first_moments.len()],
                &[values.len(), grads.len()],
            ));
        }
        for ((v, g), m) in values.iter().zip(grads).zip(&self.first_moments) {
            if v.shape() != m.shape() || g.shape() != m.shape() {
                return Err(Error::shape("adam parameter", m.shape(), v.shape()));
            }
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, value) in values.iter_mut().enumerate() {
            let m = self.first_moments[i].data_mut();
            let s = self.second_moments[i].data_mut();
            for (((p, &g), m), s) in value
                .data_mut()
                .iter_mut()
                .zip(grads[i].data())
                .zip(m.iter_mut())
                .zip(s.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *s = beta2 * *s + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let s_hat = *s / c2;
                *p -= learning_rate * m_hat / (s_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    /// Updates each parameter from its own gradient slot.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        let (mut values, grads): (Vec<&mut Tensor>, Vec<&Tensor>) = params
            .iter_mut()
            .map(|p| {
                let Param { value, grad } = &mut **p;
                (value, &*grad)
            })
            .unzip();
        self.update(&mut values, &grads)
    }
}
