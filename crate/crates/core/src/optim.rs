//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one parameter store, in store order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update given gradients in store order.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (k, ((_, theta), grad)) in params.iter_mut().zip(grads).enumerate() {
            if theta.shape() != grad.shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for parameter {:?}",
                    grad.shape(),
                    theta.shape()
                )));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((t, g), mi), vi) in theta.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *t -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_on_square() {
        let mut p = ParamStore::new();
        p.insert("theta", Tensor::vector(vec![1.0]));
        let mut adam = Adam::new(AdamConfig::default(), &p);
        // d(θ²)/dθ at θ = 1.
        adam.step(&mut p, &[Tensor::vector(vec![2.0])]).unwrap();
        let theta = p.get("theta").unwrap().data()[0];
        // m̂ = 2 and v̂ = 4 after bias correction.
        let expected = 1.0 - 1e-3 * 2.0 / (2.0 + 1e-8);
        assert!((theta - expected).abs() < 1e-15);
        assert!(((1.0 - theta) - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn zero_lr_keeps_params() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(vec![0.3, -0.7]));
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig { lr: 0.0, ..AdamConfig::default() }, &p);
        adam.step(&mut p, &[Tensor::vector(vec![5.0, -1.0])]).unwrap();
        assert_eq!(p, before);
    }
}
