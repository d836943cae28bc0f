use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::error::{Error, Result};

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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            config,
        }
    }

    pub fn for_network(net: &Network, config: AdamConfig) -> Self {
        Self::new(net.n_params(), config)
    }

    /// Bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.check(params.len(), grads)?;
        let mut it = params.iter_mut();
        self.apply(grads, |delta| *it.next().expect("length checked") += delta);
        Ok(())
    }

    /// Applies one step to the parameters of `net`.
    pub fn step(&mut self, net: &mut Network, grads: &[f64]) -> Result<()> {
        self.check(net.n_params(), grads)?;
        let mut deltas = Vec::with_capacity(grads.len());
        self.apply(grads, |d| deltas.push(d));
        let mut it = deltas.into_iter();
        net.visit_params_mut(|p| *p += it.next().expect("length checked"));
        Ok(())
    }

    fn check(&self, n: usize, grads: &[f64]) -> Result<()> {
        if n != self.m.len() || grads.len() != n {
            return Err(Error::shape(format!(
                "adam state for {} parameters, got {n} parameters and {} gradients",
                self.m.len(),
                grads.len()
            )));
        }
        if let Some((index, &value)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index, value });
        }
        Ok(())
    }

    fn apply(&mut self, grads: &[f64], mut sink: impl FnMut(f64)) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((m, v), &g) in self.m.iter_mut().zip(self.v.iter_mut()).zip(grads) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            sink(-lr * (*m / c1) / ((*v / c2).sqrt() + eps));
        }
    }
}
