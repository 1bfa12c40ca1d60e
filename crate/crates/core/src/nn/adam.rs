use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::ParamSet;
use crate::nn::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .entries()
            .iter()
            .map(|e| vec![0.0; e.value.len()])
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Applies one update; `grads[i]` belongs to the i-th parameter (`None` = no gradient).
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, entry) in params.entries_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            if g.len() != entry.value.len() {
                return Err(Error::Shape(format!("gradient shape mismatch for {}", entry.name)));
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((p, &gi), mi), vi) in entry
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("theta", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = scalar_params(0.7);
        let mut opt = Adam::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            opt.step(&mut p, &[Some(Tensor::scalar(0.0))]).unwrap();
        }
        assert_eq!(p.entries()[0].value.item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2 => delta = -lr * g / (|g| + eps)
        let mut p = scalar_params(0.0);
        let cfg = AdamConfig::default();
        let mut opt = Adam::new(cfg, &p);
        opt.step(&mut p, &[Some(Tensor::scalar(1.0))]).unwrap();
        let expected = -cfg.lr / (1.0 + cfg.eps);
        assert!((p.entries()[0].value.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut p = scalar_params(1.0);
        let mut opt = Adam::new(AdamConfig::default(), &p);
        let mut prev = 1.0;
        for _ in 0..200 {
            opt.step(&mut p, &[Some(Tensor::scalar(0.3))]).unwrap();
            let cur = p.entries()[0].value.item();
            assert!(cur < prev);
            prev = cur;
        }
    }
}
