use serde::{Deserialize, Serialize};

use super::matrix::Scalar;
use super::mlp::{Mlp, MlpGrads};
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
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new<T: Scalar>(net: &Mlp<T>, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = net.blocks().map(<[T]>::len).collect();
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// First-moment accumulators, one per parameter block.
    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    /// Applies one update to `net`. Non-finite gradients leave `net` and the
    /// state untouched and return a training error.
    pub fn step<T: Scalar>(&mut self, net: &mut Mlp<T>, grads: &MlpGrads<T>) -> Result<()> {
        if grads.blocks().count() != self.first.len() {
            return Err(Error::Shape("gradient blocks do not match optimizer state".into()));
        }
        for (i, (g, m)) in grads.blocks().zip(&self.first).enumerate() {
            if g.len() != m.len() {
                return Err(Error::Shape(format!("gradient block {i} has wrong length")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient in block {i} at optimizer step {}",
                    self.step + 1
                )));
            }
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
        for (((p, g), m), v) in net
            .blocks_mut()
            .zip(grads.blocks())
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for j in 0..p.len() {
                let gj = g[j].as_f64();
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                p[j] = T::from_f64(p[j].as_f64() - update);
            }
        }
        Ok(())
    }
}
