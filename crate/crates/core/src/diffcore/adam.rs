use serde::{Deserialize, Serialize};

use super::ParamBlocks;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Adam moment accumulators, one pair of buffers per parameter block.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<P: ParamBlocks<T>>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.blocks().iter().map(|(_, b)| b.len()).collect();
        AdamState {
            config,
            first: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.second
    }

    /// One bias-corrected Adam update of `params` along `grads`.
    ///
    /// Nothing is modified when a gradient component is non-finite or the
    /// block layout differs from the one the state was created for.
    pub fn step<P: ParamBlocks<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grad_blocks = grads.blocks();
        if grad_blocks.len() != self.first.len() {
            return Err(Error::dim("gradient blocks", self.first.len(), grad_blocks.len()));
        }
        for ((name, g), m) in grad_blocks.iter().zip(&self.first) {
            if g.len() != m.len() {
                return Err(Error::dim(format!("gradient block `{name}`"), m.len(), g.len()));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { block: name.clone() });
            }
        }
        let mut param_blocks = params.blocks_mut();
        if param_blocks.len() != self.first.len()
            || param_blocks.iter().zip(&self.first).any(|(p, m)| p.len() != m.len())
        {
            return Err(Error::StaleTape(
                "parameter layout differs from optimizer state".into(),
            ));
        }

        self.step += 1;
        let c = &self.config;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one = T::one();
        let lr = T::lit(c.learning_rate);
        let eps = T::lit(c.epsilon);
        let t = self.step as i32;
        let bc1 = one - T::lit(c.beta1.powi(t));
        let bc2 = one - T::lit(c.beta2.powi(t));

        for (((p, (_, g)), m), v) in param_blocks
            .iter_mut()
            .zip(&grad_blocks)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
