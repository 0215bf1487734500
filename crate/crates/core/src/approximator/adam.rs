use serde::{Deserialize, Serialize};

use super::network::{Network, Params};
use super::scalar::Scalar;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates over which the learning rate decays linearly to 0; `None`
    /// keeps it constant.
    pub decay_steps: Option<u64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_steps: None,
        }
    }
}

/// Adam with bias correction and an optional linear learning-rate decay.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Params<T>,
    v: Params<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, net: &Network<T>) -> Self {
        Self {
            config,
            step: 0,
            m: net.zero_grads(),
            v: net.zero_grads(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Learning rate the next update will use.
    pub fn current_lr(&self) -> f64 {
        linear_decay(self.config.lr, self.step, self.config.decay_steps)
    }

    /// Apply one update. Non-finite gradients leave the network and the
    /// optimizer state untouched.
    pub fn apply(&mut self, net: &mut Network<T>, grads: &Params<T>) -> Result<(), NnError> {
        if !grads.all_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        let lr = self.current_lr();
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2, eps) = (T::of(c.beta1), T::of(c.beta2), T::of(c.eps));
        let (bc1, bc2, lr) = (T::of(bc1), T::of(bc2), T::of(lr));
        let g: Vec<&[T]> = grads.tensors().into_iter().map(|(_, _, d)| d).collect();
        let params = net.params_mut().tensors_mut();
        for (((p, m), v), g) in params
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(g)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] = p[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `lr0 * (1 - step / total)`, floored at 0.
pub fn linear_decay(lr0: f64, step: u64, total: Option<u64>) -> f64 {
    match total {
        Some(n) if n > 0 => lr0 * (1.0 - step as f64 / n as f64).max(0.0),
        _ => lr0,
    }
}

/// Adam for a single scalar parameter such as the log-temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarAdam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: f64,
    pub v: f64,
}

impl ScalarAdam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: 0.0,
            v: 0.0,
        }
    }

    pub fn apply(&mut self, param: &mut f64, grad: f64) -> Result<(), NnError> {
        if !grad.is_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        let c = self.config;
        let lr = linear_decay(c.lr, self.step, c.decay_steps);
        self.step += 1;
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * grad;
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * grad * grad;
        let t = self.step as i32;
        let mh = self.m / (1.0 - c.beta1.powi(t));
        let vh = self.v / (1.0 - c.beta2.powi(t));
        *param -= lr * mh / (vh.sqrt() + c.eps);
        Ok(())
    }
}
