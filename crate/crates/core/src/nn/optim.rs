use crate::error::{config_err, Error, Result};
use crate::nn::params::NetworkParams;
use crate::scalar::Real;

/// RMSProp hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    /// Rescale gradients whose global norm exceeds this value. `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay: 0.99,
            epsilon: 1e-5,
            max_grad_norm: None,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("optimizer learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.decay) {
            return Err(config_err("optimizer decay must lie in [0, 1)"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(config_err("optimizer epsilon must be positive"));
        }
        if matches!(self.max_grad_norm, Some(n) if n.is_nan() || n <= 0.0) {
            return Err(config_err("max gradient norm must be positive"));
        }
        Ok(())
    }
}

/// RMSProp accumulator state, owned by the learner.
///
/// `ms <- decay * ms + (1 - decay) * g^2`, `theta <- theta - lr * g / (sqrt(ms) + eps)`,
/// with `ms` starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp<T> {
    config: RmsPropConfig,
    mean_square: Vec<T>,
    steps: u64,
}

impl<T: Real> RmsProp<T> {
    pub fn new(config: RmsPropConfig, num_params: usize) -> Self {
        Self {
            config,
            mean_square: vec![T::zero(); num_params],
            steps: 0,
        }
    }

    pub fn config(&self) -> &RmsPropConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn mean_square(&self) -> &[T] {
        &self.mean_square
    }

    /// Applies one update with the configured learning rate.
    pub fn step(&mut self, params: &mut NetworkParams<T>, grads: &NetworkParams<T>) -> Result<()> {
        let lr = self.config.learning_rate;
        self.step_with_lr(params, grads, lr)
    }

    /// Applies one update. Non-finite gradients abort the step before any state changes.
    pub fn step_with_lr(&mut self, params: &mut NetworkParams<T>, grads: &NetworkParams<T>, lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.mean_square.len() {
            return Err(config_err(format!(
                "optimizer sized for {} parameters, got params {} and grads {}",
                self.mean_square.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(index) = grads.as_slice().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        let clip = match self.config.max_grad_norm {
            Some(max) => {
                let norm = grads.norm().as_f64();
                if norm > max {
                    T::lit(max / norm)
                } else {
                    T::one()
                }
            }
            None => T::one(),
        };
        let decay = T::lit(self.config.decay);
        let keep = T::one() - decay;
        let eps = T::lit(self.config.epsilon);
        let lr = T::lit(lr);
        for ((p, ms), &g) in params
            .as_mut_slice()
            .iter_mut()
            .zip(self.mean_square.iter_mut())
            .zip(grads.as_slice())
        {
            let g = g * clip;
            *ms = decay * *ms + keep * g * g;
            *p = *p - lr * g / (ms.sqrt() + eps);
        }
        self.steps += 1;
        Ok(())
    }
}
