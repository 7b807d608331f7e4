//! V-Trace off-policy targets.

use crate::error::{config_err, Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VTraceConfig {
    /// Discount factor in `(0, 1]`.
    pub discount: f64,
    /// Truncation of the trace coefficients `c_i`.
    pub c_bar: f64,
    /// Truncation of the importance weights `rho_t`. Must be at least `c_bar`.
    pub rho_bar: f64,
    pub unroll_length: usize,
}

impl Default for VTraceConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            c_bar: 1.0,
            rho_bar: 1.0,
            unroll_length: 20,
        }
    }
}

impl VTraceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(config_err(format!("discount {} outside (0, 1]", self.discount)));
        }
        if self.c_bar.is_nan() || self.c_bar < 0.0 || self.rho_bar.is_nan() || self.rho_bar < 0.0 {
            return Err(config_err("truncation constants must be >= 0"));
        }
        if self.rho_bar < self.c_bar {
            return Err(config_err(format!(
                "rho_bar ({}) must be >= c_bar ({})",
                self.rho_bar, self.c_bar
            )));
        }
        if self.unroll_length == 0 {
            return Err(config_err("unroll length must be >= 1"));
        }
        Ok(())
    }
}

/// Per-step inputs for one unroll. All slices share the unroll length.
#[derive(Debug, Clone, Copy)]
pub struct VTraceInput<'a, T> {
    pub rewards: &'a [T],
    /// `true` where the episode terminated after the step; the discount for
    /// that step is zero.
    pub dones: &'a [bool],
    /// `log mu(a_t | h_t)` of the taken actions under the behavior policy.
    pub behavior_log_probs: &'a [T],
    /// `log pi(a_t | h_t)` of the taken actions under the current policy.
    pub target_log_probs: &'a [T],
    /// `V(h_t)` under the current network.
    pub values: &'a [T],
    /// `V(h_{s+n})`, the value after the last step.
    pub bootstrap_value: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VTraceResult<T> {
    /// Targets `v_s`.
    pub targets: Vec<T>,
    /// Clipped importance weights `rho_s`.
    pub rhos: Vec<T>,
    /// Clipped trace coefficients `c_s`.
    pub cs: Vec<T>,
    /// `r_s + gamma v_{s+1} - V(h_s)` with `v_{s+n}` the bootstrap value.
    pub advantages: Vec<T>,
}

fn check_finite<T: Real>(what: &'static str, values: &[T]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(step) => Err(Error::NonFinite { what, step }),
        None => Ok(()),
    }
}

pub fn vtrace_targets<T: Real>(cfg: &VTraceConfig, input: &VTraceInput<'_, T>) -> Result<VTraceResult<T>> {
    let n = input.rewards.len();
    if n == 0 {
        return Err(config_err("V-Trace needs at least one step"));
    }
    for (name, len) in [
        ("dones", input.dones.len()),
        ("behavior log-probs", input.behavior_log_probs.len()),
        ("target log-probs", input.target_log_probs.len()),
        ("values", input.values.len()),
    ] {
        if len != n {
            return Err(config_err(format!("{name} has length {len}, rewards have {n}")));
        }
    }
    check_finite("reward", input.rewards)?;
    check_finite("behavior log-prob", input.behavior_log_probs)?;
    check_finite("target log-prob", input.target_log_probs)?;
    check_finite("value", input.values)?;
    if !input.bootstrap_value.is_finite() {
        return Err(Error::NonFinite {
            what: "bootstrap value",
            step: n,
        });
    }

    let gamma = T::lit(cfg.discount);
    let c_bar = T::lit(cfg.c_bar);
    let rho_bar = T::lit(cfg.rho_bar);
    let discounts: Vec<T> = input.dones.iter().map(|&d| if d { T::zero() } else { gamma }).collect();
    let next_value = |t: usize| {
        if t + 1 < n {
            input.values[t + 1]
        } else {
            input.bootstrap_value
        }
    };

    let mut rhos = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    for t in 0..n {
        let ratio = (input.target_log_probs[t] - input.behavior_log_probs[t]).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFinite {
                what: "importance ratio",
                step: t,
            });
        }
        rhos.push(ratio.min(rho_bar));
        cs.push(ratio.min(c_bar));
    }

    let mut targets = vec![T::zero(); n];
    let mut acc = T::zero();
    for t in (0..n).rev() {
        let delta = rhos[t] * (input.rewards[t] + discounts[t] * next_value(t) - input.values[t]);
        acc = delta + discounts[t] * cs[t] * acc;
        targets[t] = input.values[t] + acc;
    }

    let advantages = (0..n)
        .map(|t| {
            let next_target = if t + 1 < n {
                targets[t + 1]
            } else {
                input.bootstrap_value
            };
            input.rewards[t] + discounts[t] * next_target - input.values[t]
        })
        .collect();

    Ok(VTraceResult {
        targets,
        rhos,
        cs,
        advantages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input<'a>(
        rewards: &'a [f64],
        dones: &'a [bool],
        mu: &'a [f64],
        pi: &'a [f64],
        values: &'a [f64],
        bootstrap: f64,
    ) -> VTraceInput<'a, f64> {
        VTraceInput {
            rewards,
            dones,
            behavior_log_probs: mu,
            target_log_probs: pi,
            values,
            bootstrap_value: bootstrap,
        }
    }

    #[test]
    fn bellman_fixed_point_leaves_values_unchanged() {
        let cfg = VTraceConfig::default();
        let g = cfg.discount;
        // V(h_t) = r_t + g V(h_{t+1}) at every step
        let bootstrap = 0.4;
        let rewards = [0.3, -0.2, 0.1];
        let mut values = [0.0; 3];
        let mut next = bootstrap;
        for t in (0..3).rev() {
            values[t] = rewards[t] + g * next;
            next = values[t];
        }
        let lp = [-1.2, -0.3, -2.0];
        let r = vtrace_targets(&cfg, &input(&rewards, &[false; 3], &lp, &lp, &values, bootstrap)).unwrap();
        for (v, t) in values.iter().zip(&r.targets) {
            assert!((v - t).abs() < 1e-12);
        }
    }

    #[test]
    fn episode_end_cuts_bootstrap() {
        let cfg = VTraceConfig {
            unroll_length: 2,
            ..Default::default()
        };
        let lp = [-0.5, -0.5];
        let r = vtrace_targets(&cfg, &input(&[1.0, 0.0], &[true, false], &lp, &lp, &[0.2, 0.3], 5.0)).unwrap();
        assert!((r.targets[0] - 1.0).abs() < 1e-12);
        assert!((r.targets[1] - 0.99 * 5.0).abs() < 1e-12);
        assert!((r.advantages[0] - (1.0 - 0.2)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_input_names_step() {
        let cfg = VTraceConfig::default();
        let lp = [-0.5, -0.5];
        let err = vtrace_targets(&cfg, &input(&[0.0, f64::NAN], &[false; 2], &lp, &lp, &[0.0, 0.0], 0.0)).unwrap_err();
        assert_eq!(
            err,
            Error::NonFinite {
                what: "reward",
                step: 1
            }
        );
    }

    #[test]
    fn length_mismatch_rejected() {
        let cfg = VTraceConfig::default();
        let lp = [-0.5];
        assert!(vtrace_targets(&cfg, &input(&[0.0, 0.0], &[false; 2], &lp, &lp, &[0.0, 0.0], 0.0)).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = VTraceConfig::default();
        assert!(ok.validate().is_ok());
        assert!(VTraceConfig { discount: 0.0, ..ok }.validate().is_err());
        assert!(VTraceConfig { discount: 1.5, ..ok }.validate().is_err());
        assert!(VTraceConfig {
            rho_bar: 0.5,
            c_bar: 1.0,
            ..ok
        }
        .validate()
        .is_err());
        assert!(VTraceConfig { unroll_length: 0, ..ok }.validate().is_err());
        let inf = VTraceConfig {
            c_bar: f64::INFINITY,
            rho_bar: f64::INFINITY,
            ..ok
        };
        assert!(inf.validate().is_ok());
    }
}
