use crate::error::{config_err, Result};
use crate::nn::HiddenState;
use crate::scalar::{log_softmax, softmax};

/// Everything the learner needs from a fixed-length trajectory fragment.
///
/// Deliberately carries no task information: training code only ever sees
/// this type, never [`Unroll`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    /// Observation after the last step, used to bootstrap `V(h_{s+n})`.
    pub bootstrap_observation: Vec<f64>,
    /// Row-major `n x actions` logits of the behavior policy `mu`.
    pub behavior_logits: Vec<f64>,
    /// `V_replay(h_t)` recorded while acting.
    pub behavior_values: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// `true` where the episode ended after the step.
    pub dones: Vec<bool>,
    /// Hidden state before the first step (zeros at an episode start).
    pub initial_hidden: HiddenState<f64>,
    pub num_actions: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        if n == 0 {
            return Err(config_err("unroll has no steps"));
        }
        let ok = self.observations.len() == n
            && self.behavior_values.len() == n
            && self.rewards.len() == n
            && self.dones.len() == n
            && self.behavior_logits.len() == n * self.num_actions;
        if !ok {
            return Err(config_err("unroll per-step sequences have different lengths"));
        }
        if self.actions.iter().any(|&a| a >= self.num_actions) {
            return Err(config_err("unroll holds an out-of-range action"));
        }
        if self.behavior_logits.iter().any(|l| !l.is_finite()) {
            return Err(config_err("unroll holds non-finite behavior logits"));
        }
        Ok(())
    }

    /// `resets[t]`: hidden state is zeroed before step `t`. Covers the `n`
    /// steps plus the bootstrap step.
    pub fn resets_with_bootstrap(&self) -> Vec<bool> {
        std::iter::once(false).chain(self.dones.iter().copied()).collect()
    }

    /// Observations of the `n` steps followed by the bootstrap observation.
    pub fn observations_with_bootstrap(&self) -> Vec<&[f64]> {
        self.observations
            .iter()
            .map(Vec::as_slice)
            .chain(std::iter::once(self.bootstrap_observation.as_slice()))
            .collect()
    }

    pub fn behavior_logits_at(&self, t: usize) -> &[f64] {
        &self.behavior_logits[t * self.num_actions..(t + 1) * self.num_actions]
    }

    /// Row-major behavior probabilities reconstructed from the stored logits.
    pub fn behavior_probs(&self) -> Vec<f64> {
        (0..self.len())
            .flat_map(|t| softmax(self.behavior_logits_at(t)))
            .collect()
    }

    /// `log mu(a_t | h_t)` of the taken actions.
    pub fn behavior_log_probs_taken(&self) -> Vec<f64> {
        let mut row = vec![0.0; self.num_actions];
        (0..self.len())
            .map(|t| {
                log_softmax(self.behavior_logits_at(t), &mut row);
                row[self.actions[t]]
            })
            .collect()
    }
}

/// Harness-side bookkeeping attached to an unroll. Never read by training code.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrollMeta {
    pub task: String,
    /// Reservoir key in `[0, 1)`, assigned when the unroll is offered to a shard.
    pub reservoir_key: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unroll {
    pub trajectory: Trajectory,
    pub meta: UnrollMeta,
}

impl Unroll {
    pub fn new(trajectory: Trajectory, task: impl Into<String>) -> Self {
        Self {
            trajectory,
            meta: UnrollMeta {
                task: task.into(),
                reservoir_key: 0.0,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }
}
