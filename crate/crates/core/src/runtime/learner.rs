use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};
use crate::losses::{total_loss, CloningTargets, LossBreakdown, LossSequence, LossWeights};
use crate::nn::{ForwardTrace, NetworkParams, RmsProp, RmsPropConfig};
use crate::unroll::Trajectory;
use crate::vtrace::{vtrace_targets, VTraceConfig, VTraceInput, VTraceResult};

/// The learner's view of one queue element: trajectories only, no task labels.
#[derive(Debug, Clone, Copy)]
pub struct PairView<'a> {
    pub new: &'a Trajectory,
    pub replay: Option<&'a Trajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerConfig {
    /// Fraction of batch slots that take the new unroll.
    pub new_ratio: f64,
    pub vtrace: VTraceConfig,
    pub weights: LossWeights,
    pub optimizer: RmsPropConfig,
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.new_ratio) {
            return Err(config_err(format!(
                "new/replay ratio {} outside [0, 1]",
                self.new_ratio
            )));
        }
        self.vtrace.validate()?;
        self.weights.validate()?;
        self.optimizer.validate()
    }

    /// Number of slots that take the new unroll in a batch of `batch`.
    pub fn new_slots(&self, batch: usize) -> usize {
        let exact = self.new_ratio * batch as f64;
        // tolerate representation error in products like 0.3 * 10
        let k = (exact - 1e-9).ceil().max(0.0) as usize;
        k.min(batch)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchStats {
    pub loss: LossBreakdown<f64>,
    pub new_slots: usize,
    pub replay_slots: usize,
    /// Replay slots that fell back to the new unroll because no replay was available.
    pub cold_start_fallbacks: usize,
}

/// Single learner: recomputes outputs with the current weights, applies the
/// CLEAR loss, and takes an optimizer step per batch.
#[derive(Debug)]
pub struct Learner {
    config: LearnerConfig,
    params: NetworkParams<f64>,
    optimizer: RmsProp<f64>,
    rng: ChaCha8Rng,
}

struct Prepared {
    trace: ForwardTrace<f64>,
    vtrace: VTraceResult<f64>,
}

impl Learner {
    pub fn new(config: LearnerConfig, params: NetworkParams<f64>, rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let optimizer = RmsProp::new(config.optimizer, params.len());
        Ok(Self {
            config,
            params,
            optimizer,
            rng,
        })
    }

    pub fn params(&self) -> &NetworkParams<f64> {
        &self.params
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    fn prepare(&self, trajectory: &Trajectory) -> Result<Prepared> {
        trajectory.validate()?;
        let n = trajectory.len();
        let trace = self.params.forward(
            &trajectory.observations_with_bootstrap(),
            &trajectory.resets_with_bootstrap(),
            &trajectory.initial_hidden,
        )?;
        let target: Vec<f64> = (0..n).map(|t| trace.log_probs_at(t)[trajectory.actions[t]]).collect();
        let behavior = trajectory.behavior_log_probs_taken();
        let vtrace = vtrace_targets(
            &self.config.vtrace,
            &VTraceInput {
                rewards: &trajectory.rewards,
                dones: &trajectory.dones,
                behavior_log_probs: &behavior,
                target_log_probs: &target,
                values: &trace.values[..n],
                bootstrap_value: trace.values[n],
            },
        )?;
        Ok(Prepared { trace, vtrace })
    }

    /// Trains on one batch. Slot roles (new vs replay) are assigned by a seeded
    /// shuffle so that `new_slots(B)` slots take the new unroll.
    pub fn train_batch(&mut self, pairs: &[PairView<'_>]) -> Result<BatchStats> {
        if pairs.is_empty() {
            return Err(config_err("empty batch"));
        }
        let b = pairs.len();
        let k_new = self.config.new_slots(b);
        let mut order: Vec<usize> = (0..b).collect();
        order.shuffle(&mut self.rng);

        let mut stats = BatchStats::default();
        let mut fresh: Vec<&Trajectory> = Vec::with_capacity(b);
        let mut replayed: Vec<&Trajectory> = Vec::with_capacity(b);
        for (rank, &i) in order.iter().enumerate() {
            if rank < k_new {
                fresh.push(pairs[i].new);
                stats.new_slots += 1;
            } else if let Some(r) = pairs[i].replay {
                replayed.push(r);
                stats.replay_slots += 1;
            } else {
                fresh.push(pairs[i].new);
                stats.new_slots += 1;
                stats.cold_start_fallbacks += 1;
            }
        }

        let fresh_prep = fresh.iter().map(|t| self.prepare(t)).collect::<Result<Vec<_>>>()?;
        let replay_prep = replayed.iter().map(|t| self.prepare(t)).collect::<Result<Vec<_>>>()?;
        let replay_probs: Vec<Vec<f64>> = replayed.iter().map(|t| t.behavior_probs()).collect();

        let new_batch: Vec<LossSequence<'_, f64>> = fresh
            .iter()
            .zip(&fresh_prep)
            .map(|(t, p)| LossSequence {
                log_probs: &p.trace.log_probs,
                values: &p.trace.values,
                actions: &t.actions,
                vtrace: &p.vtrace,
            })
            .collect();
        let replay_batch: Vec<(LossSequence<'_, f64>, CloningTargets<'_, f64>)> = replayed
            .iter()
            .zip(&replay_prep)
            .zip(&replay_probs)
            .map(|((t, p), probs)| {
                (
                    LossSequence {
                        log_probs: &p.trace.log_probs,
                        values: &p.trace.values,
                        actions: &t.actions,
                        vtrace: &p.vtrace,
                    },
                    CloningTargets {
                        behavior_probs: probs,
                        stored_values: &t.behavior_values,
                    },
                )
            })
            .collect();
        let num_actions = self.params.shape().actions;
        let (breakdown, output_grads) = total_loss(&new_batch, &replay_batch, num_actions, &self.config.weights)?;

        let mut grads = NetworkParams::zeros(self.params.shape());
        for (prep, g) in fresh_prep.iter().chain(&replay_prep).zip(&output_grads) {
            grads.add_assign(&self.params.backward(&prep.trace, g)?);
        }
        self.optimizer.step(&mut self.params, &grads)?;
        stats.loss = breakdown;
        Ok(stats)
    }
}
