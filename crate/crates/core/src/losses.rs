//! The five loss terms and their weighted combination.
//!
//! Every term is a mean over the steps it applies to. Gradients are returned
//! with respect to the network outputs (logits and values); V-Trace targets,
//! advantages, importance weights, the stored behavior policy and the stored
//! values are constants.

use crate::error::{config_err, Result};
use crate::nn::OutputGrads;
use crate::scalar::Real;
use crate::vtrace::VTraceResult;

/// Probabilities below this are clamped inside `log` when computing the cloning KL.
pub const PROB_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub policy_gradient: f64,
    pub value: f64,
    pub entropy: f64,
    pub policy_cloning: f64,
    pub value_cloning: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            policy_gradient: 1.0,
            value: 0.5,
            entropy: 0.005,
            policy_cloning: 0.01,
            value_cloning: 0.005,
        }
    }
}

impl LossWeights {
    /// CLEAR without the behavioral cloning terms.
    pub fn without_cloning(self) -> Self {
        Self {
            policy_cloning: 0.0,
            value_cloning: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.policy_gradient,
            self.value,
            self.entropy,
            self.policy_cloning,
            self.value_cloning,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(config_err("loss weights must be finite and >= 0"));
        }
        Ok(())
    }
}

/// A loss value together with its gradient with respect to logits and values.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm<T> {
    pub value: T,
    pub grads: OutputGrads<T>,
    /// Number of `log` evaluations that hit [`PROB_FLOOR`].
    pub floor_hits: usize,
}

fn rows<T>(data: &[T], width: usize) -> impl Iterator<Item = &[T]> {
    data.chunks_exact(width)
}

fn check_len(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(config_err(format!("{name} has length {got}, expected {want}")));
    }
    Ok(())
}

fn check_rows(name: &str, data_len: usize, num_actions: usize, steps: usize) -> Result<()> {
    if num_actions == 0 || data_len < steps * num_actions {
        return Err(config_err(format!(
            "{name} holds {data_len} entries, need {steps} rows of {num_actions}"
        )));
    }
    Ok(())
}

/// Sum over steps of `-rho_s * A_s * log pi(a_s)`, accumulating `scale * d/dlogits`.
fn pg_accumulate<T: Real>(
    rhos: &[T],
    log_probs: &[T],
    num_actions: usize,
    actions: &[usize],
    advantages: &[T],
    scale: T,
    grads: &mut OutputGrads<T>,
) -> T {
    let mut total = T::zero();
    for (t, lp) in rows(log_probs, num_actions).take(actions.len()).enumerate() {
        let a = actions[t];
        let coeff = rhos[t] * advantages[t];
        total = total - coeff * lp[a];
        let g = grads.logits_at_mut(t, num_actions);
        for (j, (gj, &lpj)) in g.iter_mut().zip(lp).enumerate() {
            let indicator = if j == a { T::one() } else { T::zero() };
            *gj = *gj - scale * coeff * (indicator - lpj.exp());
        }
    }
    total
}

fn squared_accumulate<T: Real>(values: &[T], targets: &[T], scale: T, grads: &mut OutputGrads<T>) -> T {
    let mut total = T::zero();
    for (t, (&v, &target)) in values.iter().zip(targets).enumerate() {
        let diff = v - target;
        total = total + diff * diff;
        grads.values[t] = grads.values[t] + scale * (diff + diff);
    }
    total
}

/// Sum over steps of `sum_a pi log pi`, with `0 log 0 = 0`.
fn entropy_accumulate<T: Real>(
    log_probs: &[T],
    num_actions: usize,
    steps: usize,
    scale: T,
    grads: &mut OutputGrads<T>,
) -> T {
    let mut total = T::zero();
    for (t, lp) in rows(log_probs, num_actions).take(steps).enumerate() {
        let mut neg_entropy = T::zero();
        for &l in lp {
            let p = l.exp();
            if p > T::zero() {
                neg_entropy = neg_entropy + p * l;
            }
        }
        total = total + neg_entropy;
        let g = grads.logits_at_mut(t, num_actions);
        for (gj, &l) in g.iter_mut().zip(lp) {
            let p = l.exp();
            if p > T::zero() {
                *gj = *gj + scale * p * (l - neg_entropy);
            }
        }
    }
    total
}

/// Sum over steps of `KL[mu || pi]`; returns the sum and the number of floor hits.
fn kl_accumulate<T: Real>(
    behavior_probs: &[T],
    log_probs: &[T],
    num_actions: usize,
    steps: usize,
    scale: T,
    grads: &mut OutputGrads<T>,
) -> (T, usize) {
    let log_floor = T::lit(PROB_FLOOR.ln());
    let mut total = T::zero();
    let mut floor_hits = 0;
    for (t, (mu, lp)) in rows(behavior_probs, num_actions)
        .zip(rows(log_probs, num_actions))
        .take(steps)
        .enumerate()
    {
        // mass of mu on actions whose log pi is not clamped
        let mut live_mass = T::zero();
        for (&m, &l) in mu.iter().zip(lp) {
            if m <= T::zero() {
                continue;
            }
            let clamped = l < log_floor;
            if clamped {
                floor_hits += 1;
            } else {
                live_mass = live_mass + m;
            }
            total = total + m * (m.ln() - l.max(log_floor));
        }
        let g = grads.logits_at_mut(t, num_actions);
        for ((gj, &m), &l) in g.iter_mut().zip(mu).zip(lp) {
            let own = if m > T::zero() && l >= log_floor { m } else { T::zero() };
            *gj = *gj + scale * (l.exp() * live_mass - own);
        }
    }
    (total, floor_hits)
}

fn steps_scale<T: Real>(steps: usize) -> T {
    T::one() / T::from_usize(steps.max(1)).expect("step count representable")
}

/// Mean over steps of `-rho_s log pi(a_s|h_s) A_s`.
pub fn policy_gradient_loss<T: Real>(
    rhos: &[T],
    log_probs: &[T],
    num_actions: usize,
    actions: &[usize],
    advantages: &[T],
) -> Result<LossTerm<T>> {
    let steps = actions.len();
    check_len("rhos", rhos.len(), steps)?;
    check_len("advantages", advantages.len(), steps)?;
    check_rows("log-probs", log_probs.len(), num_actions, steps)?;
    if let Some(&a) = actions.iter().find(|&&a| a >= num_actions) {
        return Err(config_err(format!("action {a} out of range")));
    }
    let scale = steps_scale::<T>(steps);
    let mut grads = OutputGrads::zeros(steps, num_actions);
    let sum = pg_accumulate(rhos, log_probs, num_actions, actions, advantages, scale, &mut grads);
    Ok(LossTerm {
        value: sum * scale,
        grads,
        floor_hits: 0,
    })
}

/// Mean of `(V(h_s) - v_s)^2`.
pub fn value_loss<T: Real>(values: &[T], targets: &[T]) -> Result<LossTerm<T>> {
    check_len("targets", targets.len(), values.len())?;
    squared_term(values, targets)
}

/// Mean of `(V(h_s) - V_replay(h_s))^2`.
pub fn value_cloning_loss<T: Real>(values: &[T], stored_values: &[T]) -> Result<LossTerm<T>> {
    check_len("stored values", stored_values.len(), values.len())?;
    squared_term(values, stored_values)
}

fn squared_term<T: Real>(values: &[T], targets: &[T]) -> Result<LossTerm<T>> {
    let steps = values.len();
    let scale = steps_scale::<T>(steps);
    let mut grads = OutputGrads::zeros(steps, 0);
    let sum = squared_accumulate(values, targets, scale, &mut grads);
    Ok(LossTerm {
        value: sum * scale,
        grads,
        floor_hits: 0,
    })
}

/// Mean over steps of `sum_a pi log pi` (the negative entropy).
pub fn entropy_loss<T: Real>(log_probs: &[T], num_actions: usize) -> Result<LossTerm<T>> {
    if num_actions == 0 || !log_probs.len().is_multiple_of(num_actions) {
        return Err(config_err("log-probs are not a whole number of rows"));
    }
    let steps = log_probs.len() / num_actions;
    let scale = steps_scale::<T>(steps);
    let mut grads = OutputGrads::zeros(steps, num_actions);
    let sum = entropy_accumulate(log_probs, num_actions, steps, scale, &mut grads);
    Ok(LossTerm {
        value: sum * scale,
        grads,
        floor_hits: 0,
    })
}

/// Mean over steps of `KL[mu || pi]`, `mu` given as probabilities and `pi` as log-probabilities.
pub fn policy_cloning_loss<T: Real>(behavior_probs: &[T], log_probs: &[T], num_actions: usize) -> Result<LossTerm<T>> {
    if num_actions == 0 || !behavior_probs.len().is_multiple_of(num_actions) {
        return Err(config_err("behavior probabilities are not a whole number of rows"));
    }
    let steps = behavior_probs.len() / num_actions;
    check_rows("log-probs", log_probs.len(), num_actions, steps)?;
    let scale = steps_scale::<T>(steps);
    let mut grads = OutputGrads::zeros(steps, num_actions);
    let (sum, floor_hits) = kl_accumulate(behavior_probs, log_probs, num_actions, steps, scale, &mut grads);
    Ok(LossTerm {
        value: sum * scale,
        grads,
        floor_hits,
    })
}

/// Stored behavior outputs of a replayed unroll.
#[derive(Debug, Clone, Copy)]
pub struct CloningTargets<'a, T> {
    /// Row-major `steps x actions` probabilities of the behavior policy.
    pub behavior_probs: &'a [T],
    pub stored_values: &'a [T],
}

/// Network outputs and targets for one trained unroll.
#[derive(Debug, Clone, Copy)]
pub struct LossSequence<'a, T> {
    /// Row-major log-probabilities; may hold extra trailing rows (e.g. the bootstrap step).
    pub log_probs: &'a [T],
    /// May hold extra trailing entries.
    pub values: &'a [T],
    pub actions: &'a [usize],
    pub vtrace: &'a VTraceResult<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown<T> {
    pub policy_gradient: T,
    pub value: T,
    pub entropy: T,
    pub policy_cloning: T,
    pub value_cloning: T,
    pub total: T,
    pub floor_hits: usize,
}

/// Weighted CLEAR loss over a batch of fresh unrolls and a batch of replayed
/// unrolls. The three standard terms average over every step of both batches;
/// the two cloning terms average over the replay steps only.
///
/// Returns one gradient block per sequence (fresh ones first), each sized to
/// the rows of that sequence's `log_probs`.
pub fn total_loss<T: Real>(
    new_batch: &[LossSequence<'_, T>],
    replay_batch: &[(LossSequence<'_, T>, CloningTargets<'_, T>)],
    num_actions: usize,
    weights: &LossWeights,
) -> Result<(LossBreakdown<T>, Vec<OutputGrads<T>>)> {
    if new_batch.is_empty() && replay_batch.is_empty() {
        return Err(config_err("total loss needs at least one unroll"));
    }
    let all: Vec<&LossSequence<'_, T>> = new_batch.iter().chain(replay_batch.iter().map(|(s, _)| s)).collect();
    for seq in &all {
        let n = seq.actions.len();
        check_len("V-Trace targets", seq.vtrace.targets.len(), n)?;
        check_len("V-Trace weights", seq.vtrace.rhos.len(), n)?;
        check_len("advantages", seq.vtrace.advantages.len(), n)?;
        check_rows("log-probs", seq.log_probs.len(), num_actions, n)?;
        if seq.values.len() < n || seq.values.len() * num_actions != seq.log_probs.len() {
            return Err(config_err("values and log-probs disagree on step count"));
        }
        if let Some(&a) = seq.actions.iter().find(|&&a| a >= num_actions) {
            return Err(config_err(format!("action {a} out of range")));
        }
    }
    for (seq, clone) in replay_batch {
        check_len(
            "behavior probabilities",
            clone.behavior_probs.len(),
            seq.actions.len() * num_actions,
        )?;
        check_len("stored values", clone.stored_values.len(), seq.actions.len())?;
    }

    let total_steps: usize = all.iter().map(|s| s.actions.len()).sum();
    let replay_steps: usize = replay_batch.iter().map(|(s, _)| s.actions.len()).sum();
    let std_scale = steps_scale::<T>(total_steps);
    let clone_scale = steps_scale::<T>(replay_steps);
    let w = |x: f64| T::lit(x);

    let mut out = LossBreakdown::<T>::default();
    let mut grads = Vec::with_capacity(all.len());
    for (i, seq) in all.iter().enumerate() {
        let rows_total = seq.values.len();
        let n = seq.actions.len();
        let mut g = OutputGrads::zeros(rows_total, num_actions);
        out.policy_gradient = out.policy_gradient
            + pg_accumulate(
                &seq.vtrace.rhos,
                seq.log_probs,
                num_actions,
                seq.actions,
                &seq.vtrace.advantages,
                std_scale * w(weights.policy_gradient),
                &mut g,
            );
        out.value = out.value
            + squared_accumulate(
                &seq.values[..n],
                &seq.vtrace.targets,
                std_scale * w(weights.value),
                &mut g,
            );
        out.entropy =
            out.entropy + entropy_accumulate(seq.log_probs, num_actions, n, std_scale * w(weights.entropy), &mut g);

        if i >= new_batch.len() {
            let clone = &replay_batch[i - new_batch.len()].1;
            let (kl, hits) = kl_accumulate(
                clone.behavior_probs,
                seq.log_probs,
                num_actions,
                n,
                clone_scale * w(weights.policy_cloning),
                &mut g,
            );
            out.policy_cloning = out.policy_cloning + kl;
            out.floor_hits += hits;
            out.value_cloning = out.value_cloning
                + squared_accumulate(
                    &seq.values[..n],
                    clone.stored_values,
                    clone_scale * w(weights.value_cloning),
                    &mut g,
                );
        }
        grads.push(g);
    }
    out.policy_gradient = out.policy_gradient * std_scale;
    out.value = out.value * std_scale;
    out.entropy = out.entropy * std_scale;
    out.policy_cloning = out.policy_cloning * clone_scale;
    out.value_cloning = out.value_cloning * clone_scale;
    out.total = w(weights.policy_gradient) * out.policy_gradient
        + w(weights.value) * out.value
        + w(weights.entropy) * out.entropy
        + w(weights.policy_cloning) * out.policy_cloning
        + w(weights.value_cloning) * out.value_cloning;
    Ok((out, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::log_softmax;

    fn lsm(logits: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; logits.len()];
        log_softmax(logits, &mut out);
        out
    }

    #[test]
    fn pg_direct_evaluation() {
        // taken action has log-prob -0.5
        let lp = [-0.5, (1.0 - (-0.5f64).exp()).ln()];
        let term = policy_gradient_loss(&[1.0], &lp, 2, &[0], &[2.0]).unwrap();
        assert!((term.value - 1.0).abs() < 1e-12);
        let zero = policy_gradient_loss(&[1.0], &lp, 2, &[0], &[0.0]).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn value_losses_direct_evaluation() {
        assert_eq!(value_loss(&[1.0, 3.0], &[0.0, 0.0]).unwrap().value, 5.0);
        assert_eq!(value_loss(&[1.0, 3.0], &[1.0, 3.0]).unwrap().value, 0.0);
        assert_eq!(value_cloning_loss(&[2.0, 0.0], &[0.0, 0.0]).unwrap().value, 2.0);
        assert_eq!(value_cloning_loss(&[2.0, 0.5], &[2.0, 0.5]).unwrap().value, 0.0);
        assert!(value_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn entropy_of_uniform_and_one_hot() {
        let uniform = lsm(&[0.0; 4]);
        let term = entropy_loss(&uniform, 4).unwrap();
        assert!((term.value - (0.25f64).ln()).abs() < 1e-12);
        let one_hot = [0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        let term = entropy_loss(&one_hot, 4).unwrap();
        assert_eq!(term.value, 0.0);
        assert!(term.grads.logits.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn cloning_kl_direct_evaluation() {
        let pi = [0.5f64.ln(), 0.5f64.ln()];
        let term = policy_cloning_loss(&[1.0, 0.0], &pi, 2).unwrap();
        assert!((term.value - std::f64::consts::LN_2).abs() < 1e-12);
        let same = lsm(&[0.3, -1.0, 2.0]);
        let mu: Vec<f64> = same.iter().map(|l| l.exp()).collect();
        assert!(policy_cloning_loss(&mu, &same, 3).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn cloning_floor_counts_hits() {
        let pi = [0.0f64, -40.0];
        let term = policy_cloning_loss(&[0.5, 0.5], &pi, 2).unwrap();
        assert_eq!(term.floor_hits, 1);
        assert!(term.value.is_finite());
    }

    fn sequence_fixture() -> (Vec<f64>, Vec<f64>, Vec<usize>, VTraceResult<f64>) {
        let lp: Vec<f64> = [[0.1, 0.2, -0.3], [1.0, 0.0, 0.5]]
            .iter()
            .flat_map(|r| lsm(r))
            .collect();
        let values = vec![0.4, -0.2];
        let vt = VTraceResult {
            targets: vec![0.5, 0.1],
            rhos: vec![1.0, 0.7],
            cs: vec![1.0, 0.7],
            advantages: vec![0.3, -0.4],
        };
        (lp, values, vec![2, 0], vt)
    }

    #[test]
    fn total_with_empty_replay_is_standard_terms() {
        let (lp, values, actions, vt) = sequence_fixture();
        let seq = LossSequence {
            log_probs: &lp,
            values: &values,
            actions: &actions,
            vtrace: &vt,
        };
        let weights = LossWeights::default();
        let (b, grads) = total_loss(&[seq], &[], 3, &weights).unwrap();
        let pg = policy_gradient_loss(&vt.rhos, &lp, 3, &actions, &vt.advantages)
            .unwrap()
            .value;
        let v = value_loss(&values, &vt.targets).unwrap().value;
        let e = entropy_loss(&lp, 3).unwrap().value;
        let expected = 1.0 * pg + 0.5 * v + 0.005 * e;
        assert!((b.total - expected).abs() < 1e-14);
        assert_eq!(b.policy_cloning, 0.0);
        assert_eq!(grads.len(), 1);
    }

    #[test]
    fn total_on_replay_only_has_all_five_terms() {
        let (lp, values, actions, vt) = sequence_fixture();
        let seq = LossSequence {
            log_probs: &lp,
            values: &values,
            actions: &actions,
            vtrace: &vt,
        };
        let mu = [0.2, 0.3, 0.5, 0.6, 0.2, 0.2];
        let stored = [0.0, 0.1];
        let clone = CloningTargets {
            behavior_probs: &mu,
            stored_values: &stored,
        };
        let weights = LossWeights::default();
        let (b, _) = total_loss(&[], &[(seq, clone)], 3, &weights).unwrap();
        let kl = policy_cloning_loss(&mu, &lp, 3).unwrap().value;
        let vc = value_cloning_loss(&values, &stored).unwrap().value;
        assert!((b.policy_cloning - kl).abs() < 1e-14);
        assert!((b.value_cloning - vc).abs() < 1e-14);
        let expected = b.policy_gradient + 0.5 * b.value + 0.005 * b.entropy + 0.01 * kl + 0.005 * vc;
        assert!((b.total - expected).abs() < 1e-14);

        let zero = LossWeights {
            policy_gradient: 0.0,
            value: 0.0,
            entropy: 0.0,
            policy_cloning: 0.0,
            value_cloning: 0.0,
        };
        let (b, grads) = total_loss(&[], &[(seq, clone)], 3, &zero).unwrap();
        assert_eq!(b.total, 0.0);
        assert!(grads[0].logits.iter().chain(&grads[0].values).all(|g| *g == 0.0));
    }

    #[test]
    fn total_rejects_empty_batches() {
        let w = LossWeights::default();
        assert!(total_loss::<f64>(&[], &[], 3, &w).is_err());
    }
}
