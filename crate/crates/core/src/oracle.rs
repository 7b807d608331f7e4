//! Brute-force reference computations.
//!
//! Each function here recomputes a quantity along a route that shares no code
//! with the production path it checks: explicit sums instead of recursions,
//! exact Markov-chain expectations instead of sampling, straight-line scalar
//! loops instead of the vectorized network.
#![allow(clippy::needless_range_loop)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::nn::NetworkParams;
use crate::tasks::{TaskSpec, NUM_ACTIONS};

/// V-Trace targets summed term by term from the defining series
/// `v_s = V(h_s) + sum_t (prod_{i<t} gamma_i c_i) delta_t`, with importance
/// ratios formed from probabilities rather than log differences.
#[allow(clippy::too_many_arguments)]
pub fn vtrace_series(
    discount: f64,
    c_bar: f64,
    rho_bar: f64,
    rewards: &[f64],
    dones: &[bool],
    behavior_log_probs: &[f64],
    target_log_probs: &[f64],
    values: &[f64],
    bootstrap: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let gamma: Vec<f64> = dones.iter().map(|&d| if d { 0.0 } else { discount }).collect();
    let ratio = |i: usize| target_log_probs[i].exp() / behavior_log_probs[i].exp();
    let value_at = |i: usize| if i < n { values[i] } else { bootstrap };
    (0..n)
        .map(|s| {
            let mut sum = 0.0;
            for t in s..n {
                let mut weight = 1.0;
                for i in s..t {
                    weight *= gamma[i] * c_bar.min(ratio(i));
                }
                let rho = rho_bar.min(ratio(t));
                let delta = rho * (rewards[t] + gamma[t] * value_at(t + 1) - values[t]);
                sum += weight * delta;
            }
            values[s] + sum
        })
        .collect()
}

/// n-step bootstrapped returns `sum_t gamma^{t-s} r_t + gamma^{n-s} V_boot`,
/// cut at episode ends.
pub fn nstep_returns(discount: f64, rewards: &[f64], dones: &[bool], bootstrap: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|s| {
            let mut total = 0.0;
            let mut factor = 1.0;
            for t in s..n {
                total += factor * rewards[t];
                if dones[t] {
                    return total;
                }
                factor *= discount;
            }
            total + factor * bootstrap
        })
        .collect()
}

/// Exact expected return of the uniform random policy from the start cell,
/// by dynamic programming over the time-capped absorbing Markov chain.
pub fn random_policy_return(spec: &TaskSpec) -> f64 {
    let cells = spec.num_cells();
    // expected return-to-go with k steps remaining
    let mut to_go = vec![0.0; cells];
    for _ in 0..spec.episode_cap {
        let mut next = vec![0.0; cells];
        for cell in spec.cells() {
            if spec.is_wall(cell) || cell == spec.goal {
                continue;
            }
            let mut acc = 0.0;
            for a in 0..NUM_ACTIONS {
                let (to, reward, done) = spec.transition(cell, a);
                acc += reward + if done { 0.0 } else { to_go[spec.index(to)] };
            }
            next[spec.index(cell)] = acc / NUM_ACTIONS as f64;
        }
        to_go = next;
    }
    to_go[spec.index(spec.start)]
}

/// Variance of the random policy's return, from the same chain (second moments).
pub fn random_policy_return_variance(spec: &TaskSpec) -> f64 {
    let cells = spec.num_cells();
    let mut m1 = vec![0.0; cells];
    let mut m2 = vec![0.0; cells];
    for _ in 0..spec.episode_cap {
        let mut n1 = vec![0.0; cells];
        let mut n2 = vec![0.0; cells];
        for cell in spec.cells() {
            if spec.is_wall(cell) || cell == spec.goal {
                continue;
            }
            let (mut a1, mut a2) = (0.0, 0.0);
            for a in 0..NUM_ACTIONS {
                let (to, r, done) = spec.transition(cell, a);
                let (f1, f2) = if done {
                    (0.0, 0.0)
                } else {
                    (m1[spec.index(to)], m2[spec.index(to)])
                };
                a1 += r + f1;
                a2 += r * r + 2.0 * r * f1 + f2;
            }
            n1[spec.index(cell)] = a1 / NUM_ACTIONS as f64;
            n2[spec.index(cell)] = a2 / NUM_ACTIONS as f64;
        }
        m1 = n1;
        m2 = n2;
    }
    let i = spec.index(spec.start);
    m2[i] - m1[i] * m1[i]
}

/// Fraction of shared free cells on which two tasks have disjoint optimal action sets.
pub fn optimal_action_conflict(a: &TaskSpec, b: &TaskSpec) -> f64 {
    let (oa, ob) = (a.optimal_actions(), b.optimal_actions());
    let mut shared = 0;
    let mut conflict = 0;
    for (sa, sb) in oa.iter().zip(&ob) {
        if sa.is_empty() || sb.is_empty() {
            continue;
        }
        shared += 1;
        if !sa.iter().any(|x| sb.contains(x)) {
            conflict += 1;
        }
    }
    conflict as f64 / shared.max(1) as f64
}

/// Pearson chi-square goodness-of-fit of observed counts against a uniform
/// expectation. Returns `(statistic, degrees of freedom, p-value)`.
pub fn chi_square_uniform(counts: &[u64]) -> (f64, f64, f64) {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let df = (counts.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(df).expect("positive degrees of freedom").cdf(stat);
    (stat, df, p)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(x: &[f64], h: f64, mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with a small absolute floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Straight-line reimplementation of the network forward pass. Returns per-step
/// `(logits, value)`.
pub fn reference_forward(
    params: &NetworkParams<f64>,
    observations: &[Vec<f64>],
    resets: &[bool],
    initial_hidden: &[f64],
) -> Vec<(Vec<f64>, f64)> {
    let s = params.shape();
    let (d, h, a) = (s.obs_dim, s.hidden, s.actions);
    let l = params.layout();
    let p = params.as_slice();
    let w = |base: usize, cols: usize, i: usize, j: usize| p[base + i * cols + j];
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());

    let mut state = initial_hidden.to_vec();
    let mut out = Vec::new();
    for (t, x) in observations.iter().enumerate() {
        if resets[t] {
            state = vec![0.0; h];
        }
        let mut e = vec![0.0; h];
        for i in 0..h {
            let mut z = p[l.enc_b.start + i];
            for j in 0..d {
                z += w(l.enc_w.start, d, i, j) * x[j];
            }
            e[i] = z.tanh();
        }
        let mut g = vec![0.0; h];
        for i in 0..h {
            let mut z = p[l.gate_b.start + i];
            for j in 0..h {
                z += w(l.gate_w.start, h, i, j) * e[j];
            }
            for j in 0..h {
                z += w(l.gate_u.start, h, i, j) * state[j];
            }
            g[i] = sig(z);
        }
        let mut next = vec![0.0; h];
        for i in 0..h {
            let mut z = p[l.cand_b.start + i];
            for j in 0..h {
                z += w(l.cand_w.start, h, i, j) * e[j];
            }
            for j in 0..h {
                z += w(l.cand_u.start, h, i, j) * (g[j] * state[j]);
            }
            next[i] = z.tanh();
        }
        state = next;
        let logits: Vec<f64> = (0..a)
            .map(|k| {
                let mut z = p[l.pi_b.start + k];
                for j in 0..h {
                    z += w(l.pi_w.start, h, k, j) * state[j];
                }
                z
            })
            .collect();
        let mut value = p[l.v_b.start];
        for j in 0..h {
            value += p[l.v_w.start + j] * state[j];
        }
        out.push((logits, value));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nstep_return_small_case() {
        let g = nstep_returns(0.5, &[1.0, 2.0], &[false, false], 4.0);
        assert_eq!(g, vec![1.0 + 0.5 * 2.0 + 0.25 * 4.0, 2.0 + 0.5 * 4.0]);
        let cut = nstep_returns(0.5, &[1.0, 2.0], &[true, false], 4.0);
        assert_eq!(cut[0], 1.0);
    }

    #[test]
    fn chi_square_of_perfect_counts_is_zero() {
        let (stat, df, p) = chi_square_uniform(&[10, 10, 10, 10]);
        assert_eq!(stat, 0.0);
        assert_eq!(df, 3.0);
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn finite_difference_of_quadratic() {
        let g = central_difference(&[1.0, -2.0], 1e-5, |x| x[0] * x[0] + 3.0 * x[1]);
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }
}
