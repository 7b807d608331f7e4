//! Named brute-force checks, runnable from the CLI and the acceptance suite.

use std::time::{Duration, Instant};

use clear_core::losses::{total_loss, CloningTargets, LossSequence, LossWeights};
use clear_core::nn::{HiddenState, NetworkParams, NetworkShape};
use clear_core::oracle::{
    central_difference, chi_square_uniform, nstep_returns, optimal_action_conflict, random_policy_return,
    random_policy_return_variance, relative_error, vtrace_series,
};
use clear_core::replay::ReplayShard;
use clear_core::tasks::{make_task, TaskSpec, BUILTIN_TASKS, NUM_ACTIONS};
use clear_core::unroll::{Trajectory, Unroll};
use clear_core::vtrace::{vtrace_targets, VTraceConfig, VTraceInput, VTraceResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};

pub const ORACLES: [&str; 5] = ["vtrace", "gradients", "reservoir", "markov", "conflict"];

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

pub fn run_oracle(name: &str, seed: u64) -> Result<OracleReport> {
    let start = Instant::now();
    let (name, (passed, detail)) = match name {
        "vtrace" => ("vtrace", vtrace_equivalence(seed)?),
        "gradients" => ("gradients", gradient_check(seed)?),
        "reservoir" => ("reservoir", reservoir_uniformity(seed)?),
        "markov" => ("markov", markov_returns(seed)?),
        "conflict" => ("conflict", task_conflict()?),
        other => return Err(HarnessError::UnknownOracle(other.to_string())),
    };
    Ok(OracleReport {
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    })
}

/// 200 random 4-step unrolls: untruncated targets against the term-by-term
/// series, and on-policy targets against n-step returns, both within 1e-12.
fn vtrace_equivalence(seed: u64) -> Result<(bool, String)> {
    const CASES: usize = 200;
    const N: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let discount = 0.99;
    let cfg = VTraceConfig {
        discount,
        c_bar: f64::INFINITY,
        rho_bar: f64::INFINITY,
        unroll_length: N,
    };
    let (mut worst_series, mut worst_nstep) = (0.0f64, 0.0f64);
    for i in 0..CASES {
        let rewards: Vec<f64> = (0..N).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dones: Vec<bool> = (0..N).map(|_| i % 2 == 1 && rng.random_bool(0.25)).collect();
        let mu: Vec<f64> = (0..N).map(|_| rng.random_range(0.05f64..1.0).ln()).collect();
        let pi: Vec<f64> = (0..N).map(|_| rng.random_range(0.05f64..1.0).ln()).collect();
        let values: Vec<f64> = (0..N).map(|_| rng.random_range(-2.0..2.0)).collect();
        let bootstrap = rng.random_range(-2.0..2.0);
        let run = |target: &[f64]| {
            vtrace_targets(
                &cfg,
                &VTraceInput {
                    rewards: &rewards,
                    dones: &dones,
                    behavior_log_probs: &mu,
                    target_log_probs: target,
                    values: &values,
                    bootstrap_value: bootstrap,
                },
            )
        };
        let off = run(&pi)?;
        let series = vtrace_series(
            discount,
            f64::INFINITY,
            f64::INFINITY,
            &rewards,
            &dones,
            &mu,
            &pi,
            &values,
            bootstrap,
        );
        for (a, b) in off.targets.iter().zip(&series) {
            worst_series = worst_series.max((a - b).abs());
        }
        let on = run(&mu)?;
        let nstep = nstep_returns(discount, &rewards, &dones, bootstrap);
        for (a, b) in on.targets.iter().zip(&nstep) {
            worst_nstep = worst_nstep.max((a - b).abs());
        }
    }
    let passed = worst_series < 1e-12 && worst_nstep < 1e-12;
    Ok((
        passed,
        format!("{CASES} unrolls; max |series diff| {worst_series:.3e}, max |n-step diff| {worst_nstep:.3e}"),
    ))
}

struct GradCase {
    obs: Vec<Vec<f64>>,
    resets: Vec<bool>,
    actions: Vec<usize>,
    vtrace: VTraceResult<f64>,
}

fn weights_for(term: usize) -> LossWeights {
    let mut w = [0.0; 5];
    w[term] = 1.0;
    LossWeights {
        policy_gradient: w[0],
        value: w[1],
        entropy: w[2],
        policy_cloning: w[3],
        value_cloning: w[4],
    }
}

const TERMS: [&str; 5] = ["policy_gradient", "value", "entropy", "policy_cloning", "value_cloning"];

/// Every loss term, pushed through the network backward pass, against central
/// differences on the parameters (h = 1e-5) at 100 random points.
fn gradient_check(seed: u64) -> Result<(bool, String)> {
    const POINTS: usize = 100;
    const STEPS: usize = 3;
    let shape = NetworkShape::new(6, 5, NUM_ACTIONS)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = HiddenState(vec![0.1; shape.hidden]);
    let mut worst = [0.0f64; 5];
    for _ in 0..POINTS {
        let mut params = NetworkParams::<f64>::zeros(shape);
        params
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.6..0.6));
        // one fresh and one replayed sequence, each with a bootstrap row
        let mut case = || -> GradCase {
            let obs = (0..=STEPS)
                .map(|_| (0..shape.obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let mut resets = vec![false; STEPS + 1];
            resets[rng.random_range(1..=STEPS)] = rng.random_bool(0.5);
            GradCase {
                obs,
                resets,
                actions: (0..STEPS).map(|_| rng.random_range(0..NUM_ACTIONS)).collect(),
                vtrace: VTraceResult {
                    targets: (0..STEPS).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    rhos: (0..STEPS).map(|_| rng.random_range(0.2..1.0)).collect(),
                    cs: vec![1.0; STEPS],
                    advantages: (0..STEPS).map(|_| rng.random_range(-1.0..1.0)).collect(),
                },
            }
        };
        let fresh = case();
        let replay = case();
        let behavior: Vec<f64> = (0..STEPS)
            .flat_map(|_| {
                let raw: Vec<f64> = (0..NUM_ACTIONS).map(|_| rng.random_range(0.1..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(move |x| x / sum)
            })
            .collect();
        let stored_values: Vec<f64> = (0..STEPS).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (term, worst_term) in worst.iter_mut().enumerate() {
            let weights = weights_for(term);
            let loss = |p: &NetworkParams<f64>, want_grads: bool| -> Result<(f64, Option<NetworkParams<f64>>)> {
                let tf = p.forward(&fresh.obs, &fresh.resets, &hidden)?;
                let tr = p.forward(&replay.obs, &replay.resets, &hidden)?;
                let new_batch = [LossSequence {
                    log_probs: &tf.log_probs,
                    values: &tf.values,
                    actions: &fresh.actions,
                    vtrace: &fresh.vtrace,
                }];
                let replay_batch = [(
                    LossSequence {
                        log_probs: &tr.log_probs,
                        values: &tr.values,
                        actions: &replay.actions,
                        vtrace: &replay.vtrace,
                    },
                    CloningTargets {
                        behavior_probs: &behavior,
                        stored_values: &stored_values,
                    },
                )];
                let (breakdown, out_grads) = total_loss(&new_batch, &replay_batch, NUM_ACTIONS, &weights)?;
                if !want_grads {
                    return Ok((breakdown.total, None));
                }
                let mut g = p.backward(&tf, &out_grads[0])?;
                g.add_assign(&p.backward(&tr, &out_grads[1])?);
                Ok((breakdown.total, Some(g)))
            };
            let analytic = loss(&params, true)?.1.expect("gradients requested");
            let numeric = central_difference(params.as_slice(), 1e-5, |x| {
                let q = NetworkParams::from_vec(shape, x.to_vec()).expect("same length");
                loss(&q, false).map(|(l, _)| l).unwrap_or(f64::NAN)
            });
            for (a, n) in analytic.as_slice().iter().zip(&numeric) {
                let e = relative_error(*a, *n);
                *worst_term = if e.is_nan() { f64::INFINITY } else { worst_term.max(e) };
            }
        }
    }
    let passed = worst.iter().all(|&e| e < 1e-4);
    let detail = TERMS
        .iter()
        .zip(&worst)
        .map(|(t, e)| format!("{t} {e:.2e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((passed, format!("{POINTS} points, max relative error: {detail}")))
}

fn tagged(tag: usize) -> Unroll {
    Unroll::new(
        Trajectory {
            observations: vec![vec![tag as f64]],
            bootstrap_observation: vec![0.0],
            behavior_logits: vec![0.0; 2],
            behavior_values: vec![0.0],
            actions: vec![0],
            rewards: vec![0.0],
            dones: vec![false],
            initial_hidden: HiddenState::zeros(1),
            num_actions: 2,
        },
        "reservoir",
    )
}

/// Capacity-100 shard, 10,000 offers, 1,000 seeds: inclusion counts per offer
/// index against a uniform chi-square, p > 0.001.
fn reservoir_uniformity(seed: u64) -> Result<(bool, String)> {
    const CAPACITY: usize = 100;
    const OFFERS: usize = 10_000;
    const SEEDS: u64 = 1_000;
    let mut counts = vec![0u64; OFFERS];
    for s in 0..SEEDS {
        let mut shard = ReplayShard::new(CAPACITY, 1)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(s));
        for i in 0..OFFERS {
            shard.offer(tagged(i), &mut rng)?;
        }
        if shard.len() != CAPACITY {
            return Ok((
                false,
                format!("shard holds {} unrolls, expected {CAPACITY}", shard.len()),
            ));
        }
        for u in shard.stored() {
            counts[u.trajectory.observations[0][0] as usize] += 1;
        }
    }
    let (stat, df, p) = chi_square_uniform(&counts);
    Ok((p > 0.001, format!("chi-square {stat:.1} on {df} df, p = {p:.4}")))
}

/// Random-policy Monte Carlo returns within 3 standard errors of the exact
/// Markov-chain expectation, for every task.
fn markov_returns(seed: u64) -> Result<(bool, String)> {
    const EPISODES: usize = 2_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut passed = true;
    let mut parts = Vec::new();
    for id in BUILTIN_TASKS {
        let mut env = make_task(id)?;
        let spec = env.spec().clone();
        let mut total = 0.0;
        for _ in 0..EPISODES {
            env.reset();
            loop {
                let r = env.step(rng.random_range(0..NUM_ACTIONS))?;
                total += r.reward;
                if r.done {
                    break;
                }
            }
        }
        let mean = total / EPISODES as f64;
        let expected = random_policy_return(&spec);
        let se = (random_policy_return_variance(&spec) / EPISODES as f64).sqrt();
        let z = (mean - expected) / se;
        passed &= z.abs() < 3.0;
        parts.push(format!("{id} {mean:.4} vs {expected:.4} (z {z:+.2})"));
    }
    Ok((passed, parts.join(", ")))
}

/// The cyclic tasks disagree on the optimal action in at least half the cells.
fn task_conflict() -> Result<(bool, String)> {
    let ids = ["T1", "T2", "T3"];
    let specs = ids
        .iter()
        .map(|id| TaskSpec::builtin(id))
        .collect::<Result<Vec<_>, _>>()?;
    let mut passed = true;
    let mut parts = Vec::new();
    for i in 0..specs.len() {
        for j in i + 1..specs.len() {
            let c = optimal_action_conflict(&specs[i], &specs[j]);
            passed &= c >= 0.5;
            parts.push(format!("{}/{} {c:.2}", ids[i], ids[j]));
        }
    }
    Ok((passed, parts.join(", ")))
}
