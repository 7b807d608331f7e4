use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{sample_action, HiddenState, NetworkParams};
use crate::replay::ReplayShard;
use crate::tasks::{make_task, GridEnv};
use crate::unroll::{Trajectory, Unroll};

/// One element of the learner queue.
#[derive(Debug, Clone)]
pub struct UnrollPair {
    pub new: Arc<Unroll>,
    /// Absent only while the producing actor's shard is empty.
    pub replay: Option<Arc<Unroll>>,
    pub actor_id: usize,
    /// Weights version the new unroll was generated with.
    pub weights_version: u64,
}

/// Seeded generator for a named stream of a run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const ACTOR_STREAM_BASE: u64 = 1_000;

/// An acting network with its own environment and replay shard.
#[derive(Debug)]
pub struct Actor {
    id: usize,
    unroll_length: usize,
    shard: ReplayShard,
    rng: ChaCha8Rng,
    env: Option<GridEnv>,
    hidden: HiddenState<f64>,
    observation: Vec<f64>,
}

impl Actor {
    pub fn new(id: usize, unroll_length: usize, shard: ReplayShard, hidden_dim: usize, seed: u64) -> Self {
        Self {
            id,
            unroll_length,
            shard,
            rng: stream_rng(seed, ACTOR_STREAM_BASE + id as u64),
            env: None,
            hidden: HiddenState::zeros(hidden_dim),
            observation: Vec::new(),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shard(&self) -> &ReplayShard {
        &self.shard
    }

    /// Acts for one unroll on `task`, inserts it into the shard, samples a
    /// replay unroll, and returns the pair. Switching task starts a fresh episode.
    pub fn produce(&mut self, task: &str, params: &NetworkParams<f64>, version: u64) -> Result<UnrollPair> {
        let switch = self.env.as_ref().is_none_or(|e| e.spec().id != task);
        if switch {
            let mut env = make_task(task)?;
            self.observation = env.reset();
            self.hidden.reset();
            self.env = Some(env);
        }
        let env = self.env.as_mut().expect("environment set above");
        let actions_n = params.shape().actions;
        let n = self.unroll_length;

        let initial_hidden = self.hidden.clone();
        let mut observations = Vec::with_capacity(n);
        let mut behavior_logits = Vec::with_capacity(n * actions_n);
        let mut behavior_values = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        let mut logits = vec![0.0; actions_n];
        for _ in 0..n {
            let value = params.step(&self.observation, &mut self.hidden, &mut logits)?;
            let action = sample_action(&logits, &mut self.rng);
            let result = env.step(action)?;
            observations.push(std::mem::replace(&mut self.observation, result.observation));
            behavior_logits.extend_from_slice(&logits);
            behavior_values.push(value);
            actions.push(action);
            rewards.push(result.reward);
            dones.push(result.done);
            if result.done {
                self.observation = env.reset();
                self.hidden.reset();
            }
        }
        let trajectory = Trajectory {
            observations,
            bootstrap_observation: self.observation.clone(),
            behavior_logits,
            behavior_values,
            actions,
            rewards,
            dones,
            initial_hidden,
            num_actions: actions_n,
        };
        let unroll = Unroll::new(trajectory, task);
        let new = Arc::new(unroll.clone());
        self.shard.offer(unroll, &mut self.rng)?;
        let replay = self.shard.sample(&mut self.rng).ok();
        Ok(UnrollPair {
            new,
            replay,
            actor_id: self.id,
            weights_version: version,
        })
    }
}

/// Plays one evaluation episode from a reset, sampling actions from the
/// policy. Returns the undiscounted episode return.
pub fn run_episode<R: rand::Rng + ?Sized>(params: &NetworkParams<f64>, env: &mut GridEnv, rng: &mut R) -> Result<f64> {
    let mut obs = env.reset();
    let mut hidden = HiddenState::zeros(params.shape().hidden);
    let mut logits = vec![0.0; params.shape().actions];
    let mut total = 0.0;
    loop {
        params.step(&obs, &mut hidden, &mut logits)?;
        let action = sample_action(&logits, rng);
        let r = env.step(action)?;
        total += r.reward;
        if r.done {
            return Ok(total);
        }
        obs = r.observation;
    }
}
