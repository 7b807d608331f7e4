use std::collections::BTreeMap;

use crossbeam_channel::{bounded, Receiver, Sender};

use crate::error::{config_err, Error, Result};
use crate::nn::{NetworkParams, NetworkShape};
use crate::replay::ReplayShard;
use crate::runtime::actor::{stream_rng, Actor, UnrollPair};
use crate::runtime::board::{Snapshot, WeightsBoard};
use crate::runtime::learner::{BatchStats, Learner, LearnerConfig, PairView};
use crate::runtime::schedule::{Scheduler, Segment};

const INIT_STREAM: u64 = 0;
const LEARNER_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuntimeConfig {
    pub actors: usize,
    pub batch_size: usize,
    pub unroll_length: usize,
    pub seed: u64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            actors: 8,
            batch_size: 8,
            unroll_length: 20,
            seed: 1,
        }
    }
}

impl RuntimeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.actors == 0 || self.batch_size == 0 || self.unroll_length == 0 {
            return Err(config_err("actors, batch size and unroll length must be >= 1"));
        }
        if self.batch_size > self.actors {
            return Err(config_err(format!(
                "batch size {} exceeds actor count {}; batch slots must come from distinct actors",
                self.batch_size, self.actors
            )));
        }
        Ok(())
    }
}

/// Everything needed for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSetup {
    pub runtime: RuntimeConfig,
    pub learner: LearnerConfig,
    pub shape: NetworkShape,
    /// Global replay capacity in frames, split across actor shards. Zero disables replay.
    pub replay_capacity_frames: usize,
    pub segments: Vec<Segment>,
}

impl RunSetup {
    pub fn validate(&self) -> Result<()> {
        self.runtime.validate()?;
        self.learner.validate()?;
        if self.learner.vtrace.unroll_length != self.runtime.unroll_length {
            return Err(config_err("V-Trace and runtime disagree on unroll length"));
        }
        if self.segments.is_empty() {
            return Err(config_err("training plan has no segments"));
        }
        self.segments.iter().try_for_each(Segment::validate)
    }

    pub fn total_frames(&self) -> u64 {
        self.segments
            .iter()
            .map(|s| (s.total_unrolls() * self.runtime.unroll_length) as u64)
            .sum()
    }

    /// Seeded initial weights (version 0).
    pub fn initial_params(&self) -> NetworkParams<f64> {
        NetworkParams::init(self.shape, &mut stream_rng(self.runtime.seed, INIT_STREAM))
    }

    fn actors(&self) -> Result<Vec<Actor>> {
        let rt = &self.runtime;
        let shards = ReplayShard::split(self.replay_capacity_frames, rt.actors, rt.unroll_length)?;
        Ok(shards
            .into_iter()
            .enumerate()
            .map(|(i, shard)| Actor::new(i, rt.unroll_length, shard, self.shape.hidden, rt.seed))
            .collect())
    }

    fn learner(&self, board: &WeightsBoard) -> Result<Learner> {
        let params = (*board.fetch().params).clone();
        if params.shape() != self.shape {
            return Err(config_err("board weights do not match the configured network shape"));
        }
        Learner::new(self.learner, params, stream_rng(self.runtime.seed, LEARNER_STREAM))
    }
}

/// Runtime counters exported to the harness.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuntimeCounters {
    pub batches: u64,
    pub frames: u64,
    pub frames_per_task: BTreeMap<String, u64>,
    pub new_slots: u64,
    pub replay_slots: u64,
    pub cold_start_fallbacks: u64,
    pub floor_hits: u64,
    pub weights_version: u64,
    /// Frames stored across all shards at the end of the run.
    pub frames_stored: u64,
}

impl RuntimeCounters {
    fn record(&mut self, stats: &BatchStats, frames: u64) {
        self.batches += 1;
        self.frames += frames;
        self.new_slots += stats.new_slots as u64;
        self.replay_slots += stats.replay_slots as u64;
        self.cold_start_fallbacks += stats.cold_start_fallbacks as u64;
        self.floor_hits += stats.loss.floor_hits as u64;
    }
}

/// Reported to the observer after every learner step.
#[derive(Debug)]
pub struct Progress<'a> {
    pub segment: usize,
    pub snapshot: &'a Snapshot,
    pub stats: &'a BatchStats,
    pub counters: &'a RuntimeCounters,
    /// Producing actor of each pair in the batch.
    pub actors: &'a [usize],
}

fn batch_actors(pairs: &[UnrollPair]) -> Result<Vec<usize>> {
    let ids: Vec<usize> = pairs.iter().map(|p| p.actor_id).collect();
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(config_err(format!("batch holds two pairs from one actor: {ids:?}")));
    }
    Ok(ids)
}

fn train_pairs(learner: &mut Learner, pairs: &[UnrollPair]) -> Result<BatchStats> {
    let views: Vec<PairView<'_>> = pairs
        .iter()
        .map(|p| PairView {
            new: &p.new.trajectory,
            replay: p.replay.as_deref().map(|u| &u.trajectory),
        })
        .collect();
    learner.train_batch(&views)
}

/// Fully synchronous execution on the calling thread. Actors take turns in a
/// fixed rotation and always act with the latest weights, so a run is a pure
/// function of its setup.
pub fn run_synchronous<F>(setup: &RunSetup, board: &WeightsBoard, mut observer: F) -> Result<RuntimeCounters>
where
    F: FnMut(&Progress<'_>) -> Result<()>,
{
    setup.validate()?;
    let rt = setup.runtime;
    let mut actors = setup.actors()?;
    let mut learner = setup.learner(board)?;
    let scheduler = Scheduler::new(rt.unroll_length);
    let mut counters = RuntimeCounters::default();
    let mut cursor = 0;
    for (index, segment) in setup.segments.iter().enumerate() {
        scheduler.start_segment(index, segment);
        let mut remaining = segment.total_unrolls();
        while remaining > 0 {
            let k = rt.batch_size.min(remaining);
            let snapshot = board.fetch();
            let mut pairs = Vec::with_capacity(k);
            for _ in 0..k {
                let actor = &mut actors[cursor % rt.actors];
                cursor += 1;
                let claim = scheduler
                    .try_claim(actor.id())
                    .ok_or_else(|| config_err("segment budget exhausted early"))?;
                pairs.push(actor.produce(&claim.task, &snapshot.params, snapshot.version)?);
            }
            let actor_ids = batch_actors(&pairs)?;
            let stats = train_pairs(&mut learner, &pairs)?;
            let frames = (k * rt.unroll_length) as u64;
            counters.record(&stats, frames);
            counters.weights_version = board.publish(learner.params().clone(), counters.frames);
            remaining -= k;
            let snapshot = board.fetch();
            observer(&Progress {
                segment: index,
                snapshot: &snapshot,
                stats: &stats,
                counters: &counters,
                actors: &actor_ids,
            })?;
        }
    }
    counters.frames_per_task = scheduler.claimed_frames();
    counters.frames_stored = actors.iter().map(|a| a.shard().frames_stored() as u64).sum();
    board.close();
    Ok(counters)
}

type QueueItem = Result<UnrollPair>;

fn actor_thread(
    mut actor: Actor,
    scheduler: &Scheduler,
    board: &WeightsBoard,
    queue: Sender<QueueItem>,
    ack: Receiver<()>,
) -> Actor {
    while let Some(claim) = scheduler.claim(actor.id()) {
        let snapshot = board.fetch();
        let item = actor.produce(&claim.task, &snapshot.params, snapshot.version);
        let failed = item.is_err();
        if queue.send(item).is_err() || failed {
            break;
        }
        // wait until the learner has read this pair
        if ack.recv().is_err() {
            break;
        }
    }
    actor
}

/// Multi-threaded execution: one thread per actor, the learner on the calling
/// thread. Each actor keeps at most one pair in the queue and waits for the
/// learner to consume it before producing the next.
pub fn run_threaded<F>(setup: &RunSetup, board: &WeightsBoard, mut observer: F) -> Result<RuntimeCounters>
where
    F: FnMut(&Progress<'_>) -> Result<()>,
{
    setup.validate()?;
    let rt = setup.runtime;
    let actors = setup.actors()?;
    let mut learner = setup.learner(board)?;
    let scheduler = Scheduler::new(rt.unroll_length);
    let (queue_tx, queue_rx) = bounded::<QueueItem>(rt.actors);
    let (ack_txs, ack_rxs): (Vec<Sender<()>>, Vec<Receiver<()>>) = (0..rt.actors).map(|_| bounded(1)).unzip();

    std::thread::scope(|scope| {
        let handles: Vec<_> = actors
            .into_iter()
            .zip(ack_rxs)
            .map(|(actor, ack)| {
                let queue = queue_tx.clone();
                let scheduler = &scheduler;
                scope.spawn(move || actor_thread(actor, scheduler, board, queue, ack))
            })
            .collect();
        drop(queue_tx);

        let mut counters = RuntimeCounters::default();
        let mut learn = || -> Result<()> {
            for (index, segment) in setup.segments.iter().enumerate() {
                scheduler.start_segment(index, segment);
                let mut remaining = segment.total_unrolls();
                while remaining > 0 {
                    let k = rt.batch_size.min(remaining);
                    let mut pairs = Vec::with_capacity(k);
                    while pairs.len() < k {
                        let item = queue_rx.recv().map_err(|_| Error::Closed)?;
                        pairs.push(item?);
                    }
                    let actor_ids = batch_actors(&pairs)?;
                    let stats = train_pairs(&mut learner, &pairs)?;
                    counters.record(&stats, (k * rt.unroll_length) as u64);
                    counters.weights_version = board.publish(learner.params().clone(), counters.frames);
                    for p in &pairs {
                        // a closed ack channel only means that actor already stopped
                        let _ = ack_txs[p.actor_id].send(());
                    }
                    remaining -= k;
                    let snapshot = board.fetch();
                    observer(&Progress {
                        segment: index,
                        snapshot: &snapshot,
                        stats: &stats,
                        counters: &counters,
                        actors: &actor_ids,
                    })?;
                }
            }
            Ok(())
        };
        let outcome = learn();
        scheduler.finish();
        drop(ack_txs);
        drop(queue_rx);
        let actors: Vec<Actor> = handles
            .into_iter()
            .map(|h| h.join().expect("actor thread panicked"))
            .collect();
        board.close();
        outcome?;
        counters.frames_per_task = scheduler.claimed_frames();
        counters.frames_stored = actors.iter().map(|a| a.shard().frames_stored() as u64).sum();
        Ok(counters)
    })
}
