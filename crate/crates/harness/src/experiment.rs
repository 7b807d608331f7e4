//! Protocol execution: training runs, evaluation pools and output files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use clear_core::nn::NetworkParams;
use clear_core::runtime::{run_episode, run_synchronous, run_threaded, stream_rng, RuntimeCounters, WeightsBoard};
use clear_core::tasks::make_task;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, RunPlan};
use crate::error::{HarnessError, Result};
use crate::metrics::{fill_cumulative, write_file, MetricsRecord};
use crate::summary::{metrics_files, summarize, write_summary_files, Summary};

pub const RESOLVED_FILE: &str = "config_resolved.txt";
/// Evaluation RNG of task `j` (position in the experiment's task list) uses
/// stream `EVAL_STREAM_BASE + j`.
pub const EVAL_STREAM_BASE: u64 = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Synchronous single-threaded training with inline evaluation.
    pub deterministic: bool,
    /// Seeds trained concurrently.
    pub parallel_seeds: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            deterministic: true,
            parallel_seeds: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    /// One entry per independent training run of this seed.
    pub counters: Vec<RuntimeCounters>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub runs: Vec<SeedRun>,
    pub summary: Summary,
}

/// Evaluation state of one task: its environment and episode RNG.
struct EvalPool {
    task: String,
    env: clear_core::tasks::GridEnv,
    rng: ChaCha8Rng,
}

impl EvalPool {
    fn new(task: &str, index: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            task: task.to_string(),
            env: make_task(task)?,
            rng: stream_rng(seed, EVAL_STREAM_BASE + index as u64),
        })
    }

    fn evaluate(
        &mut self,
        params: &NetworkParams<f64>,
        episodes: usize,
        frame: u64,
        trained_task: &str,
        seed: u64,
    ) -> clear_core::Result<Vec<MetricsRecord>> {
        (0..episodes)
            .map(|_| {
                Ok(MetricsRecord {
                    run_seed: seed,
                    frame,
                    trained_task: trained_task.to_string(),
                    eval_task: self.task.clone(),
                    episode_return: run_episode(params, &mut self.env, &mut self.rng)?,
                    cumulative_avg: 0.0,
                })
            })
            .collect()
    }
}

fn pools(cfg: &ExperimentConfig, plan: &RunPlan, seed: u64) -> Result<Vec<EvalPool>> {
    let all = cfg.all_tasks();
    plan.eval_tasks
        .iter()
        .map(|t| {
            let index = all.iter().position(|x| x == t).expect("eval task listed");
            EvalPool::new(t, index, seed)
        })
        .collect()
}

/// Trains one plan, evaluating every pool each `cadence_frames` training frames
/// on the first weights published at or after that point.
fn execute_plan(
    cfg: &ExperimentConfig,
    plan: &RunPlan,
    seed: u64,
    deterministic: bool,
) -> Result<(Vec<MetricsRecord>, RuntimeCounters)> {
    let cadence = cfg.eval.cadence_frames;
    let episodes = cfg.eval.episodes;
    let board = WeightsBoard::new(plan.setup.initial_params());
    let mut pools = pools(cfg, plan, seed)?;

    if deterministic {
        let mut records = Vec::new();
        let mut tick = cadence;
        let counters = run_synchronous(&plan.setup, &board, |p| {
            while p.counters.frames >= tick {
                let trained = plan.trained_task_at(tick);
                for pool in &mut pools {
                    records.extend(pool.evaluate(
                        &p.snapshot.params,
                        episodes,
                        tick * plan.frame_scale,
                        &trained,
                        seed,
                    )?);
                }
                tick += cadence;
            }
            Ok(())
        })
        .map_err(HarnessError::from)?;
        return Ok((records, counters));
    }

    let total = plan.setup.total_frames();
    let (tx, rx) = mpsc::channel::<clear_core::Result<Vec<MetricsRecord>>>();
    let counters = std::thread::scope(|scope| {
        for mut pool in pools.drain(..) {
            let tx = tx.clone();
            let board = &board;
            scope.spawn(move || {
                let mut tick = cadence;
                while tick <= total {
                    let (snapshot, reached) = board.wait_for_frames(tick);
                    if !reached {
                        break;
                    }
                    let trained = plan.trained_task_at(tick);
                    let batch = pool.evaluate(&snapshot.params, episodes, tick * plan.frame_scale, &trained, seed);
                    let failed = batch.is_err();
                    if tx.send(batch).is_err() || failed {
                        break;
                    }
                    tick += cadence;
                }
            });
        }
        drop(tx);
        let outcome = run_threaded(&plan.setup, &board, |_| Ok(()));
        // wakes pools waiting on frames that will never come after a failure
        board.close();
        outcome
    })?;
    let mut records = Vec::new();
    for batch in rx {
        records.extend(batch?);
    }
    Ok((records, counters))
}

/// Every training run of one seed, with records in (frame, task) order and
/// cumulative averages filled.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, deterministic: bool) -> Result<SeedRun> {
    let plans = cfg.plan(seed)?;
    let order = cfg.all_tasks();
    let mut records = Vec::new();
    let mut counters = Vec::new();
    for plan in &plans {
        let (r, c) = execute_plan(cfg, plan, seed, deterministic)?;
        records.extend(r);
        counters.push(c);
    }
    let rank = |t: &str| order.iter().position(|x| x == t).unwrap_or(usize::MAX);
    records.sort_by_key(|r| (r.frame, rank(&r.eval_task)));
    fill_cumulative(&mut records);
    Ok(SeedRun {
        seed,
        records,
        counters,
    })
}

/// Runs `seeds` with up to `parallel` of them at a time, returning results in seed order.
pub fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64], opts: RunOptions) -> Result<Vec<SeedRun>> {
    let parallel = opts.parallel_seeds.max(1);
    let mut out = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(parallel) {
        let results: Vec<Result<SeedRun>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| scope.spawn(move || run_seed(cfg, seed, opts.deterministic)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("seed run panicked"))
                .collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

pub fn counters_text(counters: &[RuntimeCounters]) -> String {
    let mut s = String::new();
    for (i, c) in counters.iter().enumerate() {
        let _ = writeln!(s, "[run {i}]");
        let _ = writeln!(s, "batches = {}", c.batches);
        let _ = writeln!(s, "frames = {}", c.frames);
        for (task, frames) in &c.frames_per_task {
            let _ = writeln!(s, "frames.{task} = {frames}");
        }
        let _ = writeln!(s, "new_slots = {}", c.new_slots);
        let _ = writeln!(s, "replay_slots = {}", c.replay_slots);
        let _ = writeln!(s, "cold_start_fallbacks = {}", c.cold_start_fallbacks);
        let _ = writeln!(s, "floor_hits = {}", c.floor_hits);
        let _ = writeln!(s, "weights_version = {}", c.weights_version);
        let _ = writeln!(s, "frames_stored = {}", c.frames_stored);
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Validates, runs every seed, and writes the resolved config, one metrics
/// file and counters file per seed, `summary.csv` and `final_table.csv` into `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path, opts: RunOptions) -> Result<ExperimentOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    write_text(&dir.join(RESOLVED_FILE), &cfg.resolved())?;
    // files left by an earlier run with other seeds would leak into the summary
    for stale in metrics_files(dir)? {
        std::fs::remove_file(&stale).map_err(|e| HarnessError::io(&stale, e))?;
    }
    let runs = run_seeds(cfg, &cfg.run.seeds, opts)?;
    for run in &runs {
        write_file(&dir.join(format!("metrics_{}.csv", run.seed)), &run.records)?;
        write_text(
            &dir.join(format!("counters_{}.txt", run.seed)),
            &counters_text(&run.counters),
        )?;
    }
    let all: Vec<Vec<MetricsRecord>> = runs.iter().map(|r| r.records.clone()).collect();
    let summary = summarize(&all)?;
    write_summary_files(dir, &cfg.name, &summary)?;
    Ok(ExperimentOutput {
        dir: dir.to_path_buf(),
        runs,
        summary,
    })
}
