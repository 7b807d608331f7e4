use std::collections::BTreeMap;

use clear_core::losses::LossWeights;
use clear_core::nn::{HiddenState, NetworkShape, RmsPropConfig};
use clear_core::replay::ReplayShard;
use clear_core::runtime::{
    run_synchronous, run_threaded, stream_rng, Actor, Learner, LearnerConfig, PairView, RunSetup, RuntimeConfig,
    Segment, UnrollPair, WeightsBoard,
};
use clear_core::tasks::TaskSpec;
use clear_core::vtrace::VTraceConfig;
use clear_core::Network;

fn shape() -> NetworkShape {
    let obs = TaskSpec::builtin("T1").unwrap().obs_dim();
    NetworkShape::new(obs, 16, 4).unwrap()
}

fn learner_config(n: usize, ratio: f64) -> LearnerConfig {
    LearnerConfig {
        new_ratio: ratio,
        vtrace: VTraceConfig {
            unroll_length: n,
            ..VTraceConfig::default()
        },
        weights: LossWeights::default(),
        optimizer: RmsPropConfig::default(),
    }
}

fn setup(actors: usize, batch: usize, n: usize, ratio: f64, segments: Vec<Segment>) -> RunSetup {
    let mut s = RunSetup {
        runtime: RuntimeConfig {
            actors,
            batch_size: batch,
            unroll_length: n,
            seed: 11,
        },
        learner: learner_config(n, ratio),
        shape: shape(),
        replay_capacity_frames: 0,
        segments,
    };
    s.replay_capacity_frames = s.total_frames() as usize / 2;
    s
}

#[test]
fn one_actor_budget_of_ten_unrolls() {
    let s = setup(1, 1, 20, 1.0, vec![Segment::single("T1", 10)]);
    assert_eq!(s.total_frames(), 200);
    for threaded in [false, true] {
        let board = WeightsBoard::new(s.initial_params());
        let mut seen = 0;
        let observe = |p: &clear_core::runtime::Progress<'_>| {
            seen += 1;
            assert_eq!(p.actors, &[0]);
            Ok(())
        };
        let counters = if threaded {
            run_threaded(&s, &board, observe).unwrap()
        } else {
            run_synchronous(&s, &board, observe).unwrap()
        };
        assert_eq!(seen, 10);
        assert_eq!(counters.batches, 10);
        assert_eq!(counters.frames, 200);
        assert_eq!(counters.weights_version, 10);
        assert!(board.is_closed());
    }
}

#[test]
fn cold_start_falls_back_to_new_unroll() {
    let n = 5;
    let p = Network::init(shape(), &mut stream_rng(1, 0));
    // capacity below one unroll: the shard can never hold anything
    let mut actor = Actor::new(0, n, ReplayShard::new(n - 1, n).unwrap(), 16, 1);
    let pair = actor.produce("T1", &p, 0).unwrap();
    assert!(pair.replay.is_none());

    let mut learner = Learner::new(learner_config(n, 0.0), p.clone(), stream_rng(1, 1)).unwrap();
    let stats = learner
        .train_batch(&[PairView {
            new: &pair.new.trajectory,
            replay: None,
        }])
        .unwrap();
    assert_eq!(stats.cold_start_fallbacks, 1);
    assert_eq!(stats.new_slots, 1);
    assert_eq!(stats.replay_slots, 0);

    // with room in the shard the first pair already carries a replay unroll
    let mut roomy = Actor::new(1, n, ReplayShard::new(10 * n, n).unwrap(), 16, 1);
    assert!(roomy.produce("T1", &p, 0).unwrap().replay.is_some());
}

#[test]
fn recorded_logits_come_from_the_acting_weights() {
    let n = 20;
    let old = Network::init(shape(), &mut stream_rng(2, 0));
    let newer = Network::init(shape(), &mut stream_rng(3, 0));
    let mut actor = Actor::new(0, n, ReplayShard::new(100, n).unwrap(), 16, 2);
    actor.produce("T2", &newer, 1).unwrap();
    let pair = actor.produce("T2", &old, 0).unwrap();
    let t = &pair.new.trajectory;
    let trace = old
        .forward(&t.observations, &t.resets_with_bootstrap()[..n], &t.initial_hidden)
        .unwrap();
    assert_eq!(trace.logits, t.behavior_logits);
    assert_eq!(trace.values, t.behavior_values);
    let fresh = newer
        .forward(&t.observations, &t.resets_with_bootstrap()[..n], &t.initial_hidden)
        .unwrap();
    assert_ne!(fresh.logits, t.behavior_logits);
    assert_eq!(pair.weights_version, 0);
}

fn produce_batch(batch: usize, n: usize, seed: u64, params: &Network) -> Vec<UnrollPair> {
    (0..batch)
        .map(|i| {
            let mut actor = Actor::new(i, n, ReplayShard::new(10 * n, n).unwrap(), 16, seed);
            let task = ["T1", "T2", "T3"][i % 3];
            actor.produce(task, params, 0).unwrap();
            actor.produce(task, params, 0).unwrap()
        })
        .collect()
}

fn views(pairs: &[UnrollPair]) -> Vec<PairView<'_>> {
    pairs
        .iter()
        .map(|p| PairView {
            new: &p.new.trajectory,
            replay: p.replay.as_deref().map(|u| &u.trajectory),
        })
        .collect()
}

#[test]
fn slot_counts_follow_ratio() {
    let n = 10;
    let p = Network::init(shape(), &mut stream_rng(4, 0));
    let pairs = produce_batch(8, n, 4, &p);
    // the learner starts from other weights so that pi differs from mu
    let q = Network::init(shape(), &mut stream_rng(40, 0));
    for (ratio, new, replay) in [(0.5, 4, 4), (1.0, 8, 0), (0.0, 0, 8), (0.75, 6, 2), (0.3, 3, 5)] {
        let mut learner = Learner::new(learner_config(n, ratio), q.clone(), stream_rng(4, 1)).unwrap();
        let stats = learner.train_batch(&views(&pairs)).unwrap();
        assert_eq!((stats.new_slots, stats.replay_slots), (new, replay), "ratio {ratio}");
        assert_eq!(stats.cold_start_fallbacks, 0);
        if replay == 0 {
            assert_eq!(stats.loss.policy_cloning, 0.0);
        } else {
            assert!(stats.loss.policy_cloning > 0.0);
        }
    }
}

#[test]
fn training_ignores_task_labels() {
    let n = 10;
    let p = Network::init(shape(), &mut stream_rng(5, 0));
    let pairs = produce_batch(6, n, 5, &p);
    let corrupted: Vec<UnrollPair> = pairs
        .iter()
        .map(|pair| {
            let mut new = (*pair.new).clone();
            new.meta.task = "T9".into();
            let replay = pair.replay.as_ref().map(|r| {
                let mut r = (**r).clone();
                r.meta.task.clear();
                r.meta.reservoir_key = 0.5;
                std::sync::Arc::new(r)
            });
            UnrollPair {
                new: std::sync::Arc::new(new),
                replay,
                ..pair.clone()
            }
        })
        .collect();
    let train = |pairs: &[UnrollPair]| {
        let mut learner = Learner::new(learner_config(n, 0.5), p.clone(), stream_rng(5, 1)).unwrap();
        for _ in 0..3 {
            learner.train_batch(&views(pairs)).unwrap();
        }
        learner.params().clone()
    };
    assert_eq!(train(&pairs), train(&corrupted));
}

#[test]
fn synchronous_runs_are_reproducible() {
    let segs = vec![Segment::single("T1", 12), Segment::single("T2", 12)];
    let s = setup(4, 4, 10, 0.5, segs);
    let run = || {
        let board = WeightsBoard::new(s.initial_params());
        let mut losses = Vec::new();
        let counters = run_synchronous(&s, &board, |p| {
            losses.push(p.stats.loss.total);
            Ok(())
        })
        .unwrap();
        (counters, losses, board.fetch().params)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

#[test]
fn threaded_run_consumes_exact_budget_from_distinct_actors() {
    let segs = vec![
        Segment::single("T1", 13),
        Segment {
            tasks: vec!["T2".into(), "T3".into()],
            unrolls_per_task: 7,
        },
        Segment::single("T4", 5),
    ];
    let s = setup(6, 4, 10, 0.5, segs);
    let board = WeightsBoard::new(s.initial_params());
    let mut segments_seen = Vec::new();
    let counters = run_threaded(&s, &board, |p| {
        let mut ids = p.actors.to_vec();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), p.actors.len());
        assert_eq!(p.stats.new_slots + p.stats.replay_slots, p.actors.len());
        segments_seen.push(p.segment);
        Ok(())
    })
    .unwrap();
    let want: BTreeMap<String, u64> = [("T1", 130), ("T2", 70), ("T3", 70), ("T4", 50)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    assert_eq!(counters.frames_per_task, want);
    assert_eq!(counters.frames, 320);
    assert!(segments_seen.windows(2).all(|w| w[0] <= w[1]));
    // partial final batches: 13 = 4+4+4+1, 14 = 4+4+4+2, 5 = 4+1
    assert_eq!(counters.batches, 4 + 4 + 2);
}

#[test]
fn observer_error_stops_threaded_run() {
    let s = setup(3, 2, 10, 1.0, vec![Segment::single("T1", 40)]);
    let board = WeightsBoard::new(s.initial_params());
    let mut calls = 0;
    let err = run_threaded(&s, &board, |_| {
        calls += 1;
        if calls == 3 {
            Err(clear_core::Error::Closed)
        } else {
            Ok(())
        }
    })
    .unwrap_err();
    assert_eq!(err, clear_core::Error::Closed);
    assert!(board.is_closed());
}

#[test]
fn setup_validation() {
    let mut s = setup(2, 4, 10, 0.5, vec![Segment::single("T1", 4)]);
    assert!(s.validate().is_err());
    s.runtime.batch_size = 2;
    s.validate().unwrap();
    s.learner.vtrace.unroll_length = 11;
    assert!(s.validate().is_err());
    s.learner.vtrace.unroll_length = 10;
    s.segments.clear();
    assert!(s.validate().is_err());
    let hidden = HiddenState::<f64>::zeros(3);
    assert_eq!(hidden.dim(), 3);
}
