use clear_harness::analysis::windows;
use clear_harness::metrics::{cumulative_average, read_file};
use clear_harness::{run_experiment, run_seed, ExperimentConfig, Protocol, RunOptions};

/// Small deterministic config: 3 tasks, short segments, tiny network.
fn small(protocol: Protocol) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        name: "test".into(),
        protocol,
        ..ExperimentConfig::default()
    };
    cfg.schedule.segment_frames = 400;
    cfg.schedule.cycles = 2;
    cfg.runtime.actors = 4;
    cfg.runtime.batch_size = 4;
    cfg.network.hidden = 8;
    cfg.eval.cadence_frames = 200;
    cfg.run.seeds = vec![5];
    cfg.run.deterministic = true;
    cfg
}

#[test]
fn sequential_budget_is_exact() {
    let mut cfg = small(Protocol::Sequential);
    cfg.schedule.segment_frames = 10_000;
    cfg.eval.cadence_frames = 20_000;
    assert_eq!(cfg.total_frames().unwrap(), 60_000);
    let run = run_seed(&cfg, 1, true).unwrap();
    let c = &run.counters[0];
    assert_eq!(c.frames, 60_000);
    for task in ["T1", "T2", "T3"] {
        assert_eq!(c.frames_per_task[task], 20_000);
    }
}

#[test]
fn probe_is_trained_once_at_its_position() {
    for k in 0..=3 {
        let mut cfg = small(Protocol::Sequential);
        cfg.schedule.cycles = 1;
        cfg.schedule.probe_task = Some("T4".into());
        cfg.schedule.probe_position = Some(k);
        let labels: Vec<String> = cfg.sequential_segments().unwrap().iter().map(|s| s.label()).collect();
        assert_eq!(labels.iter().filter(|l| *l == "T4").count(), 1);
        assert_eq!(labels[k], "T4");

        let plan = &cfg.plan(5).unwrap()[0];
        let run = run_seed(&cfg, 5, true).unwrap();
        assert_eq!(run.counters[0].frames_per_task["T4"], 400);
        let probe = &windows(plan)[k];
        for r in &run.records {
            assert_eq!(r.trained_task == "T4", probe.contains(r.frame), "frame {}", r.frame);
        }
    }
    let mut cfg = small(Protocol::Sequential);
    cfg.schedule.probe_task = Some("T4".into());
    cfg.schedule.probe_position = Some(8);
    assert!(cfg.validate().is_err());
}

#[test]
fn every_task_is_evaluated_while_another_trains() {
    let cfg = small(Protocol::Sequential);
    let run = run_seed(&cfg, 5, true).unwrap();
    let ticks = cfg.total_frames().unwrap() / cfg.eval.cadence_frames;
    assert_eq!(run.records.len() as u64, ticks * 3);
    let during_t1: Vec<_> = run.records.iter().filter(|r| r.trained_task == "T1").collect();
    for task in ["T2", "T3"] {
        assert!(during_t1.iter().any(|r| r.eval_task == task));
    }
    // evaluation does not count towards training frames
    assert_eq!(run.counters[0].frames, cfg.total_frames().unwrap());
}

#[test]
fn baseline_never_touches_replay() {
    let mut cfg = small(Protocol::Sequential);
    cfg.runtime.new_ratio = 1.0;
    cfg.replay.capacity_frames = Some(0);
    let c = &run_seed(&cfg, 5, true).unwrap().counters[0];
    assert_eq!((c.replay_slots, c.frames_stored, c.cold_start_fallbacks), (0, 0, 0));
    assert_eq!(c.new_slots * 20, c.frames);
}

#[test]
fn simultaneous_splits_frames_evenly() {
    let cfg = small(Protocol::Simultaneous);
    let run = run_seed(&cfg, 5, true).unwrap();
    let c = &run.counters[0];
    assert_eq!(c.frames, 2400);
    assert!(c.frames_per_task.values().all(|&f| f == 800));
    assert!(run.records.iter().all(|r| r.trained_task == "T1+T2+T3"));
}

#[test]
fn separate_runs_report_summed_frames() {
    let cfg = small(Protocol::Separate);
    let plans = cfg.plan(5).unwrap();
    assert_eq!(plans.len(), 3);
    let run = run_seed(&cfg, 5, true).unwrap();
    assert_eq!(run.counters.len(), 3);
    for (plan, c) in plans.iter().zip(&run.counters) {
        assert_eq!(c.frames, 800);
        assert_eq!(plan.eval_tasks.len(), 1);
    }
    let frames: Vec<u64> = run
        .records
        .iter()
        .filter(|r| r.eval_task == "T2")
        .map(|r| r.frame)
        .collect();
    assert_eq!(frames, vec![600, 1200, 1800, 2400]);
    assert!(run.records.iter().all(|r| r.trained_task == r.eval_task));
}

#[test]
fn frozen_weights_give_stationary_returns() {
    let mut cfg = small(Protocol::Sequential);
    cfg.schedule.tasks = vec!["T1".into()];
    cfg.schedule.cycles = 1;
    cfg.schedule.segment_frames = 4000;
    cfg.eval.cadence_frames = 40;
    cfg.loss.policy_gradient = 0.0;
    cfg.loss.value = 0.0;
    cfg.loss.entropy = 0.0;
    cfg.loss.policy_cloning = 0.0;
    cfg.loss.value_cloning = 0.0;
    let run = run_seed(&cfg, 9, true).unwrap();
    let ys: Vec<f64> = run.records.iter().map(|r| r.episode_return).collect();
    assert_eq!(ys.len(), 100);
    // least-squares slope against episode index, compared with its standard error
    let n = ys.len() as f64;
    let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx;
    let resid: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - my - slope * (x - mx);
            e * e
        })
        .sum();
    let se = (resid / (n - 2.0) / sxx).sqrt();
    assert!(slope.abs() < 3.0 * se.max(1e-12), "slope {slope} se {se}");
}

#[test]
fn experiment_outputs_and_cumulative_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Protocol::Sequential);
    cfg.run.seeds = vec![1, 2];
    let out = run_experiment(&cfg, dir.path(), RunOptions::default()).unwrap();
    for f in [
        "config_resolved.txt",
        "metrics_1.csv",
        "metrics_2.csv",
        "summary.csv",
        "final_table.csv",
    ] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let resolved = std::fs::read_to_string(dir.path().join("config_resolved.txt")).unwrap();
    assert_eq!(ExperimentConfig::parse(&resolved).unwrap(), cfg);

    let records = read_file(&dir.path().join("metrics_1.csv")).unwrap();
    for task in ["T1", "T2", "T3"] {
        let mine: Vec<_> = records.iter().filter(|r| r.eval_task == task).collect();
        let returns: Vec<f64> = mine.iter().map(|r| r.episode_return).collect();
        for (r, want) in mine.iter().zip(cumulative_average(&returns)) {
            assert!((r.cumulative_avg - want).abs() < 1e-9);
        }
    }
    assert_eq!(out.summary.finals.len(), 3);

    let summary = std::fs::read(dir.path().join("summary.csv")).unwrap();
    let again = tempfile::tempdir().unwrap();
    run_experiment(&cfg, again.path(), RunOptions::default()).unwrap();
    assert_eq!(summary, std::fs::read(again.path().join("summary.csv")).unwrap());
}

type Mutation = Box<dyn Fn(&mut ExperimentConfig)>;

#[test]
fn invalid_schedules_are_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("never");
    let cases: Vec<Mutation> = vec![
        Box::new(|c| c.schedule.segment_frames = 0),
        Box::new(|c| c.schedule.segment_frames = 410),
        Box::new(|c| c.schedule.tasks = vec![]),
        Box::new(|c| c.schedule.tasks = vec!["T9".into()]),
        Box::new(|c| c.schedule.cycles = 0),
        Box::new(|c| c.runtime.new_ratio = 1.5),
        Box::new(|c| c.runtime.batch_size = 9),
        Box::new(|c| c.schedule.probe_task = Some("T4".into())),
        Box::new(|c| {
            c.protocol = Protocol::Simultaneous;
            c.schedule.probe_task = Some("T4".into());
            c.schedule.probe_position = Some(0);
        }),
    ];
    for (i, mutate) in cases.iter().enumerate() {
        let mut cfg = small(Protocol::Sequential);
        mutate(&mut cfg);
        assert!(
            run_experiment(&cfg, &target, RunOptions::default()).is_err(),
            "case {i}"
        );
        assert!(!target.exists(), "case {i} created output");
    }
}

#[test]
fn threaded_mode_fills_the_same_grid() {
    let cfg = small(Protocol::Sequential);
    let threaded = run_seed(&cfg, 5, false).unwrap();
    let sync = run_seed(&cfg, 5, true).unwrap();
    let grid = |r: &clear_harness::SeedRun| -> Vec<(u64, String, String)> {
        r.records
            .iter()
            .map(|x| (x.frame, x.eval_task.clone(), x.trained_task.clone()))
            .collect()
    };
    assert_eq!(grid(&threaded), grid(&sync));
    assert_eq!(threaded.counters[0].frames_per_task, sync.counters[0].frames_per_task);
}
