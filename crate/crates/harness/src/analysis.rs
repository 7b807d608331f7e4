//! Post-hoc measurements on evaluation records: final cumulative values,
//! seed-mean curves, forgetting drops and probe performance.

use std::collections::BTreeMap;

use crate::config::RunPlan;
use crate::experiment::SeedRun;
use crate::metrics::MetricsRecord;

/// A training segment in recorded frames: frames in `(start, end]` belong to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub label: String,
    pub start: u64,
    pub end: u64,
}

impl Window {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// The trailing `fraction` of the window.
    pub fn tail(&self, fraction: f64) -> Window {
        let keep = (self.len() as f64 * fraction).round() as u64;
        Window {
            label: self.label.clone(),
            start: self.end - keep.min(self.len()),
            end: self.end,
        }
    }

    pub fn contains(&self, frame: u64) -> bool {
        frame > self.start && frame <= self.end
    }
}

pub fn windows(plan: &RunPlan) -> Vec<Window> {
    let n = plan.setup.runtime.unroll_length as u64;
    let mut start = 0;
    plan.setup
        .segments
        .iter()
        .map(|s| {
            let end = start + s.total_unrolls() as u64 * n * plan.frame_scale;
            let w = Window {
                label: s.label(),
                start,
                end,
            };
            start = end;
            w
        })
        .collect()
}

/// Last cumulative average of each evaluated task.
pub fn final_cumulative(records: &[MetricsRecord]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for r in records {
        out.insert(r.eval_task.clone(), r.cumulative_avg);
    }
    out
}

/// Seed mean of [`final_cumulative`].
pub fn mean_final_cumulative(runs: &[SeedRun]) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for run in runs {
        for (task, v) in final_cumulative(&run.records) {
            *sums.entry(task).or_default() += v;
        }
    }
    sums.values_mut().for_each(|v| *v /= runs.len() as f64);
    sums
}

/// Mean return of `task` at each evaluated frame, over episodes and seeds.
pub fn mean_curve(runs: &[SeedRun], task: &str) -> Vec<(u64, f64)> {
    let mut acc: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for r in runs.iter().flat_map(|r| &r.records).filter(|r| r.eval_task == task) {
        let e = acc.entry(r.frame).or_default();
        e.0 += r.episode_return;
        e.1 += 1;
    }
    acc.into_iter().map(|(f, (s, c))| (f, s / c as f64)).collect()
}

/// Trailing moving average over `window` points (shorter at the start).
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

fn mean_in(curve: &[(u64, f64)], w: &Window) -> Option<f64> {
    let pts: Vec<f64> = curve.iter().filter(|(f, _)| w.contains(*f)).map(|p| p.1).collect();
    (!pts.is_empty()).then(|| pts.iter().sum::<f64>() / pts.len() as f64)
}

/// Performance of one task around the end of one of its training segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Drop {
    pub task: String,
    /// Index of the training segment in the schedule.
    pub segment: usize,
    /// Mean over the last 20% of the training segment.
    pub peak: f64,
    /// Lowest moving average over the following segment.
    pub trough: f64,
}

impl Drop {
    pub fn forgot(&self) -> bool {
        self.peak > 0.0 && self.trough < 0.5 * self.peak
    }
}

/// For every segment training `task` that has a successor, the end-of-segment
/// level and the lowest `smooth`-point moving average reached during the next segment.
pub fn drops(curve: &[(u64, f64)], windows: &[Window], task: &str, smooth: usize) -> Vec<Drop> {
    let mut out = Vec::new();
    for (i, pair) in windows.windows(2).enumerate() {
        let (train, next) = (&pair[0], &pair[1]);
        if train.label != task {
            continue;
        }
        let Some(peak) = mean_in(curve, &train.tail(0.2)) else {
            continue;
        };
        // the moving average only looks back into the next segment itself
        let after: Vec<f64> = curve.iter().filter(|(f, _)| next.contains(*f)).map(|p| p.1).collect();
        let Some(trough) = moving_average(&after, smooth).into_iter().reduce(f64::min) else {
            continue;
        };
        out.push(Drop {
            task: task.to_string(),
            segment: i,
            peak,
            trough,
        });
    }
    out
}

/// Mean return on the probe task over the last quarter of its training segment.
pub fn probe_performance(runs: &[SeedRun], windows: &[Window], probe: &str) -> Option<f64> {
    let w = windows.iter().find(|w| w.label == probe)?;
    mean_in(&mean_curve(runs, probe), &w.tail(0.25))
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // ties share the average rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

/// (max - min) / max of the absolute values.
pub fn relative_range(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    (max - min) / max.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
        assert!((spearman(&[0.0, 1.0, 2.0, 3.0], &[0.917, 0.597, 0.810, 0.800]) + 0.4).abs() < 1e-12);
    }

    #[test]
    fn moving_average_shortens_at_start() {
        assert_eq!(moving_average(&[2.0, 4.0, 6.0, 8.0], 2), vec![2.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn drop_detection() {
        let w = vec![
            Window {
                label: "A".into(),
                start: 0,
                end: 10,
            },
            Window {
                label: "B".into(),
                start: 10,
                end: 20,
            },
        ];
        let curve: Vec<(u64, f64)> = (1..=20).map(|f| (f, if f <= 10 { 1.0 } else { 0.2 })).collect();
        let d = drops(&curve, &w, "A", 3);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].peak, 1.0);
        assert!((d[0].trough - 0.2).abs() < 1e-12);
        assert!(d[0].forgot());
        assert!(drops(&curve, &w, "B", 3).is_empty());
    }

    #[test]
    fn window_tail() {
        let w = Window {
            label: "A".into(),
            start: 100,
            end: 200,
        };
        assert_eq!(w.tail(0.25).start, 175);
        assert!(w.contains(200) && !w.contains(100));
    }
}
