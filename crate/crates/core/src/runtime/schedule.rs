use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};

use crate::error::{config_err, Result};

/// A stretch of training with a fixed set of tasks and per-task unroll budgets.
///
/// Sequential training uses one task per segment; simultaneous training uses a
/// single segment listing every task, with actor `i` assigned task `i mod T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub tasks: Vec<String>,
    pub unrolls_per_task: usize,
}

impl Segment {
    pub fn single(task: impl Into<String>, unrolls: usize) -> Self {
        Self {
            tasks: vec![task.into()],
            unrolls_per_task: unrolls,
        }
    }

    pub fn total_unrolls(&self) -> usize {
        self.tasks.len() * self.unrolls_per_task
    }

    /// Label of the trained task(s), `+`-joined.
    pub fn label(&self) -> String {
        self.tasks.join("+")
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() || self.unrolls_per_task == 0 {
            return Err(config_err("segment needs at least one task and a positive budget"));
        }
        Ok(())
    }
}

/// Remaining unroll budget of the current segment.
#[derive(Debug, Clone)]
pub struct SegmentBudget {
    tasks: Vec<String>,
    remaining: Vec<usize>,
}

impl SegmentBudget {
    pub fn new(segment: &Segment) -> Self {
        Self {
            tasks: segment.tasks.clone(),
            remaining: vec![segment.unrolls_per_task; segment.tasks.len()],
        }
    }

    pub fn exhausted() -> Self {
        Self {
            tasks: Vec::new(),
            remaining: Vec::new(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.remaining.iter().sum()
    }

    /// Claims one unroll for `actor`: its own task (`actor mod T`) while that
    /// has budget, otherwise the next task that still has some.
    pub fn claim(&mut self, actor: usize) -> Option<String> {
        let t = self.tasks.len();
        if t == 0 {
            return None;
        }
        let own = actor % t;
        let pick = (0..t).map(|k| (own + k) % t).find(|&i| self.remaining[i] > 0)?;
        self.remaining[pick] -= 1;
        Some(self.tasks[pick].clone())
    }
}

#[derive(Debug)]
struct SchedulerState {
    budget: SegmentBudget,
    segment: usize,
    finished: bool,
    claimed_frames: BTreeMap<String, u64>,
}

/// Thread-safe segment budget. Actors block in [`Scheduler::claim`] between
/// segments, so no actor starts the next segment before the learner has
/// consumed every unroll of the current one.
#[derive(Debug)]
pub struct Scheduler {
    unroll_length: usize,
    state: Mutex<SchedulerState>,
    changed: Condvar,
}

/// A claimed unit of work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Claim {
    pub task: String,
    pub segment: usize,
}

impl Scheduler {
    pub fn new(unroll_length: usize) -> Self {
        Self {
            unroll_length,
            state: Mutex::new(SchedulerState {
                budget: SegmentBudget::exhausted(),
                segment: 0,
                finished: false,
                claimed_frames: BTreeMap::new(),
            }),
            changed: Condvar::new(),
        }
    }

    pub fn start_segment(&self, index: usize, segment: &Segment) {
        let mut s = self.state.lock().expect("scheduler poisoned");
        s.budget = SegmentBudget::new(segment);
        s.segment = index;
        drop(s);
        self.changed.notify_all();
    }

    pub fn finish(&self) {
        self.state.lock().expect("scheduler poisoned").finished = true;
        self.changed.notify_all();
    }

    /// Blocks until work is available; `None` once training is finished.
    pub fn claim(&self, actor: usize) -> Option<Claim> {
        let mut s = self.state.lock().expect("scheduler poisoned");
        loop {
            if s.finished {
                return None;
            }
            if let Some(task) = s.budget.claim(actor) {
                *s.claimed_frames.entry(task.clone()).or_default() += self.unroll_length as u64;
                return Some(Claim {
                    task,
                    segment: s.segment,
                });
            }
            s = self.changed.wait(s).expect("scheduler poisoned");
        }
    }

    /// Non-blocking claim, for single-threaded execution.
    pub fn try_claim(&self, actor: usize) -> Option<Claim> {
        let mut s = self.state.lock().expect("scheduler poisoned");
        let task = s.budget.claim(actor)?;
        *s.claimed_frames.entry(task.clone()).or_default() += self.unroll_length as u64;
        Some(Claim {
            task,
            segment: s.segment,
        })
    }

    pub fn claimed_frames(&self) -> BTreeMap<String, u64> {
        self.state.lock().expect("scheduler poisoned").claimed_frames.clone()
    }
}
