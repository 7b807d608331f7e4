use std::sync::{Arc, Condvar, Mutex};

use crate::nn::NetworkParams;

/// One published set of weights.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub params: Arc<NetworkParams<f64>>,
    pub version: u64,
    /// Training frames consumed by the learner when this version was published.
    pub frames: u64,
}

#[derive(Debug)]
struct BoardState {
    latest: Snapshot,
    closed: bool,
}

/// Latest learner weights, shared with actors and evaluation pools.
///
/// Snapshots are immutable `Arc`s swapped under a short lock, so readers always
/// see a complete version and the learner never waits on them.
#[derive(Debug)]
pub struct WeightsBoard {
    state: Mutex<BoardState>,
    changed: Condvar,
}

impl WeightsBoard {
    /// Board holding the initial weights as version 0.
    pub fn new(initial: NetworkParams<f64>) -> Self {
        Self {
            state: Mutex::new(BoardState {
                latest: Snapshot {
                    params: Arc::new(initial),
                    version: 0,
                    frames: 0,
                },
                closed: false,
            }),
            changed: Condvar::new(),
        }
    }

    /// Replaces the snapshot and returns the new version.
    pub fn publish(&self, params: NetworkParams<f64>, frames: u64) -> u64 {
        let params = Arc::new(params);
        let mut state = self.state.lock().expect("weights board poisoned");
        let version = state.latest.version + 1;
        state.latest = Snapshot {
            params,
            version,
            frames,
        };
        drop(state);
        self.changed.notify_all();
        version
    }

    pub fn fetch(&self) -> Snapshot {
        self.state.lock().expect("weights board poisoned").latest.clone()
    }

    pub fn version(&self) -> u64 {
        self.state.lock().expect("weights board poisoned").latest.version
    }

    /// Marks training as finished and wakes every waiter.
    pub fn close(&self) {
        self.state.lock().expect("weights board poisoned").closed = true;
        self.changed.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().expect("weights board poisoned").closed
    }

    /// Blocks until the learner has consumed at least `frames` training frames.
    /// Returns the latest snapshot and whether the threshold was actually reached
    /// (`false` means the board closed first).
    pub fn wait_for_frames(&self, frames: u64) -> (Snapshot, bool) {
        let mut state = self.state.lock().expect("weights board poisoned");
        while state.latest.frames < frames && !state.closed {
            state = self.changed.wait(state).expect("weights board poisoned");
        }
        let reached = state.latest.frames >= frames;
        (state.latest.clone(), reached)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkShape;

    fn params(fill: f64) -> NetworkParams<f64> {
        let shape = NetworkShape::new(3, 2, 2).unwrap();
        let mut p = NetworkParams::zeros(shape);
        p.as_mut_slice().iter_mut().for_each(|v| *v = fill);
        p
    }

    #[test]
    fn fetch_before_publish_is_version_zero() {
        let board = WeightsBoard::new(params(0.5));
        let snap = board.fetch();
        assert_eq!(snap.version, 0);
        assert_eq!(*snap.params, params(0.5));
    }

    #[test]
    fn publish_then_fetch_matches() {
        let board = WeightsBoard::new(params(0.0));
        let v = board.publish(params(1.0), 10);
        assert_eq!(v, 1);
        let snap = board.fetch();
        assert_eq!(snap.version, 1);
        assert_eq!(snap.frames, 10);
        assert_eq!(*snap.params, params(1.0));
    }

    #[test]
    fn concurrent_fetch_never_sees_torn_snapshot() {
        let board = Arc::new(WeightsBoard::new(params(0.0)));
        let reader = {
            let board = Arc::clone(&board);
            std::thread::spawn(move || {
                for _ in 0..2000 {
                    let snap = board.fetch();
                    let first = snap.params.as_slice()[0];
                    assert!(snap.params.as_slice().iter().all(|&v| v == first));
                    assert_eq!(first, snap.version as f64);
                }
            })
        };
        for v in 1..=200 {
            board.publish(params(v as f64), v);
        }
        reader.join().unwrap();
        assert_eq!(board.version(), 200);
    }

    #[test]
    fn wait_for_frames_returns_on_close() {
        let board = Arc::new(WeightsBoard::new(params(0.0)));
        let waiter = {
            let board = Arc::clone(&board);
            std::thread::spawn(move || board.wait_for_frames(1_000))
        };
        board.publish(params(1.0), 10);
        board.close();
        let (snap, reached) = waiter.join().unwrap();
        assert!(!reached);
        assert_eq!(snap.version, 1);
    }
}
