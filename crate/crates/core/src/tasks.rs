//! Gridworld task suite.
//!
//! All tasks share one observation layout and four actions. The observation is
//! a one-hot agent cell, a one-hot of the previous action, a one-hot of the
//! previous displacement (four directions or no move) and a constant 1.0 pad.
//! The goal is not observed. Tasks differ in goal cell, wall layout and in
//! which compass direction each action index moves, so their optimal policies
//! conflict cell by cell.

use std::collections::VecDeque;

use crate::error::{config_err, Error, Result};

pub const NUM_ACTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::North, Direction::East, Direction::South, Direction::West];

    fn delta(self) -> (isize, isize) {
        match self {
            Direction::North => (-1, 0),
            Direction::East => (0, 1),
            Direction::South => (1, 0),
            Direction::West => (0, -1),
        }
    }
}

pub type Cell = (usize, usize);

/// What the agent did on its previous step, as seen in the next observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LastMove {
    pub action: usize,
    /// `None` when the move was blocked.
    pub moved: Option<Direction>,
}

/// Width of the displacement block: four directions plus "no move".
const DISPLACEMENTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
    pub start: Cell,
    pub goal: Cell,
    pub walls: Vec<Cell>,
    /// `action_map[a]` is the direction action `a` moves in.
    pub action_map: [Direction; NUM_ACTIONS],
    pub episode_cap: usize,
    pub goal_reward: f64,
    /// Charged on every step that does not reach the goal.
    pub step_cost: f64,
}

/// Identifiers of the built-in tasks: three cyclic tasks and the probe.
pub const BUILTIN_TASKS: [&str; 4] = ["T1", "T2", "T3", "T4"];

impl TaskSpec {
    pub fn builtin(id: &str) -> Result<Self> {
        use Direction::*;
        let base = |goal: Cell, action_map: [Direction; 4]| TaskSpec {
            id: id.to_string(),
            rows: 5,
            cols: 5,
            start: (4, 2),
            goal,
            walls: Vec::new(),
            action_map,
            episode_cap: 50,
            goal_reward: 1.0,
            step_cost: 0.01,
        };
        let spec = match id {
            "T1" => base((0, 0), [North, East, South, West]),
            "T2" => base((0, 2), [East, North, West, South]),
            "T3" => base((2, 4), [West, South, East, North]),
            "T4" => TaskSpec {
                walls: vec![(1, 3)],
                ..base((0, 4), [South, West, North, East])
            },
            other => return Err(Error::UnknownTask(other.to_string())),
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |c: Cell| c.0 < self.rows && c.1 < self.cols;
        if self.rows == 0 || self.cols == 0 {
            return Err(config_err(format!("task {}: empty grid", self.id)));
        }
        if !inside(self.start) || !inside(self.goal) || self.walls.iter().any(|&w| !inside(w)) {
            return Err(config_err(format!("task {}: cell outside the grid", self.id)));
        }
        if self.walls.contains(&self.start) || self.walls.contains(&self.goal) || self.start == self.goal {
            return Err(config_err(format!(
                "task {}: start/goal overlap walls or each other",
                self.id
            )));
        }
        if self.episode_cap == 0 {
            return Err(config_err(format!("task {}: episode cap must be >= 1", self.id)));
        }
        if self.distances()[self.index(self.start)].is_none() {
            return Err(config_err(format!("task {}: goal unreachable from start", self.id)));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn obs_dim(&self) -> usize {
        self.num_cells() + NUM_ACTIONS + DISPLACEMENTS + 1
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.0 * self.cols + cell.1
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| (r, c)))
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        self.walls.contains(&cell)
    }

    /// Cell reached by moving in `dir`; walls and the border leave the agent in place.
    pub fn move_from(&self, cell: Cell, dir: Direction) -> Cell {
        let (dr, dc) = dir.delta();
        let r = cell.0 as isize + dr;
        let c = cell.1 as isize + dc;
        if r < 0 || c < 0 || r >= self.rows as isize || c >= self.cols as isize {
            return cell;
        }
        let next = (r as usize, c as usize);
        if self.is_wall(next) {
            cell
        } else {
            next
        }
    }

    /// Deterministic transition of the underlying grid: `(next cell, reward, reached goal)`.
    pub fn transition(&self, cell: Cell, action: usize) -> (Cell, f64, bool) {
        let next = self.move_from(cell, self.action_map[action]);
        if next == self.goal {
            (next, self.goal_reward, true)
        } else {
            (next, -self.step_cost, false)
        }
    }

    /// Encodes the agent cell and the previous move (`None` right after a reset).
    pub fn observation(&self, agent: Cell, last: Option<LastMove>) -> Vec<f64> {
        let cells = self.num_cells();
        let mut obs = vec![0.0; self.obs_dim()];
        obs[self.index(agent)] = 1.0;
        if let Some(last) = last {
            obs[cells + last.action] = 1.0;
            let slot = match last.moved {
                Some(dir) => dir as usize,
                None => DISPLACEMENTS - 1,
            };
            obs[cells + NUM_ACTIONS + slot] = 1.0;
        }
        obs[cells + NUM_ACTIONS + DISPLACEMENTS] = 1.0;
        obs
    }

    /// Shortest-path step counts to the goal (breadth-first search), `None` if unreachable.
    pub fn distances(&self) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_cells()];
        let mut queue = VecDeque::from([self.goal]);
        dist[self.index(self.goal)] = Some(0);
        while let Some(cell) = queue.pop_front() {
            let d = dist[self.index(cell)].expect("queued cells have a distance");
            for dir in Direction::ALL {
                // moves are symmetric on a grid with blocking walls
                let next = self.move_from(cell, dir);
                if next != cell && dist[self.index(next)].is_none() {
                    dist[self.index(next)] = Some(d + 1);
                    queue.push_back(next);
                }
            }
        }
        dist
    }

    /// Best achievable return from `cell` within the episode cap.
    pub fn optimal_return_from(&self, cell: Cell) -> f64 {
        match self.distances()[self.index(cell)] {
            Some(0) => 0.0,
            Some(d) if d <= self.episode_cap => self.goal_reward - self.step_cost * (d - 1) as f64,
            _ => -self.step_cost * self.episode_cap as f64,
        }
    }

    pub fn optimal_return(&self) -> f64 {
        self.optimal_return_from(self.start)
    }

    /// Optimal action set per cell via value iteration on the undiscounted,
    /// horizon-free shortest-path problem. Walls and the goal map to an empty set.
    pub fn optimal_actions(&self) -> Vec<Vec<usize>> {
        let n = self.num_cells();
        let mut value = vec![f64::NEG_INFINITY; n];
        value[self.index(self.goal)] = 0.0;
        loop {
            let mut changed = false;
            for cell in self.cells() {
                if cell == self.goal || self.is_wall(cell) {
                    continue;
                }
                let best = (0..NUM_ACTIONS)
                    .map(|a| {
                        let (next, reward, done) = self.transition(cell, a);
                        if done {
                            reward
                        } else {
                            reward + value[self.index(next)]
                        }
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                if best > value[self.index(cell)] + 1e-12 {
                    value[self.index(cell)] = best;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        self.cells()
            .map(|cell| {
                if cell == self.goal || self.is_wall(cell) {
                    return Vec::new();
                }
                let q: Vec<f64> = (0..NUM_ACTIONS)
                    .map(|a| {
                        let (next, reward, done) = self.transition(cell, a);
                        if done {
                            reward
                        } else {
                            reward + value[self.index(next)]
                        }
                    })
                    .collect();
                let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (0..NUM_ACTIONS).filter(|&a| (q[a] - best).abs() < 1e-9).collect()
            })
            .collect()
    }
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A running episode of one task. Dynamics are deterministic.
#[derive(Debug, Clone)]
pub struct GridEnv {
    spec: TaskSpec,
    agent: Cell,
    last: Option<LastMove>,
    steps: usize,
    done: bool,
}

/// Creates an environment for a registered task identifier.
pub fn make_task(id: &str) -> Result<GridEnv> {
    GridEnv::new(TaskSpec::builtin(id)?)
}

impl GridEnv {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            agent: spec.start,
            last: None,
            spec,
            steps: 0,
            done: false,
        })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn agent(&self) -> Cell {
        self.agent
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.agent = self.spec.start;
        self.last = None;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        self.spec.observation(self.agent, self.last)
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        if action >= NUM_ACTIONS {
            return Err(Error::InvalidAction {
                action,
                count: NUM_ACTIONS,
            });
        }
        let (next, reward, reached) = self.spec.transition(self.agent, action);
        let moved = (next != self.agent).then_some(self.spec.action_map[action]);
        self.last = Some(LastMove { action, moved });
        self.agent = next;
        self.steps += 1;
        self.done = reached || self.steps >= self.spec.episode_cap;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
        })
    }
}
