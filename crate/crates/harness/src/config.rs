//! Experiment configuration.
//!
//! Files are flat `key = value` lines with dotted section prefixes, for example
//! `schedule.segment_frames = 5000` (read as TOML, so `[schedule]` tables work
//! too). Unknown keys are rejected; every key has a default.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clear_core::losses::LossWeights;
use clear_core::nn::{NetworkShape, RmsPropConfig};
use clear_core::runtime::{LearnerConfig, RunSetup, RuntimeConfig, Segment};
use clear_core::tasks::{TaskSpec, NUM_ACTIONS};
use clear_core::vtrace::VTraceConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// One independent run per task.
    Separate,
    /// All tasks at once, actors split evenly across them.
    Simultaneous,
    /// Tasks one after another in synchronized segments.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub tasks: Vec<String>,
    /// Training frames per task segment.
    pub segment_frames: u64,
    pub cycles: usize,
    pub probe_task: Option<String>,
    /// Index of the probe segment in the final segment list.
    pub probe_position: Option<usize>,
    /// Defaults to `segment_frames`.
    pub probe_frames: Option<u64>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            tasks: vec!["T1".into(), "T2".into(), "T3".into()],
            segment_frames: 10_000,
            cycles: 2,
            probe_task: None,
            probe_position: None,
            probe_frames: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeSection {
    pub actors: usize,
    pub batch_size: usize,
    pub unroll_length: usize,
    /// Fraction of batch slots that take the new unroll.
    pub new_ratio: f64,
}

impl Default for RuntimeSection {
    fn default() -> Self {
        let rt = RuntimeConfig::default();
        Self {
            actors: rt.actors,
            batch_size: rt.batch_size,
            unroll_length: rt.unroll_length,
            new_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplaySection {
    /// Global capacity as a fraction of the run's training frames.
    pub capacity_fraction: f64,
    /// Absolute global capacity; overrides the fraction when set. Zero disables replay.
    pub capacity_frames: Option<u64>,
}

impl Default for ReplaySection {
    fn default() -> Self {
        Self {
            capacity_fraction: 0.5,
            capacity_frames: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub policy_gradient: f64,
    pub value: f64,
    pub entropy: f64,
    pub policy_cloning: f64,
    pub value_cloning: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            policy_gradient: w.policy_gradient,
            value: w.value,
            entropy: w.entropy,
            policy_cloning: w.policy_cloning,
            value_cloning: w.value_cloning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VTraceSection {
    pub discount: f64,
    pub c_bar: f64,
    pub rho_bar: f64,
}

impl Default for VTraceSection {
    fn default() -> Self {
        let v = VTraceConfig::default();
        Self {
            discount: v.discount,
            c_bar: v.c_bar,
            rho_bar: v.rho_bar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub max_grad_norm: Option<f64>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = RmsPropConfig::default();
        Self {
            learning_rate: o.learning_rate,
            decay: o.decay,
            epsilon: o.epsilon,
            max_grad_norm: o.max_grad_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Evaluation episodes are played every this many training frames.
    pub cadence_frames: u64,
    /// Episodes per task at each evaluation point.
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            cadence_frames: 500,
            episodes: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    /// Single-threaded synchronous execution with bit-reproducible output.
    pub deterministic: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            deterministic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub protocol: Protocol,
    pub schedule: ScheduleSection,
    pub runtime: RuntimeSection,
    pub replay: ReplaySection,
    pub loss: LossSection,
    pub vtrace: VTraceSection,
    pub optimizer: OptimizerSection,
    pub network: NetworkSection,
    pub eval: EvalSection,
    pub run: RunSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            protocol: Protocol::Sequential,
            schedule: ScheduleSection::default(),
            runtime: RuntimeSection::default(),
            replay: ReplaySection::default(),
            loss: LossSection::default(),
            vtrace: VTraceSection::default(),
            optimizer: OptimizerSection::default(),
            network: NetworkSection::default(),
            eval: EvalSection::default(),
            run: RunSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// One independent training run of an experiment (the separate protocol has
/// one per task, the others exactly one).
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub setup: RunSetup,
    pub eval_tasks: Vec<String>,
    /// Recorded frame = own training frames x this factor.
    pub frame_scale: u64,
}

impl RunPlan {
    /// Label of the segment being trained when the learner reaches `frame`
    /// (own frames). Frame 0 belongs to the first segment.
    pub fn trained_task_at(&self, frame: u64) -> String {
        let n = self.setup.runtime.unroll_length as u64;
        let mut end = 0;
        for seg in &self.setup.segments {
            end += seg.total_unrolls() as u64 * n;
            if frame <= end {
                return seg.label();
            }
        }
        self.setup.segments.last().map(Segment::label).unwrap_or_default()
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override; the value is parsed as in a config file,
    /// falling back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("override `{assignment}` is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(&*self).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| HarnessError::Config(format!("`{key}` does not name a config key")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            node = table
                .get_mut(*part)
                .ok_or_else(|| HarnessError::Config(format!("unknown config section `{part}` in `{key}`")))?;
        }
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.message().to_string()))?;
        Ok(())
    }

    /// Fully resolved configuration as flat `key = value` lines.
    pub fn resolved(&self) -> String {
        fn walk(prefix: &str, value: &toml::Value, out: &mut String) {
            match value {
                toml::Value::Table(t) => {
                    for (k, v) in t {
                        let key = if prefix.is_empty() {
                            k.clone()
                        } else {
                            format!("{prefix}.{k}")
                        };
                        walk(&key, v, out);
                    }
                }
                other => {
                    let _ = writeln!(out, "{prefix} = {other}");
                }
            }
        }
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut out = String::new();
        walk("", &value, &mut out);
        for (key, present) in [
            ("schedule.probe_task", self.schedule.probe_task.is_some()),
            ("schedule.probe_position", self.schedule.probe_position.is_some()),
            ("schedule.probe_frames", self.schedule.probe_frames.is_some()),
            ("replay.capacity_frames", self.replay.capacity_frames.is_some()),
            ("optimizer.max_grad_norm", self.optimizer.max_grad_norm.is_some()),
        ] {
            if !present {
                let _ = writeln!(out, "# {key} unset");
            }
        }
        out
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            policy_gradient: self.loss.policy_gradient,
            value: self.loss.value,
            entropy: self.loss.entropy,
            policy_cloning: self.loss.policy_cloning,
            value_cloning: self.loss.value_cloning,
        }
    }

    fn learner(&self) -> LearnerConfig {
        LearnerConfig {
            new_ratio: self.runtime.new_ratio,
            vtrace: VTraceConfig {
                discount: self.vtrace.discount,
                c_bar: self.vtrace.c_bar,
                rho_bar: self.vtrace.rho_bar,
                unroll_length: self.runtime.unroll_length,
            },
            weights: self.loss_weights(),
            optimizer: RmsPropConfig {
                learning_rate: self.optimizer.learning_rate,
                decay: self.optimizer.decay,
                epsilon: self.optimizer.epsilon,
                max_grad_norm: self.optimizer.max_grad_norm,
            },
        }
    }

    fn unrolls(&self, frames: u64, what: &str) -> Result<usize> {
        let n = self.runtime.unroll_length as u64;
        if frames == 0 || n == 0 || !frames.is_multiple_of(n) {
            return Err(HarnessError::Config(format!(
                "{what} ({frames} frames) must be a positive multiple of the unroll length {n}"
            )));
        }
        Ok((frames / n) as usize)
    }

    /// Segment list of the sequential protocol, probe included.
    pub fn sequential_segments(&self) -> Result<Vec<Segment>> {
        let per = self.unrolls(self.schedule.segment_frames, "schedule.segment_frames")?;
        let mut segments: Vec<Segment> = (0..self.schedule.cycles)
            .flat_map(|_| self.schedule.tasks.iter().map(move |t| Segment::single(t.clone(), per)))
            .collect();
        match (&self.schedule.probe_task, self.schedule.probe_position) {
            (Some(task), Some(pos)) => {
                let frames = self.schedule.probe_frames.unwrap_or(self.schedule.segment_frames);
                let probe = Segment::single(task.clone(), self.unrolls(frames, "schedule.probe_frames")?);
                if pos > segments.len() {
                    return Err(HarnessError::Config(format!(
                        "probe position {pos} outside a schedule of {} segments",
                        segments.len() + 1
                    )));
                }
                segments.insert(pos, probe);
            }
            (None, None) => {}
            _ => {
                return Err(HarnessError::Config(
                    "schedule.probe_task and schedule.probe_position must be set together".into(),
                ))
            }
        }
        Ok(segments)
    }

    /// Every task that is trained or evaluated.
    pub fn all_tasks(&self) -> Vec<String> {
        let mut tasks = self.schedule.tasks.clone();
        if let Some(p) = &self.schedule.probe_task {
            if !tasks.contains(p) {
                tasks.push(p.clone());
            }
        }
        tasks
    }

    fn setup(&self, seed: u64, segments: Vec<Segment>) -> Result<RunSetup> {
        let obs_dim = match self.schedule.tasks.first() {
            Some(t) => TaskSpec::builtin(t)?.obs_dim(),
            None => return Err(HarnessError::Config("schedule.tasks is empty".into())),
        };
        let mut setup = RunSetup {
            runtime: RuntimeConfig {
                actors: self.runtime.actors,
                batch_size: self.runtime.batch_size,
                unroll_length: self.runtime.unroll_length,
                seed,
            },
            learner: self.learner(),
            shape: NetworkShape::new(obs_dim, self.network.hidden, NUM_ACTIONS)?,
            replay_capacity_frames: 0,
            segments,
        };
        setup.replay_capacity_frames = match self.replay.capacity_frames {
            Some(frames) => frames as usize,
            None => (self.replay.capacity_fraction * setup.total_frames() as f64).floor() as usize,
        };
        setup.validate()?;
        Ok(setup)
    }

    /// Independent runs making up one seed of the experiment.
    pub fn plan(&self, seed: u64) -> Result<Vec<RunPlan>> {
        self.check_fields()?;
        let tasks = &self.schedule.tasks;
        let plans = match self.protocol {
            Protocol::Sequential => vec![RunPlan {
                setup: self.setup(seed, self.sequential_segments()?)?,
                eval_tasks: self.all_tasks(),
                frame_scale: 1,
            }],
            Protocol::Simultaneous => {
                let per = self.unrolls(self.schedule.segment_frames, "schedule.segment_frames")?;
                let segment = Segment {
                    tasks: tasks.clone(),
                    unrolls_per_task: per * self.schedule.cycles,
                };
                vec![RunPlan {
                    setup: self.setup(seed, vec![segment])?,
                    eval_tasks: tasks.clone(),
                    frame_scale: 1,
                }]
            }
            Protocol::Separate => {
                let per = self.unrolls(self.schedule.segment_frames, "schedule.segment_frames")?;
                tasks
                    .iter()
                    .map(|t| {
                        Ok(RunPlan {
                            setup: self.setup(seed, vec![Segment::single(t.clone(), per * self.schedule.cycles)])?,
                            eval_tasks: vec![t.clone()],
                            frame_scale: tasks.len() as u64,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok(plans)
    }

    fn check_fields(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.schedule.tasks.is_empty() {
            return bad("schedule.tasks is empty".into());
        }
        for t in self.all_tasks() {
            TaskSpec::builtin(&t)?;
        }
        let mut seen = self.schedule.tasks.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.schedule.tasks.len() {
            return bad("schedule.tasks lists a task twice".into());
        }
        if self.schedule.cycles == 0 {
            return bad("schedule.cycles must be >= 1".into());
        }
        if self.schedule.probe_task.is_some() && self.protocol != Protocol::Sequential {
            return bad("a probe task needs the sequential protocol".into());
        }
        if self.eval.cadence_frames == 0 || self.eval.episodes == 0 {
            return bad("eval.cadence_frames and eval.episodes must be >= 1".into());
        }
        if self.run.seeds.is_empty() {
            return bad("run.seeds is empty".into());
        }
        if !(self.replay.capacity_fraction >= 0.0 && self.replay.capacity_fraction.is_finite()) {
            return bad("replay.capacity_fraction must be a finite value >= 0".into());
        }
        if self.name.is_empty() || self.name.contains(',') {
            return bad("name must be non-empty and free of commas".into());
        }
        Ok(())
    }

    /// Checks the whole configuration without running anything.
    pub fn validate(&self) -> Result<()> {
        for &seed in &self.run.seeds {
            self.plan(seed)?;
        }
        Ok(())
    }

    /// Training frames of one seed, summed over its runs.
    pub fn total_frames(&self) -> Result<u64> {
        let seed = self.run.seeds.first().copied().unwrap_or(1);
        Ok(self.plan(seed)?.iter().map(|p| p.setup.total_frames()).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_dotted_keys_and_rejects_unknown() {
        let cfg =
            ExperimentConfig::parse("name = \"x\"\nschedule.segment_frames = 200 # comment\nruntime.new_ratio = 1.0\n")
                .unwrap();
        assert_eq!(cfg.schedule.segment_frames, 200);
        assert_eq!(cfg.runtime.new_ratio, 1.0);
        assert!(ExperimentConfig::parse("schedule.segment_frame = 1").is_err());
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("runtime.new_ratio=0.25").unwrap();
        cfg.set("schedule.probe_task = T4").unwrap();
        cfg.set("run.seeds=[7]").unwrap();
        assert_eq!(cfg.runtime.new_ratio, 0.25);
        assert_eq!(cfg.schedule.probe_task.as_deref(), Some("T4"));
        assert_eq!(cfg.run.seeds, vec![7]);
        assert!(cfg.set("runtime.nope=1").is_err());
        assert!(cfg.set("nosection.x=1").is_err());
        assert!(cfg.set("no_equals").is_err());
    }

    #[test]
    fn resolved_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.optimizer.max_grad_norm = Some(40.0);
        let text = cfg.resolved();
        assert!(text.contains("schedule.segment_frames = 10000"));
        assert!(text.contains("# schedule.probe_task unset"));
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }
}
