//! Blocking and non-blocking execution of four-action batches.
//!
//! The non-blocking runner is a single-threaded discrete-event loop over
//! integer microseconds. Events at equal times run in scheduling order, so a
//! batch that arrives at the instant an action finishes replaces the queue
//! before the next action starts.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{NavError, Result};
use crate::features::{FeatureConfig, FeatureExtractor};
use crate::memory::{MemoryState, MergeConfig};
use crate::policy::{ActionBatch, Policy, PolicyRequest};
use crate::prompt::{assemble, TokenSequence};
use crate::world::{Action, Episode, EpisodeState, LocalView, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyModel {
    pub inference_s: f64,
    pub comm_s: f64,
    pub action_s: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            inference_s: 0.2,
            comm_s: 0.3,
            action_s: 1.0,
        }
    }
}

fn micros(seconds: f64) -> u64 {
    (seconds * 1e6).round() as u64
}

impl LatencyModel {
    pub fn zero() -> Self {
        Self {
            inference_s: 0.0,
            comm_s: 0.0,
            action_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("inference", self.inference_s),
            ("comm", self.comm_s),
            ("action", self.action_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(NavError::InvalidConfig(format!(
                    "latency {name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Frame upload, inference and batch download.
    pub fn round_trip_us(&self) -> u64 {
        2 * micros(self.comm_s) + micros(self.inference_s)
    }

    pub fn action_us(&self) -> u64 {
        micros(self.action_s)
    }

    /// Applies `key=value` overrides such as `inference=0.2,comm=0.3,action=1.0`.
    pub fn with_overrides(mut self, spec: &str) -> Result<Self> {
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| NavError::InvalidConfig(format!("latency entry `{part}` is not key=value")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| NavError::InvalidConfig(format!("latency value `{value}` is not a number")))?;
            match key.trim() {
                "inference" => self.inference_s = v,
                "comm" => self.comm_s = v,
                "action" => self.action_s = v,
                other => return Err(NavError::InvalidConfig(format!("unknown latency key `{other}`"))),
            }
        }
        self.validate()?;
        Ok(self)
    }
}

impl FromStr for LatencyModel {
    type Err = NavError;

    fn from_str(s: &str) -> Result<Self> {
        Self::default().with_overrides(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    FrameSent,
    BatchArrived {
        batch: ActionBatch,
    },
    ActionStarted {
        action: Action,
    },
    ActionFinished {
        action: Action,
    },
    /// Queued actions dropped in favour of a newer batch.
    BatchSuperseded {
        dropped: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t_us: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventTrace {
    pub records: Vec<TraceRecord>,
}

impl EventTrace {
    fn push(&mut self, t_us: u64, event: Event) {
        debug_assert!(self.records.last().is_none_or(|r| r.t_us <= t_us));
        self.records.push(TraceRecord { t_us, event });
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("trace record serializes"));
        }
        out
    }

    pub fn superseded(&self) -> usize {
        self.count(|e| matches!(e, Event::BatchSuperseded { .. }))
    }

    pub fn count(&self, pred: impl Fn(&Event) -> bool) -> usize {
        self.records.iter().filter(|r| pred(&r.event)).count()
    }
}

/// Streams observed frames into the merged memory and assembles prompts.
#[derive(Debug, Clone)]
pub struct Perception {
    extractor: FeatureExtractor,
    merge: MergeConfig,
    memory: MemoryState,
}

impl Perception {
    pub fn new(features: FeatureConfig, merge: MergeConfig) -> Result<Self> {
        merge.validate(features.n_x)?;
        Ok(Self {
            extractor: FeatureExtractor::new(features)?,
            merge,
            memory: MemoryState::new(),
        })
    }

    pub fn reset(&mut self) {
        self.memory = MemoryState::new();
    }

    pub fn memory(&self) -> &MemoryState {
        &self.memory
    }

    pub fn observe(&mut self, view: &LocalView) -> Result<()> {
        let x = self.extractor.extract(view, self.memory.frames() + 1);
        self.memory.push(&x, &self.merge)?;
        Ok(())
    }

    pub fn prompt(&self, ep: &Episode) -> Result<TokenSequence> {
        Ok(assemble(&self.memory, &ep.instruction, true)?)
    }
}

fn plan(policy: &mut dyn Policy, state: &EpisodeState, perception: Option<&Perception>) -> Result<ActionBatch> {
    match perception {
        Some(p) => {
            let tokens = p.prompt(state.episode())?;
            policy.next_actions(&PolicyRequest::with_tokens(state, &tokens))
        }
        None => policy.next_actions(&PolicyRequest::new(state)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub answer: Option<String>,
    /// Policy invocations.
    pub batches: usize,
}

fn finish(state: EpisodeState, policy: &mut dyn Policy, batches: usize) -> Rollout {
    let answer = policy.answer(&PolicyRequest::new(&state));
    Rollout {
        trajectory: state.into_trajectory(),
        answer,
        batches,
    }
}

/// Synchronous mode: run the batch, then observe and re-plan. A STOP ends the
/// episode only as the first action of a batch; a later STOP cuts the batch short.
pub fn run_blocking(ep: Arc<Episode>, policy: &mut dyn Policy) -> Result<Rollout> {
    run_blocking_with(ep, policy, None)
}

pub fn run_blocking_with(
    ep: Arc<Episode>,
    policy: &mut dyn Policy,
    mut perception: Option<&mut Perception>,
) -> Result<Rollout> {
    let mut state = EpisodeState::new(ep);
    if let Some(p) = perception.as_deref_mut() {
        p.reset();
        p.observe(&state.render_local_view())?;
    }
    let mut batches = 0;
    while !state.is_done() {
        let batch = plan(policy, &state, perception.as_deref())?;
        batches += 1;
        for (i, &a) in batch.actions().iter().enumerate() {
            if a == Action::Stop && i > 0 {
                break;
            }
            let step = state.step(a)?;
            if let Some(p) = perception.as_deref_mut() {
                p.observe(&step.frame)?;
            }
            if step.done {
                break;
            }
        }
    }
    Ok(finish(state, policy, batches))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Pending {
    BatchArrived(usize),
    TryStart,
    ActionFinished,
}

/// Asynchronous mode: after every finished action the current frame is sent;
/// the batch planned from it arrives one round trip later and replaces any
/// queued actions. The action in flight always completes.
pub fn run_nonblocking(
    ep: Arc<Episode>,
    policy: &mut dyn Policy,
    latency: LatencyModel,
) -> Result<(Rollout, EventTrace)> {
    run_nonblocking_with(ep, policy, latency, None)
}

pub fn run_nonblocking_with(
    ep: Arc<Episode>,
    policy: &mut dyn Policy,
    latency: LatencyModel,
    mut perception: Option<&mut Perception>,
) -> Result<(Rollout, EventTrace)> {
    latency.validate()?;
    let rt = latency.round_trip_us();
    let act = latency.action_us();
    let mut state = EpisodeState::new(ep);
    if let Some(p) = perception.as_deref_mut() {
        p.reset();
        p.observe(&state.render_local_view())?;
    }
    let mut trace = EventTrace::default();
    let mut events: BinaryHeap<Reverse<(u64, u64, Pending)>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut schedule = |events: &mut BinaryHeap<_>, t: u64, p: Pending| {
        events.push(Reverse((t, seq, p)));
        seq += 1;
    };
    // planned batches, indexed by `Pending::BatchArrived`
    let mut planned: Vec<ActionBatch> = Vec::new();
    let mut queue: VecDeque<Action> = VecDeque::new();
    let mut in_flight: Option<Action> = None;

    trace.push(0, Event::FrameSent);
    planned.push(plan(policy, &state, perception.as_deref())?);
    schedule(&mut events, rt, Pending::BatchArrived(0));

    while let Some(Reverse((t, _, ev))) = events.pop() {
        match ev {
            Pending::BatchArrived(i) => {
                let batch = planned[i];
                trace.push(t, Event::BatchArrived { batch });
                if !queue.is_empty() {
                    trace.push(t, Event::BatchSuperseded { dropped: queue.len() });
                }
                queue = batch.executable().iter().copied().collect();
                schedule(&mut events, t, Pending::TryStart);
            }
            Pending::TryStart => {
                if in_flight.is_none() {
                    if let Some(a) = queue.pop_front() {
                        trace.push(t, Event::ActionStarted { action: a });
                        in_flight = Some(a);
                        schedule(&mut events, t + act, Pending::ActionFinished);
                    }
                }
            }
            Pending::ActionFinished => {
                let a = in_flight.take().expect("an action is in flight");
                trace.push(t, Event::ActionFinished { action: a });
                let step = state.step(a)?;
                if let Some(p) = perception.as_deref_mut() {
                    p.observe(&step.frame)?;
                }
                if step.done {
                    break;
                }
                trace.push(t, Event::FrameSent);
                planned.push(plan(policy, &state, perception.as_deref())?);
                schedule(&mut events, t + rt, Pending::BatchArrived(planned.len() - 1));
                schedule(&mut events, t, Pending::TryStart);
            }
        }
    }
    Ok((finish(state, policy, planned.len()), trace))
}
