//! Policies emitting four-action batches, the privileged oracle and DAgger collection.

pub mod oracle;
pub mod planner;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_at, Label, NavSample};
use crate::error::{NavError, Result};
use crate::prompt::TokenSequence;
use crate::world::{Action, Episode, EpisodeState, Goal};

pub use oracle::{expert_action, turn_toward};
pub use planner::{plan_shortest_path, GridCost, GridPath, NavGrid};

/// Actions predicted per inference.
pub const BATCH_LEN: usize = 4;

/// Exactly four actions; everything after the first STOP is STOP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Action>", into = "Vec<Action>")]
pub struct ActionBatch([Action; BATCH_LEN]);

impl ActionBatch {
    pub fn new(actions: [Action; BATCH_LEN]) -> Self {
        let mut out = actions;
        if let Some(i) = out.iter().position(|&a| a == Action::Stop) {
            out[i..].fill(Action::Stop);
        }
        Self(out)
    }

    /// Pads a shorter prefix with STOP.
    pub fn from_prefix(prefix: &[Action]) -> Self {
        let mut out = [Action::Stop; BATCH_LEN];
        for (slot, &a) in out.iter_mut().zip(prefix) {
            *slot = a;
        }
        Self::new(out)
    }

    pub fn actions(&self) -> &[Action; BATCH_LEN] {
        &self.0
    }

    pub fn first(&self) -> Action {
        self.0[0]
    }

    /// Actions up to and including the first STOP.
    pub fn executable(&self) -> &[Action] {
        match self.0.iter().position(|&a| a == Action::Stop) {
            Some(i) => &self.0[..=i],
            None => &self.0,
        }
    }
}

impl TryFrom<Vec<Action>> for ActionBatch {
    type Error = String;
    fn try_from(v: Vec<Action>) -> std::result::Result<Self, String> {
        let arr: [Action; BATCH_LEN] = v
            .try_into()
            .map_err(|v: Vec<Action>| format!("action batch needs {BATCH_LEN} entries, got {}", v.len()))?;
        Ok(Self::new(arr))
    }
}

impl From<ActionBatch> for Vec<Action> {
    fn from(b: ActionBatch) -> Self {
        b.0.to_vec()
    }
}

impl fmt::Display for ActionBatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|a| a.as_str()).collect();
        write!(f, "[{}]", names.join(", "))
    }
}

/// Input to a policy. Learned-policy stand-ins read only `tokens`; the oracle
/// reads the privileged episode state.
#[derive(Debug, Clone, Copy)]
pub struct PolicyRequest<'a> {
    pub tokens: Option<&'a TokenSequence>,
    pub state: &'a EpisodeState,
}

impl<'a> PolicyRequest<'a> {
    pub fn new(state: &'a EpisodeState) -> Self {
        Self { tokens: None, state }
    }

    pub fn with_tokens(state: &'a EpisodeState, tokens: &'a TokenSequence) -> Self {
        Self {
            tokens: Some(tokens),
            state,
        }
    }
}

pub trait Policy: Send {
    fn name(&self) -> &str;

    fn next_actions(&mut self, req: &PolicyRequest<'_>) -> Result<ActionBatch>;

    /// Free-form answer after STOP (question answering episodes).
    fn answer(&mut self, _req: &PolicyRequest<'_>) -> Option<String> {
        None
    }
}

/// Shortest-path expert. Each batch is planned by simulating the episode
/// forward on a copy of the state, one action at a time.
#[derive(Debug, Clone, Default)]
pub struct OraclePolicy {
    /// Overrides the task's stop distance.
    pub stop_radius: Option<f64>,
}

impl OraclePolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_stop_radius(radius: f64) -> Self {
        Self {
            stop_radius: Some(radius),
        }
    }

    pub fn batch_for(&self, state: &EpisodeState) -> Result<ActionBatch> {
        if state.is_done() {
            return Err(NavError::EpisodeFinished);
        }
        let mut sim = state.clone();
        let mut out = Vec::with_capacity(BATCH_LEN);
        while out.len() < BATCH_LEN {
            let a = expert_action(&sim, self.stop_radius)?;
            out.push(a);
            if a == Action::Stop {
                break;
            }
            sim.step(a)?;
            if sim.is_done() {
                break;
            }
        }
        Ok(ActionBatch::from_prefix(&out))
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn next_actions(&mut self, req: &PolicyRequest<'_>) -> Result<ActionBatch> {
        self.batch_for(req.state)
    }

    fn answer(&mut self, req: &PolicyRequest<'_>) -> Option<String> {
        match &req.state.episode().goal {
            Goal::Eqa { question, .. } => oracle::answer_from_view(req.state, question),
            _ => None,
        }
    }
}

/// Expert whose actions are each replaced, with probability `epsilon`, by a
/// uniformly drawn movement (never STOP).
#[derive(Debug, Clone)]
pub struct NoisyExpert {
    expert: OraclePolicy,
    epsilon: f64,
    rng: ChaCha8Rng,
}

impl NoisyExpert {
    pub const DEFAULT_EPSILON: f64 = 0.2;

    pub fn new(epsilon: f64, seed: u64) -> Self {
        Self {
            expert: OraclePolicy::new(),
            epsilon,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

const MOVES: [Action; 3] = [Action::Forward, Action::TurnLeft, Action::TurnRight];

impl Policy for NoisyExpert {
    fn name(&self) -> &str {
        "noisy-expert"
    }

    fn next_actions(&mut self, req: &PolicyRequest<'_>) -> Result<ActionBatch> {
        let clean = self.expert.next_actions(req)?;
        let mut out = *clean.actions();
        for a in out.iter_mut() {
            if *a != Action::Stop && self.rng.gen_bool(self.epsilon) {
                *a = MOVES[self.rng.gen_range(0..MOVES.len())];
            }
        }
        Ok(ActionBatch::new(out))
    }

    fn answer(&mut self, req: &PolicyRequest<'_>) -> Option<String> {
        self.expert.answer(req)
    }
}

/// Uniform over all four actions.
#[derive(Debug, Clone)]
pub struct UniformRandom {
    rng: ChaCha8Rng,
}

impl UniformRandom {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for UniformRandom {
    fn name(&self) -> &str {
        "uniform-random"
    }

    fn next_actions(&mut self, _req: &PolicyRequest<'_>) -> Result<ActionBatch> {
        let mut out = [Action::Stop; BATCH_LEN];
        for a in out.iter_mut() {
            *a = Action::ALL[self.rng.gen_range(0..Action::ALL.len())];
        }
        Ok(ActionBatch::new(out))
    }
}

/// Replays a recorded action list, indexed by the episode's step count;
/// STOP once the list runs out.
#[derive(Debug, Clone)]
pub struct ReplayPolicy {
    actions: Vec<Action>,
    answer: Option<String>,
}

impl ReplayPolicy {
    pub fn new(actions: Vec<Action>, answer: Option<String>) -> Self {
        Self { actions, answer }
    }
}

impl Policy for ReplayPolicy {
    fn name(&self) -> &str {
        "replay"
    }

    fn next_actions(&mut self, req: &PolicyRequest<'_>) -> Result<ActionBatch> {
        let at = req.state.steps() as usize;
        let rest = self.actions.get(at..).unwrap_or(&[]);
        Ok(ActionBatch::from_prefix(&rest[..rest.len().min(BATCH_LEN)]))
    }

    fn answer(&mut self, _req: &PolicyRequest<'_>) -> Option<String> {
        self.answer.clone()
    }
}

/// Recorded rollouts keyed by episode id, as read from a replay file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayBook {
    pub episodes: BTreeMap<String, ReplayEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub actions: Vec<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

impl ReplayBook {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| NavError::SchemaMismatch {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn policy_for(&self, episode_id: &str) -> ReplayPolicy {
        match self.episodes.get(episode_id) {
            Some(e) => ReplayPolicy::new(e.actions.clone(), e.answer.clone()),
            None => ReplayPolicy::new(Vec::new(), None),
        }
    }
}

/// Policy selection as written in configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyKind {
    Oracle,
    NoisyExpert,
    UniformRandom,
    Replay(String),
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "oracle" => Ok(PolicyKind::Oracle),
            "noisy-expert" => Ok(PolicyKind::NoisyExpert),
            "uniform-random" => Ok(PolicyKind::UniformRandom),
            _ => match s.strip_prefix("replay:") {
                Some(p) if !p.is_empty() => Ok(PolicyKind::Replay(p.to_string())),
                _ => Err(format!(
                    "unknown policy `{s}` (oracle|noisy-expert|uniform-random|replay:<file>)"
                )),
            },
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Oracle => f.write_str("oracle"),
            PolicyKind::NoisyExpert => f.write_str("noisy-expert"),
            PolicyKind::UniformRandom => f.write_str("uniform-random"),
            PolicyKind::Replay(p) => write!(f, "replay:{p}"),
        }
    }
}

impl Serialize for PolicyKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PolicyKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Rolls out `student` on each episode; every visited state is labelled with
/// the expert's batch. The student's first action is executed each step;
/// question answering episodes end with the ground-truth answer sample.
pub fn dagger_collect(
    episodes: &[Arc<Episode>],
    student: &mut dyn FnMut(&Episode) -> Box<dyn Policy>,
    expert: &mut dyn Policy,
) -> Result<Vec<NavSample>> {
    let mut samples = Vec::new();
    for ep in episodes {
        let mut policy = student(ep);
        let mut state = EpisodeState::new(ep.clone());
        while !state.is_done() {
            let req = PolicyRequest::new(&state);
            let label = expert.next_actions(&req)?;
            let action = policy.next_actions(&req)?.first();
            samples.push(sample_at(ep, &state, Label::Actions(label)));
            state.step(action)?;
        }
        if let Goal::Eqa { answer, .. } = &ep.goal {
            samples.push(sample_at(ep, &state, Label::Answer(answer.clone())));
        }
    }
    Ok(samples)
}
