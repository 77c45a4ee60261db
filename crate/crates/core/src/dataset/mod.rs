//! Navigation samples, their JSONL storage and ground-truth collection.
//!
//! File layout: the first line is a [`SampleHeader`]; each following line is
//! one [`NavSample`]. Samples carry a replay reference instead of features;
//! frames are regenerated from `(task, seed, actions)` and the header configs.

pub mod templates;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{NavError, Result};
use crate::features::{FeatureConfig, FeatureExtractor, FrameFeatures};
use crate::policy::{ActionBatch, Policy, PolicyRequest};
use crate::world::{check_success, generate_episode, Action, Episode, EpisodeState, GenConfig, Goal, TaskKind};

pub const SCHEMA: &str = "streamnav.samples";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleHeader {
    pub schema: String,
    pub version: u32,
    pub gen_config: GenConfig,
    pub feature_config: FeatureConfig,
}

impl SampleHeader {
    pub fn new(gen_config: GenConfig, feature_config: FeatureConfig) -> Self {
        Self {
            schema: SCHEMA.into(),
            version: SCHEMA_VERSION,
            gen_config,
            feature_config,
        }
    }
}

/// Enough to rebuild the episode and walk it to the sampled step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayRef {
    pub task: TaskKind,
    pub seed: u64,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Actions(ActionBatch),
    Answer(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavSample {
    pub episode_id: String,
    pub task: TaskKind,
    pub instruction: String,
    pub history: ReplayRef,
    pub label: Label,
}

pub fn write_samples(path: &Path, header: &SampleHeader, samples: &[NavSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_samples_to(&mut w, header, samples)?;
    w.flush()?;
    Ok(())
}

pub fn write_samples_to<W: Write>(w: &mut W, header: &SampleHeader, samples: &[NavSample]) -> Result<()> {
    writeln!(w, "{}", serde_json::to_string(header).expect("header serializes"))?;
    for s in samples {
        writeln!(w, "{}", serde_json::to_string(s).expect("sample serializes"))?;
    }
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<(SampleHeader, Vec<NavSample>)> {
    read_samples_from(BufReader::new(File::open(path)?))
}

pub fn read_samples_from<R: BufRead>(r: R) -> Result<(SampleHeader, Vec<NavSample>)> {
    let mut lines = r.lines();
    let first = lines.next().transpose()?.ok_or(NavError::SchemaMismatch {
        line: 1,
        message: "missing header".into(),
    })?;
    let header: SampleHeader = serde_json::from_str(&first).map_err(|e| NavError::SchemaMismatch {
        line: 1,
        message: e.to_string(),
    })?;
    if header.schema != SCHEMA || header.version != SCHEMA_VERSION {
        return Err(NavError::SchemaMismatch {
            line: 1,
            message: format!("unsupported schema {} v{}", header.schema, header.version),
        });
    }
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = serde_json::from_str(&line).map_err(|e| NavError::SchemaMismatch {
            line: i + 2,
            message: e.to_string(),
        })?;
        samples.push(s);
    }
    Ok((header, samples))
}

/// Rolls the expert on each episode, executing the first action of every
/// batch and emitting one sample per step; question answering episodes add
/// one answer sample with the ground-truth answer. With `successful_only`,
/// episodes that fail are dropped.
pub fn collect_gt_samples(
    episodes: &[Arc<Episode>],
    expert: &mut dyn Policy,
    successful_only: bool,
) -> Result<Vec<NavSample>> {
    let mut out = Vec::new();
    for ep in episodes {
        let mut state = EpisodeState::new(ep.clone());
        let mut samples = Vec::new();
        while !state.is_done() {
            let batch = expert.next_actions(&PolicyRequest::new(&state))?;
            samples.push(sample_at(ep, &state, Label::Actions(batch)));
            state.step(batch.first())?;
        }
        let answer = expert.answer(&PolicyRequest::new(&state));
        if let Goal::Eqa { answer: gt, .. } = &ep.goal {
            samples.push(sample_at(ep, &state, Label::Answer(gt.clone())));
        }
        if successful_only && !check_success(ep, state.trajectory(), answer.as_deref()).success {
            continue;
        }
        out.extend(samples);
    }
    Ok(out)
}

pub(crate) fn sample_at(ep: &Episode, state: &EpisodeState, label: Label) -> NavSample {
    NavSample {
        episode_id: ep.id.clone(),
        task: ep.task,
        instruction: ep.instruction.text.clone(),
        history: ReplayRef {
            task: ep.task,
            seed: ep.seed,
            actions: state.trajectory().actions.clone(),
        },
        label,
    }
}

/// Rebuilds the episode and state a sample was taken at.
pub fn replay_state(r: &ReplayRef, gen: &GenConfig) -> Result<EpisodeState> {
    let ep = Arc::new(generate_episode(r.task, gen, r.seed)?);
    let mut state = EpisodeState::new(ep);
    for &a in &r.actions {
        state.step(a)?;
    }
    Ok(state)
}

/// Frames observed up to the sampled step: the start view plus one per action.
pub fn regenerate_frames(r: &ReplayRef, header: &SampleHeader) -> Result<Vec<FrameFeatures>> {
    let ep = Arc::new(generate_episode(r.task, &header.gen_config, r.seed)?);
    let fx = FeatureExtractor::new(header.feature_config)?;
    let mut state = EpisodeState::new(ep);
    let mut frames = vec![fx.extract(&state.render_local_view(), 1)];
    for (i, &a) in r.actions.iter().enumerate() {
        let step = state.step(a)?;
        frames.push(fx.extract(&step.frame, i as u64 + 2));
    }
    Ok(frames)
}
