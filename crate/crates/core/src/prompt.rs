//! Model-input token sequence: observation marker, visual tokens with frame
//! separators, the navigation marker and instruction tokens.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::TokenError;
use crate::memory::MemoryState;
use crate::world::TaskKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub task_kind: TaskKind,
}

impl Instruction {
    /// Panics on empty text; use [`Instruction::try_new`] for untrusted input.
    pub fn new(text: impl Into<String>, task_kind: TaskKind) -> Self {
        Self::try_new(text, task_kind).expect("instruction text is non-empty")
    }

    pub fn try_new(text: impl Into<String>, task_kind: TaskKind) -> Result<Self, TokenError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TokenError::InvalidConfig("instruction text is empty".into()));
        }
        Ok(Self { text, task_kind })
    }

    /// Whitespace tokenizer.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PromptToken {
    ObsBegin,
    VisualToken(Vec<f64>),
    FrameSep,
    NavTag,
    InstrToken(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenSequence {
    pub items: Vec<PromptToken>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn separator_count(&self) -> usize {
        self.items.iter().filter(|t| matches!(t, PromptToken::FrameSep)).count()
    }

    pub fn has_nav_tag(&self) -> bool {
        self.items.iter().any(|t| matches!(t, PromptToken::NavTag))
    }

    pub fn instruction_tokens(&self) -> Vec<&str> {
        self.items
            .iter()
            .filter_map(|t| match t {
                PromptToken::InstrToken(s) => Some(s.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Visual tokens concatenated in order, as rows.
    pub fn visual_rows(&self) -> Vec<&[f64]> {
        self.items
            .iter()
            .filter_map(|t| match t {
                PromptToken::VisualToken(v) => Some(v.as_slice()),
                _ => None,
            })
            .collect()
    }

    /// Checks the structural invariants; returns a description of the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.items.first() != Some(&PromptToken::ObsBegin) {
            return Err("sequence must start with ObsBegin".into());
        }
        if self.items.iter().filter(|t| matches!(t, PromptToken::ObsBegin)).count() != 1 {
            return Err("more than one ObsBegin".into());
        }
        let visual_end = self
            .items
            .iter()
            .rposition(|t| matches!(t, PromptToken::VisualToken(_)))
            .ok_or("no visual tokens")?;
        for (i, t) in self.items.iter().enumerate() {
            match t {
                PromptToken::FrameSep => {
                    let prev = &self.items[i - 1];
                    let next = self.items.get(i + 1);
                    if !matches!(prev, PromptToken::VisualToken(_))
                        || !matches!(next, Some(PromptToken::VisualToken(_)))
                    {
                        return Err(format!("separator at {i} is not between visual runs"));
                    }
                }
                PromptToken::NavTag if i != visual_end + 1 => {
                    return Err(format!("NavTag at {i} does not follow the visual block"));
                }
                PromptToken::InstrToken(_) if i <= visual_end => {
                    return Err(format!("instruction token at {i} inside the visual block"));
                }
                PromptToken::VisualToken(_) if i > visual_end => unreachable!(),
                _ => {}
            }
        }
        Ok(())
    }
}

/// Builds the model input for the current memory state.
///
/// Each long-term entry, each short-term frame and the current frame form one
/// run; runs are separated by a single `FrameSep`.
pub fn assemble(state: &MemoryState, instr: &Instruction, nav_mode: bool) -> Result<TokenSequence, TokenError> {
    let current = state.current().ok_or(TokenError::EmptyMemory)?;
    let mut items = vec![PromptToken::ObsBegin];
    let runs = state
        .long_term()
        .iter()
        .map(|e| &e.token)
        .chain(state.short_term().iter())
        .chain(std::iter::once(current));
    for (i, run) in runs.enumerate() {
        if i > 0 {
            items.push(PromptToken::FrameSep);
        }
        items.extend(run.iter_rows().map(|r| PromptToken::VisualToken(r.to_vec())));
    }
    if nav_mode {
        items.push(PromptToken::NavTag);
    }
    items.extend(instr.words().map(|w| PromptToken::InstrToken(w.to_string())));
    Ok(TokenSequence { items })
}

pub fn visual_token_count(seq: &TokenSequence) -> usize {
    seq.items
        .iter()
        .filter(|t| matches!(t, PromptToken::VisualToken(_)))
        .count()
}

impl fmt::Display for TokenSequence {
    /// Compact form: runs of visual tokens are shown as `<V×n>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut run = 0usize;
        let mut parts: Vec<String> = Vec::new();
        let flush = |run: &mut usize, parts: &mut Vec<String>| {
            if *run > 0 {
                parts.push(format!("<V×{run}>"));
                *run = 0;
            }
        };
        for t in &self.items {
            match t {
                PromptToken::VisualToken(_) => run += 1,
                other => {
                    flush(&mut run, &mut parts);
                    parts.push(match other {
                        PromptToken::ObsBegin => "<OBS>".into(),
                        PromptToken::FrameSep => "<SEP>".into(),
                        PromptToken::NavTag => "<NAV>".into(),
                        PromptToken::InstrToken(s) => s.clone(),
                        PromptToken::VisualToken(_) => unreachable!(),
                    });
                }
            }
        }
        flush(&mut run, &mut parts);
        f.write_str(&parts.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{fold_frames, MergeConfig};
    use crate::streams::{take_frames, StreamKind};
    use proptest::prelude::*;

    fn state(kind: StreamKind, channels: usize, t: usize) -> MemoryState {
        let frames = take_frames(kind, 256, channels, 7, t);
        fold_frames(&frames, &MergeConfig::default()).unwrap()
    }

    fn chair() -> Instruction {
        Instruction::new("Search for a chair", TaskKind::ObjectNav)
    }

    #[test]
    fn single_frame_layout() {
        let seq = assemble(&state(StreamKind::Random, 8, 1), &chair(), true).unwrap();
        assert_eq!(seq.items[0], PromptToken::ObsBegin);
        assert_eq!(visual_token_count(&seq), 64);
        assert_eq!(seq.separator_count(), 0);
        assert_eq!(seq.items[65], PromptToken::NavTag);
        assert_eq!(seq.instruction_tokens(), ["Search", "for", "a", "chair"]);
        assert_eq!(seq.len(), 1 + 64 + 1 + 4);
        assert_eq!(seq.to_string(), "<OBS> <V×64> <NAV> Search for a chair");
        seq.validate().unwrap();
    }

    #[test]
    fn two_frames_have_one_separator() {
        let seq = assemble(&state(StreamKind::Random, 8, 2), &chair(), true).unwrap();
        assert_eq!(seq.separator_count(), 1);
        assert_eq!(seq.to_string(), "<OBS> <V×4> <SEP> <V×64> <NAV> Search for a chair");
    }

    #[test]
    fn answer_phase_has_no_nav_tag() {
        let s = state(StreamKind::Random, 8, 3);
        let q = Instruction::new("What color is the bed?", TaskKind::Eqa);
        let seq = assemble(&s, &q, false).unwrap();
        assert!(!seq.has_nav_tag());
        seq.validate().unwrap();
    }

    #[test]
    fn counts_follow_memory() {
        assert_eq!(
            visual_token_count(&assemble(&state(StreamKind::Random, 8, 65), &chair(), true).unwrap()),
            320
        );
        assert_eq!(
            visual_token_count(&assemble(&state(StreamKind::Orthogonal, 128, 100), &chair(), true).unwrap()),
            355
        );
    }

    #[test]
    fn empty_memory_is_an_error() {
        assert_eq!(
            assemble(&MemoryState::new(), &chair(), true),
            Err(TokenError::EmptyMemory)
        );
    }

    #[test]
    fn empty_instruction_rejected() {
        assert!(Instruction::try_new("  ", TaskKind::Vln).is_err());
    }

    #[test]
    fn validate_catches_misplaced_separator() {
        let seq = TokenSequence {
            items: vec![
                PromptToken::ObsBegin,
                PromptToken::FrameSep,
                PromptToken::VisualToken(vec![0.0]),
            ],
        };
        assert!(seq.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn count_matches_tiers(t in 1usize..140, seed in 0u64..1000) {
            let frames = take_frames(StreamKind::Drift, 256, 4, seed, t);
            let s = fold_frames(&frames, &MergeConfig::default()).unwrap();
            let seq = assemble(&s, &chair(), true).unwrap();
            prop_assert_eq!(visual_token_count(&seq), 64 + 4 * s.short_term().len() + s.long_term().len());
            prop_assert_eq!(visual_token_count(&seq), s.token_count());
            prop_assert_eq!(seq.separator_count(), s.long_term().len() + s.short_term().len());
            prop_assert!(seq.validate().is_ok());
            let plain = assemble(&s, &chair(), false).unwrap();
            prop_assert_eq!(seq.visual_rows(), plain.visual_rows());
            prop_assert_eq!(seq.len(), plain.len() + 1);
        }
    }
}
