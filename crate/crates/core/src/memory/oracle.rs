//! From-scratch recomputation of the memory layout for a whole frame list.
//!
//! Every frame is pooled directly from full resolution at the scale of the
//! group its timestamp falls in, and long-term groups are rebuilt as plain
//! arithmetic means of their members. Nothing here reuses the incremental
//! path, so agreement with [`MemoryState::push`](super::MemoryState::push)
//! is a real check.

use std::collections::VecDeque;

use super::{LongEntry, MemoryState, MergeConfig};
use crate::error::TokenError;
use crate::features::{cosine_similarity, grid_pool, FrameFeatures, TokenMatrix};

pub fn batch_oracle(frames: &[FrameFeatures], cfg: &MergeConfig) -> Result<MemoryState, TokenError> {
    let last = frames.last().ok_or(TokenError::EmptyMemory)?;
    let (n_x, c) = (last.tokens.rows(), last.tokens.cols());
    cfg.validate(n_x)?;
    for f in frames {
        if f.tokens.rows() != n_x || f.tokens.cols() != c {
            return Err(TokenError::ShapeMismatch {
                rows: f.tokens.rows(),
                cols: f.tokens.cols(),
                expected_rows: n_x,
                expected_cols: c,
            });
        }
    }

    // 1-based timestamps: current = T, short = [T-B, T), long = [1, T-B).
    let total = frames.len();
    let b = cfg.buffer_len;
    let long_end = total.saturating_sub(b + 1); // frames 1..=long_end are long-term
    let curr = grid_pool(&last.tokens, cfg.alpha_curr)?;
    let short = frames[long_end..total - 1]
        .iter()
        .map(|f| grid_pool(&f.tokens, cfg.alpha_short))
        .collect::<Result<VecDeque<_>, _>>()?;

    let mut groups: Vec<Vec<TokenMatrix>> = Vec::new();
    for (i, f) in frames[..long_end].iter().enumerate() {
        let candidate = grid_pool(&f.tokens, cfg.alpha_long)?;
        // the first evicted frame always opens a new group
        let join = match groups.last() {
            Some(group) if i > 0 => {
                let mean = group_mean(group);
                cosine_similarity(mean.as_slice(), candidate.as_slice())? > cfg.tau
            }
            _ => false,
        };
        if join {
            groups.last_mut().unwrap().push(candidate);
        } else {
            groups.push(vec![candidate]);
        }
    }
    let long = groups
        .iter()
        .map(|g| LongEntry {
            token: group_mean(g),
            k_merged: g.len() as u64,
        })
        .collect();

    Ok(MemoryState::from_parts(
        Some(curr),
        short,
        long,
        total as u64,
        Some((n_x, c)),
    ))
}

/// Arithmetic mean of equally shaped matrices.
pub fn group_mean(group: &[TokenMatrix]) -> TokenMatrix {
    let first = &group[0];
    let mut acc = vec![0.0; first.as_slice().len()];
    for m in group {
        for (a, v) in acc.iter_mut().zip(m.as_slice()) {
            *a += v;
        }
    }
    let n = group.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    TokenMatrix::new(first.rows(), first.cols(), acc).expect("mean of finite values")
}
