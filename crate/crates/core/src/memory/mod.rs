//! Three-tier online visual token memory.
//!
//! Frames enter as full-resolution patch grids. The newest frame is kept at
//! the `alpha_curr` scale, the previous `buffer_len` frames at `alpha_short`,
//! and anything older is squeezed to a single `alpha_long` token that is
//! fused into the newest long-term entry while consecutive long tokens stay
//! cosine-similar above `tau`.
//!
//! Each push pools at most three matrices (the incoming frame, the previous
//! current frame and the evicted short-term entry) and computes at most one
//! cosine, so the cost per frame does not depend on history length.

pub mod oracle;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::TokenError;
use crate::features::{cosine_similarity, grid_pool, grid_side, FrameFeatures, PoolScale, TokenMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeConfig {
    pub alpha_curr: PoolScale,
    pub alpha_short: PoolScale,
    pub alpha_long: PoolScale,
    pub buffer_len: usize,
    pub tau: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            alpha_curr: PoolScale::new(2).unwrap(),
            alpha_short: PoolScale::new(8).unwrap(),
            alpha_long: PoolScale::new(16).unwrap(),
            buffer_len: 64,
            tau: 0.95,
        }
    }
}

impl MergeConfig {
    /// Checks scale ordering and divisibility against a grid of `n_x` tokens.
    pub fn validate(&self, n_x: usize) -> Result<(), TokenError> {
        let side = grid_side(n_x)?;
        let (c, s, l) = (self.alpha_curr.get(), self.alpha_short.get(), self.alpha_long.get());
        if !(c < s && s < l) {
            return Err(TokenError::InvalidConfig(format!(
                "pool factors must increase: {c} < {s} < {l}"
            )));
        }
        for a in [c, s, l] {
            if side % a != 0 {
                return Err(TokenError::IncompatibleScale { alpha: a, side });
            }
        }
        if s % c != 0 || l % s != 0 {
            return Err(TokenError::InvalidConfig(format!(
                "each pool factor must divide the next: {c} | {s} | {l}"
            )));
        }
        if self.buffer_len == 0 {
            return Err(TokenError::InvalidConfig("buffer_len must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(TokenError::InvalidConfig(format!("tau {} outside [0, 1]", self.tau)));
        }
        Ok(())
    }

    fn short_ratio(&self) -> PoolScale {
        PoolScale::new(self.alpha_short.get() / self.alpha_curr.get()).unwrap()
    }

    fn long_ratio(&self) -> PoolScale {
        PoolScale::new(self.alpha_long.get() / self.alpha_short.get()).unwrap()
    }
}

/// One long-term token and how many frames it has absorbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongEntry {
    pub token: TokenMatrix,
    pub k_merged: u64,
}

/// Work performed by a single push, for cost accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PushReport {
    pub pool_calls: u32,
    /// Total input tokens read by the pooling calls.
    pub pooled_rows: usize,
    pub cosine_calls: u32,
    pub fused: bool,
    pub inserted_long: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    curr: Option<TokenMatrix>,
    short: VecDeque<TokenMatrix>,
    long: Vec<LongEntry>,
    t: u64,
    /// `(n_x, channels)` fixed by the first frame.
    shape: Option<(usize, usize)>,
}

impl MemoryState {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn from_parts(
        curr: Option<TokenMatrix>,
        short: VecDeque<TokenMatrix>,
        long: Vec<LongEntry>,
        t: u64,
        shape: Option<(usize, usize)>,
    ) -> Self {
        Self {
            curr,
            short,
            long,
            t,
            shape,
        }
    }

    pub fn frames(&self) -> u64 {
        self.t
    }

    pub fn current(&self) -> Option<&TokenMatrix> {
        self.curr.as_ref()
    }

    pub fn short_term(&self) -> &VecDeque<TokenMatrix> {
        &self.short
    }

    pub fn long_term(&self) -> &[LongEntry] {
        &self.long
    }

    /// Ingests one frame in place (Algorithm: short append, current refresh,
    /// eviction to long term with cosine-gated running-mean fusion).
    pub fn push(&mut self, x: &FrameFeatures, cfg: &MergeConfig) -> Result<PushReport, TokenError> {
        let (rows, cols) = (x.tokens.rows(), x.tokens.cols());
        match self.shape {
            Some((n, c)) if n != rows || c != cols => {
                return Err(TokenError::ShapeMismatch {
                    rows,
                    cols,
                    expected_rows: n,
                    expected_cols: c,
                })
            }
            _ => {}
        }
        cfg.validate(rows)?;

        let mut report = PushReport::default();
        let t = self.t + 1;
        let fresh_curr = grid_pool(&x.tokens, cfg.alpha_curr)?;
        report.pool_calls += 1;
        report.pooled_rows += rows;

        if let Some(prev) = self.curr.take() {
            let to_short = grid_pool(&prev, cfg.short_ratio())?;
            report.pool_calls += 1;
            report.pooled_rows += prev.rows();
            self.short.push_back(to_short);
        }
        self.curr = Some(fresh_curr);

        let b = cfg.buffer_len as u64;
        if t > b + 1 {
            let oldest = self
                .short
                .pop_front()
                .expect("short-term buffer holds buffer_len + 1 entries at eviction");
            let candidate = grid_pool(&oldest, cfg.long_ratio())?;
            report.pool_calls += 1;
            report.pooled_rows += oldest.rows();

            let similar = match self.long.last() {
                Some(last) if t > b + 2 => {
                    report.cosine_calls += 1;
                    cosine_similarity(last.token.as_slice(), candidate.as_slice())? > cfg.tau
                }
                _ => false,
            };
            if similar {
                let last = self.long.last_mut().unwrap();
                last.token = running_mean(&last.token, last.k_merged, &candidate);
                last.k_merged += 1;
                report.fused = true;
            } else {
                self.long.push(LongEntry {
                    token: candidate,
                    k_merged: 1,
                });
                report.inserted_long = true;
            }
        }

        self.t = t;
        self.shape = Some((rows, cols));
        Ok(report)
    }

    /// Returns the state after ingesting `x`, leaving `self` untouched.
    pub fn with_frame(&self, x: &FrameFeatures, cfg: &MergeConfig) -> Result<(Self, PushReport), TokenError> {
        let mut next = self.clone();
        let report = next.push(x, cfg)?;
        Ok((next, report))
    }

    /// Visual tokens in model order: long (oldest first), short (oldest first), current.
    pub fn token_sequence(&self) -> Result<TokenMatrix, TokenError> {
        let curr = self.curr.as_ref().ok_or(TokenError::EmptyMemory)?;
        let cols = curr.cols();
        let mut data = Vec::with_capacity(self.token_count() * cols);
        for entry in &self.long {
            data.extend_from_slice(entry.token.as_slice());
        }
        for s in &self.short {
            data.extend_from_slice(s.as_slice());
        }
        data.extend_from_slice(curr.as_slice());
        let rows = data.len() / cols;
        TokenMatrix::new(rows, cols, data)
    }

    pub fn token_count(&self) -> usize {
        self.long.iter().map(|e| e.token.rows()).sum::<usize>()
            + self.short.iter().map(TokenMatrix::rows).sum::<usize>()
            + self.curr.as_ref().map_or(0, TokenMatrix::rows)
    }

    /// Entrywise distance to another state, `None` when their layouts differ.
    pub fn max_abs_diff(&self, other: &MemoryState) -> Option<f64> {
        if self.t != other.t
            || self.short.len() != other.short.len()
            || self.long.len() != other.long.len()
            || self.curr.is_some() != other.curr.is_some()
        {
            return None;
        }
        let mut worst = 0.0f64;
        if let (Some(a), Some(b)) = (&self.curr, &other.curr) {
            worst = worst.max(a.max_abs_diff(b)?);
        }
        for (a, b) in self.short.iter().zip(&other.short) {
            worst = worst.max(a.max_abs_diff(b)?);
        }
        for (a, b) in self.long.iter().zip(&other.long) {
            if a.k_merged != b.k_merged {
                return None;
            }
            worst = worst.max(a.token.max_abs_diff(&b.token)?);
        }
        Some(worst)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("memory state serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// `(k * mean + x) / (k + 1)`
fn running_mean(mean: &TokenMatrix, k: u64, x: &TokenMatrix) -> TokenMatrix {
    let k = k as f64;
    let data = mean
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(m, v)| (k * m + v) / (k + 1.0))
        .collect();
    TokenMatrix::new(mean.rows(), mean.cols(), data).expect("fused token stays finite")
}

/// Folds `push` over a frame list from an empty state.
pub fn fold_frames<'a>(
    frames: impl IntoIterator<Item = &'a FrameFeatures>,
    cfg: &MergeConfig,
) -> Result<MemoryState, TokenError> {
    let mut state = MemoryState::new();
    for f in frames {
        state.push(f, cfg)?;
    }
    Ok(state)
}

/// Baseline that keeps every frame at the `alpha_curr` scale with no merging.
#[derive(Debug, Clone, Default)]
pub struct NaiveMemory {
    frames: Vec<TokenMatrix>,
}

impl NaiveMemory {
    pub fn push(&mut self, x: &FrameFeatures, cfg: &MergeConfig) -> Result<(), TokenError> {
        self.frames.push(grid_pool(&x.tokens, cfg.alpha_curr)?);
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        self.frames.iter().map(TokenMatrix::rows).sum()
    }

    pub fn token_sequence(&self) -> Result<TokenMatrix, TokenError> {
        let first = self.frames.first().ok_or(TokenError::EmptyMemory)?;
        let cols = first.cols();
        let data: Vec<f64> = self.frames.iter().flat_map(|f| f.as_slice().iter().copied()).collect();
        TokenMatrix::new(data.len() / cols, cols, data)
    }
}

/// All frames pooled at the current-frame scale, concatenated in time order.
pub fn naive_memory(frames: &[FrameFeatures], cfg: &MergeConfig) -> Result<TokenMatrix, TokenError> {
    let mut naive = NaiveMemory::default();
    for f in frames {
        naive.push(f, cfg)?;
    }
    naive.token_sequence()
}
