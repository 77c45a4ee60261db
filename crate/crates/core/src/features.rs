//! Dense frame features, grid pooling and the synthetic feature extractor.
//!
//! A frame is a square grid of `n_x` patch tokens, each a `C`-channel vector,
//! stored row-major. Pooling averages `alpha x alpha` blocks of the grid and
//! always accumulates in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TokenError;
use crate::world::{LocalView, ViewCode};

/// Row-major token matrix: `rows` tokens of `cols` channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct TokenMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for TokenMatrix {
    type Error = TokenError;
    fn try_from(raw: RawMatrix) -> Result<Self, Self::Error> {
        TokenMatrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl TokenMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TokenError> {
        if data.len() != rows * cols {
            return Err(TokenError::DimensionMismatch {
                left: data.len(),
                right: rows * cols,
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TokenError::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TokenError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TokenError::DimensionMismatch {
                    left: row.len(),
                    right: cols,
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Largest absolute entrywise difference; `None` if shapes differ.
    pub fn max_abs_diff(&self, other: &TokenMatrix) -> Option<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    }
}

/// One frame's patch tokens plus its 1-based time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub tokens: TokenMatrix,
    pub frame_index: u64,
}

impl FrameFeatures {
    pub fn new(tokens: TokenMatrix, frame_index: u64) -> Result<Self, TokenError> {
        grid_side(tokens.rows())?;
        if tokens.cols() == 0 {
            return Err(TokenError::InvalidConfig("channel count must be >= 1".into()));
        }
        Ok(Self { tokens, frame_index })
    }
}

/// Positive integer pooling factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct PoolScale(usize);

impl PoolScale {
    pub fn new(alpha: usize) -> Result<Self, TokenError> {
        if alpha == 0 {
            return Err(TokenError::InvalidConfig("pool factor must be positive".into()));
        }
        Ok(Self(alpha))
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// Number of tokens a grid of `n_x` tokens pools down to.
    pub fn pooled_count(self, n_x: usize) -> Result<usize, TokenError> {
        let side = grid_side(n_x)?;
        if side % self.0 != 0 {
            return Err(TokenError::IncompatibleScale { alpha: self.0, side });
        }
        let s = side / self.0;
        Ok(s * s)
    }
}

impl TryFrom<usize> for PoolScale {
    type Error = TokenError;
    fn try_from(v: usize) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<PoolScale> for usize {
    fn from(p: PoolScale) -> usize {
        p.0
    }
}

/// Side length of a square token grid.
pub fn grid_side(rows: usize) -> Result<usize, TokenError> {
    let side = (rows as f64).sqrt().round() as usize;
    if side * side != rows || rows == 0 {
        return Err(TokenError::NonSquareTokenGrid { rows });
    }
    Ok(side)
}

/// Average-pools `alpha x alpha` blocks of the square token grid.
pub fn grid_pool(x: &TokenMatrix, alpha: PoolScale) -> Result<TokenMatrix, TokenError> {
    let side = grid_side(x.rows())?;
    let a = alpha.get();
    if side % a != 0 {
        return Err(TokenError::IncompatibleScale { alpha: a, side });
    }
    let out_side = side / a;
    let c = x.cols();
    let inv = 1.0 / (a * a) as f64;
    let mut out = vec![0.0; out_side * out_side * c];
    for oy in 0..out_side {
        for ox in 0..out_side {
            let dst = &mut out[(oy * out_side + ox) * c..(oy * out_side + ox + 1) * c];
            for iy in oy * a..(oy + 1) * a {
                for ix in ox * a..(ox + 1) * a {
                    for (d, s) in dst.iter_mut().zip(x.row(iy * side + ix)) {
                        *d += s;
                    }
                }
            }
            for d in dst.iter_mut() {
                *d *= inv;
            }
        }
    }
    Ok(TokenMatrix {
        rows: out_side * out_side,
        cols: c,
        data: out,
    })
}

/// Cosine similarity of two channel vectors. Zero-norm inputs score 0.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, TokenError> {
    if a.len() != b.len() {
        return Err(TokenError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub n_x: usize,
    pub channels: usize,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_x: 256,
            channels: 32,
            seed: 0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), TokenError> {
        grid_side(self.n_x)?;
        if self.channels == 0 {
            return Err(TokenError::InvalidConfig("c must be >= 1".into()));
        }
        Ok(())
    }
}

const POSITION_SCALE: f64 = 0.5;

/// Seeded random projection of a local view onto a `side x side x C` grid.
///
/// Each patch token is the mean code embedding of the view cells it covers,
/// plus a heading embedding and a small positional embedding, then box-smoothed
/// over its 3x3 neighbourhood.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    side: usize,
    codes: Vec<Vec<f64>>,
    headings: Vec<Vec<f64>>,
    positions: Vec<Vec<f64>>,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self, TokenError> {
        cfg.validate()?;
        let side = grid_side(cfg.n_x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut table = |n: usize, scale: f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..cfg.channels).map(|_| rng.gen_range(-1.0..1.0) * scale).collect())
                .collect()
        };
        let codes = table(ViewCode::COUNT, 1.0);
        let headings = table(12, 1.0);
        let positions = table(cfg.n_x, POSITION_SCALE);
        Ok(Self {
            cfg,
            side,
            codes,
            headings,
            positions,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn extract(&self, view: &LocalView, frame_index: u64) -> FrameFeatures {
        let c = self.cfg.channels;
        let vs = view.side();
        let heading = &self.headings[(view.heading_deg / 30) as usize % 12];
        let mut raw = vec![0.0; self.cfg.n_x * c];
        for gy in 0..self.side {
            let (y0, y1) = span(gy, self.side, vs);
            for gx in 0..self.side {
                let (x0, x1) = span(gx, self.side, vs);
                let g = gy * self.side + gx;
                let dst = &mut raw[g * c..(g + 1) * c];
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                for vy in y0..y1 {
                    for vx in x0..x1 {
                        let code = &self.codes[view.code_at(vy, vx) as usize];
                        for (d, e) in dst.iter_mut().zip(code) {
                            *d += e / n;
                        }
                    }
                }
                for ((d, h), p) in dst.iter_mut().zip(heading).zip(&self.positions[g]) {
                    *d += h + p;
                }
            }
        }
        let mut smooth = vec![0.0; raw.len()];
        let side = self.side as isize;
        for gy in 0..side {
            for gx in 0..side {
                let g = (gy * side + gx) as usize;
                let mut count = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (ny, nx) = (gy + dy, gx + dx);
                        if ny < 0 || nx < 0 || ny >= side || nx >= side {
                            continue;
                        }
                        count += 1.0;
                        let src = (ny * side + nx) as usize;
                        for k in 0..c {
                            smooth[g * c + k] += raw[src * c + k];
                        }
                    }
                }
                for v in &mut smooth[g * c..(g + 1) * c] {
                    *v /= count;
                }
            }
        }
        FrameFeatures {
            tokens: TokenMatrix {
                rows: self.cfg.n_x,
                cols: c,
                data: smooth,
            },
            frame_index,
        }
    }
}

/// Half-open range of view cells covered by patch `g` of `n` along an axis of `len` cells.
fn span(g: usize, n: usize, len: usize) -> (usize, usize) {
    let lo = g * len / n;
    let hi = ((g + 1) * len / n).max(lo + 1).min(len);
    (lo.min(len - 1), hi)
}

/// Convenience wrapper that builds a one-off extractor.
pub fn extract_features(view: &LocalView, cfg: FeatureConfig, frame_index: u64) -> Result<FrameFeatures, TokenError> {
    Ok(FeatureExtractor::new(cfg)?.extract(view, frame_index))
}
