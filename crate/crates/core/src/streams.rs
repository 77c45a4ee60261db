//! Synthetic frame streams for profiling and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{FrameFeatures, TokenMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamKind {
    /// Every frame identical.
    Constant,
    /// Frame `t` is one-hot on channel `t mod C`; consecutive frames are orthogonal.
    Orthogonal,
    /// Independent uniform frames.
    Random,
    /// Slowly drifting scene: a base frame plus a random walk.
    Drift,
}

impl std::str::FromStr for StreamKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(Self::Constant),
            "orthogonal" => Ok(Self::Orthogonal),
            "random" => Ok(Self::Random),
            "drift" => Ok(Self::Drift),
            other => Err(format!("unknown stream `{other}` (constant|orthogonal|random|drift)")),
        }
    }
}

/// Lazily generated frame stream, 1-based frame indices.
pub struct FrameStream {
    kind: StreamKind,
    n_x: usize,
    channels: usize,
    rng: ChaCha8Rng,
    state: Vec<f64>,
    t: u64,
}

impl FrameStream {
    pub fn new(kind: StreamKind, n_x: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = (0..n_x * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self {
            kind,
            n_x,
            channels,
            rng,
            state,
            t: 0,
        }
    }
}

impl Iterator for FrameStream {
    type Item = FrameFeatures;

    fn next(&mut self) -> Option<FrameFeatures> {
        self.t += 1;
        let data = match self.kind {
            StreamKind::Constant => self.state.clone(),
            StreamKind::Orthogonal => {
                let hot = (self.t as usize - 1) % self.channels;
                (0..self.n_x * self.channels)
                    .map(|i| if i % self.channels == hot { 1.0 } else { 0.0 })
                    .collect()
            }
            StreamKind::Random => (0..self.n_x * self.channels)
                .map(|_| self.rng.gen_range(-1.0..1.0))
                .collect(),
            StreamKind::Drift => {
                for v in &mut self.state {
                    *v += self.rng.gen_range(-0.05..0.05);
                }
                self.state.clone()
            }
        };
        let tokens = TokenMatrix::new(self.n_x, self.channels, data).expect("finite stream");
        Some(FrameFeatures {
            tokens,
            frame_index: self.t,
        })
    }
}

pub fn take_frames(kind: StreamKind, n_x: usize, channels: usize, seed: u64, count: usize) -> Vec<FrameFeatures> {
    FrameStream::new(kind, n_x, channels, seed).take(count).collect()
}
