//! 3D shifted-window transformer encoder.
//!
//! Token grids are stored as `[h*w*d, C]` matrices with h-major row order:
//! token `(x, y, z)` lives in row `(x * w + y) * d + z`.

mod attention;
mod block;
mod encoder;
mod window;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use attention::{relative_index, WindowAttention};
pub(crate) use block::windowed_attention;
pub use block::{merge_groups, patch_vectors, PatchEmbed, PatchMerge, SwinBlock};
pub use encoder::{skip_shapes, Encoder, SkipSet, Stage, INPUT_MULTIPLE, NUM_SKIPS};
pub use window::{cyclic_shift, window_partition, window_reverse, PadRecord, WindowLayout};

/// Encoder hyper-parameters. Stage `s` runs at width `embed_dim * 2^s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub depths: Vec<usize>,
    pub num_heads: Vec<usize>,
    pub window: usize,
    pub mlp_ratio: f64,
    pub token_size: usize,
    pub qkv_bias: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 96,
            depths: vec![2, 2, 2, 2],
            num_heads: vec![3, 6, 12, 24],
            window: 4,
            mlp_ratio: 4.0,
            token_size: 2,
            qkv_bias: true,
        }
    }
}

impl EncoderConfig {
    /// Small configuration for tests and desk-scale training.
    pub fn tiny() -> Self {
        EncoderConfig {
            embed_dim: 8,
            depths: vec![1, 1, 1, 1],
            num_heads: vec![2, 2, 4, 4],
            window: 2,
            ..Self::default()
        }
    }

    pub const STAGES: usize = 4;

    pub fn validate(&self) -> Result<()> {
        let c = self.embed_dim;
        if c < 2 || !c.is_multiple_of(2) {
            return Err(Error::config(format!("embed_dim must be even and >= 2, got {c}")));
        }
        if self.depths.len() != Self::STAGES || self.num_heads.len() != Self::STAGES {
            return Err(Error::config(format!(
                "need {} depths and head counts, got {} and {}",
                Self::STAGES,
                self.depths.len(),
                self.num_heads.len()
            )));
        }
        for (s, &h) in self.num_heads.iter().enumerate() {
            let width = self.stage_dim(s);
            if h == 0 || !width.is_multiple_of(h) {
                return Err(Error::config(format!(
                    "stage {s}: width {width} not divisible by {h} heads"
                )));
            }
        }
        if self.window == 0 {
            return Err(Error::config("window size must be >= 1"));
        }
        if self.token_size != 2 {
            return Err(Error::config(format!("token_size must be 2, got {}", self.token_size)));
        }
        if !(self.mlp_ratio > 0.0) {
            return Err(Error::config("mlp_ratio must be positive"));
        }
        Ok(())
    }

    /// Channel width of encoder stage `s`.
    pub fn stage_dim(&self, s: usize) -> usize {
        self.embed_dim << s
    }

    /// Width of the full-resolution convolutional skip.
    pub fn stem_dim(&self) -> usize {
        self.embed_dim / 2
    }

    /// Channel width of skip level `i` in `0..=5`.
    pub fn skip_dim(&self, i: usize) -> usize {
        if i == 0 {
            self.stem_dim()
        } else {
            self.embed_dim << (i - 1)
        }
    }

    pub fn mlp_hidden(&self, dim: usize) -> usize {
        ((dim as f64) * self.mlp_ratio).round().max(1.0) as usize
    }
}

/// Lattice of tokens with `channels` features each.
#[derive(Debug, Clone)]
pub struct TokenGrid {
    pub dims: [usize; 3],
    pub values: Tensor,
}

impl TokenGrid {
    pub fn new(dims: [usize; 3], values: Tensor) -> Result<Self> {
        values.expect_rank(2, "token grid values")?;
        let n = dims.iter().product::<usize>();
        if values.shape()[0] != n {
            return Err(Error::shape(format!(
                "token grid {dims:?} needs {n} rows, got {}",
                values.shape()[0]
            )));
        }
        Ok(TokenGrid { dims, values })
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row of token `(x, y, z)`.
    pub fn row(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    /// `[1, C, h, w, d]` volume with the same values.
    pub fn to_volume(&self) -> Result<Tensor> {
        let [h, w, d] = self.dims;
        self.values.permute(&[1, 0])?.reshape(&[1, self.channels(), h, w, d])
    }

    /// Inverse of [`TokenGrid::to_volume`]; batch size must be 1.
    pub fn from_volume(volume: &Tensor) -> Result<Self> {
        volume.expect_rank(5, "volume")?;
        let s = volume.shape();
        if s[0] != 1 {
            return Err(Error::shape(format!("expected batch size 1, got {}", s[0])));
        }
        let (c, dims) = (s[1], [s[2], s[3], s[4]]);
        let n = dims.iter().product();
        let values = volume.reshape(&[c, n])?.permute(&[1, 0])?;
        TokenGrid::new(dims, values)
    }

    pub fn map_values(&self, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Self> {
        TokenGrid::new(self.dims, f(&self.values)?)
    }
}
