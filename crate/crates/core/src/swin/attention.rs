//! Multi-head self-attention inside windows with a learned relative
//! position bias.

use crate::error::{Error, Result};
use crate::nn::{Linear, Params};
use crate::tensor::Tensor;

/// Row of the bias table for each (query, key) pair of a window.
///
/// The table has `(2M - 1)^3` rows, one per relative offset triple in
/// `[-(M-1), M-1]^3`, flattened row-major.
pub fn relative_index(offsets: &[[usize; 3]], m: usize) -> Vec<Option<usize>> {
    let span = 2 * m - 1;
    let mut idx = Vec::with_capacity(offsets.len() * offsets.len());
    for q in offsets {
        for k in offsets {
            let r = [0, 1, 2].map(|a| q[a] + m - 1 - k[a]);
            idx.push(Some((r[0] * span + r[1]) * span + r[2]));
        }
    }
    idx
}

#[derive(Clone)]
pub struct WindowAttention {
    pub qkv: Linear,
    pub proj: Linear,
    /// `[(2M-1)^3, heads]`
    pub bias_table: Tensor,
    pub heads: usize,
    pub window: usize,
}

impl WindowAttention {
    pub fn new(p: &Params, dim: usize, heads: usize, window: usize, qkv_bias: bool) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::config(format!("{dim} channels not divisible by {heads} heads")));
        }
        let span = 2 * window - 1;
        Ok(WindowAttention {
            qkv: Linear::new(&p.sub("qkv"), dim, 3 * dim, qkv_bias)?,
            proj: Linear::new(&p.sub("proj"), dim, dim, true)?,
            bias_table: p.zeros_param("relative_position_bias_table", &[span * span * span, heads])?,
            heads,
            window,
        })
    }

    pub fn dim(&self) -> usize {
        self.proj.weight.shape()[0]
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    /// `[heads, T, T]` bias for windows with the given local offsets.
    pub fn position_bias(&self, offsets: &[[usize; 3]]) -> Result<Tensor> {
        let t = offsets.len();
        if offsets.iter().flatten().any(|&o| o >= self.window) {
            return Err(Error::shape(format!(
                "window offsets exceed window size {}",
                self.window
            )));
        }
        self.bias_table
            .gather_rows(&relative_index(offsets, self.window))?
            .permute(&[1, 0])?
            .reshape(&[self.heads, t, t])
    }

    /// `Softmax(Q K^T / sqrt(d) + B + mask) V`, heads concatenated and
    /// projected. `windows` is `[nw, T, C]`, `mask` broadcasts onto
    /// `[nw, heads, T, T]`.
    pub fn forward(&self, windows: &Tensor, offsets: &[[usize; 3]], mask: Option<&Tensor>) -> Result<Tensor> {
        windows.expect_rank(3, "attention windows")?;
        let (nw, t, c) = (windows.shape()[0], windows.shape()[1], windows.shape()[2]);
        if c != self.dim() {
            return Err(Error::config(format!(
                "attention built for {} channels, got {c}",
                self.dim()
            )));
        }
        if offsets.len() != t {
            return Err(Error::shape(format!("{} offsets for {t} tokens", offsets.len())));
        }
        let (h, dh) = (self.heads, self.head_dim());
        let qkv = self
            .qkv
            .forward(windows)?
            .reshape(&[nw, t, 3, h, dh])?
            .permute(&[2, 0, 3, 1, 4])?;
        let part = |i: usize| -> Result<Tensor> { qkv.narrow(0, i, 1)?.reshape(&[nw, h, t, dh]) };
        let (q, k, v) = (part(0)?, part(1)?, part(2)?);
        let mut logits = q
            .bmm(&k, true)?
            .scale(1.0 / (dh as f64).sqrt())
            .add_broadcast(&self.position_bias(offsets)?)?;
        if let Some(m) = mask {
            logits = logits.add_broadcast(m)?;
        }
        let out = logits
            .softmax_lastaxis()
            .bmm(&v, false)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[nw, t, c])?;
        self.proj.forward(&out)
    }
}
