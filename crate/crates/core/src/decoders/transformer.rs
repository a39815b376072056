//! Windowed transformer decoder: trilinear upsampling, skip concatenation,
//! a linear channel reduction and one decoder layer per level.

use crate::decoders::{expect_channels, DecoderConfig, DecoderOutputs, Heads};
use crate::error::Result;
use crate::nn::{LayerNorm, Linear, Mlp, Params};
use crate::swin::{windowed_attention, EncoderConfig, SkipSet, SwinBlock, TokenGrid, WindowAttention, NUM_SKIPS};
use crate::tensor::{concat, trilinear_upsample, Tensor};

/// Decoder layer:
/// `w = MLP(LN(w))` (plus `w` when `residual_mlp`), then
/// `out = W-MSA(LN(w)) + w` with regular, unshifted windows.
#[derive(Clone)]
pub struct DecoderLayer {
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
    pub norm_attn: LayerNorm,
    pub attn: WindowAttention,
    pub residual_mlp: bool,
}

impl DecoderLayer {
    pub fn new(p: &Params, dim: usize, heads: usize, enc: &EncoderConfig, residual_mlp: bool) -> Result<Self> {
        Ok(DecoderLayer {
            norm_mlp: LayerNorm::new(&p.sub("norm1"), dim)?,
            mlp: Mlp::new(&p.sub("mlp"), dim, enc.mlp_hidden(dim))?,
            norm_attn: LayerNorm::new(&p.sub("norm2"), dim)?,
            attn: WindowAttention::new(&p.sub("attn"), dim, heads, enc.window, enc.qkv_bias)?,
            residual_mlp,
        })
    }

    pub fn forward(&self, grid: &TokenGrid) -> Result<TokenGrid> {
        let mut w = self.mlp.forward(&self.norm_mlp.forward(&grid.values)?)?;
        if self.residual_mlp {
            w = w.add(&grid.values)?;
        }
        let a = windowed_attention(&self.attn, grid.dims, &self.norm_attn.forward(&w)?, false)?;
        TokenGrid::new(grid.dims, a.add(&w)?)
    }
}

#[derive(Clone)]
pub struct TransformerStage {
    pub reduce: Linear,
    pub layer: DecoderLayer,
}

#[derive(Clone)]
pub struct TransformerDecoder {
    widths: Vec<usize>,
    pub bottleneck: [SwinBlock; 2],
    /// `stages[i]` produces level `i` from level `i + 1`.
    pub stages: Vec<TransformerStage>,
    pub heads: Heads,
}

/// Attention heads for decoder level `i`: the encoder's head count at the
/// same width, or the largest common divisor with the stem width at level 0.
pub fn level_heads(enc: &EncoderConfig, i: usize) -> usize {
    match i {
        0 => gcd(enc.stem_dim(), enc.num_heads[0]),
        5 => 2 * enc.num_heads[3],
        _ => enc.num_heads[i - 1],
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl TransformerDecoder {
    pub fn new(p: &Params, enc: &EncoderConfig, dec: &DecoderConfig) -> Result<Self> {
        let widths: Vec<usize> = (0..NUM_SKIPS).map(|i| enc.skip_dim(i)).collect();
        let top = widths[NUM_SKIPS - 1];
        let block = |b: usize| {
            SwinBlock::new(
                &p.sub(&format!("bottleneck.{b}")),
                top,
                level_heads(enc, 5),
                enc.window,
                enc.mlp_hidden(top),
                enc.qkv_bias,
                b == 1,
            )
        };
        let bottleneck = [block(0)?, block(1)?];
        let stages = (0..NUM_SKIPS - 1)
            .map(|i| {
                let sp = p.sub(&format!("stages.{i}"));
                Ok(TransformerStage {
                    reduce: Linear::new(&sp.sub("reduce"), widths[i + 1] + widths[i], widths[i], true)?,
                    layer: DecoderLayer::new(&sp.sub("layer"), widths[i], level_heads(enc, i), enc, dec.residual_mlp)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TransformerDecoder {
            widths,
            bottleneck,
            stages,
            heads: Heads::new(&p.sub("heads"), enc, dec)?,
        })
    }

    pub fn decode(&self, skips: &SkipSet) -> Result<DecoderOutputs> {
        for (i, f) in skips.features.iter().enumerate() {
            expect_channels(f, self.widths[i], &format!("skip level {i}"))?;
        }
        let mut grid = TokenGrid::from_volume(skips.bottleneck())?;
        for block in &self.bottleneck {
            grid = block.forward(&grid)?;
        }
        let mut x = grid.to_volume()?;
        let mut levels: Vec<Option<Tensor>> = vec![None; NUM_SKIPS];
        for i in (0..NUM_SKIPS - 1).rev() {
            let stage = &self.stages[i];
            let fused = concat(&[trilinear_upsample(&x, 2)?, skips.level(i).clone()], 1)?;
            let g = TokenGrid::from_volume(&fused)?.map_values(|v| stage.reduce.forward(v))?;
            x = stage.layer.forward(&g)?.to_volume()?;
            levels[i] = Some(x.clone());
        }
        let get = |i: usize| levels[i].as_ref().expect("level decoded");
        self.heads.apply([get(0), get(1), get(2)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heads_divide_level_widths() {
        for enc in [EncoderConfig::default(), EncoderConfig::tiny()] {
            for i in 0..NUM_SKIPS {
                assert_eq!(enc.skip_dim(i) % level_heads(&enc, i), 0, "level {i}");
            }
        }
        assert_eq!(level_heads(&EncoderConfig::default(), 0), 3);
        assert_eq!(level_heads(&EncoderConfig::default(), 5), 48);
    }

    #[test]
    fn zero_weight_layer_is_identity_with_residual_mlp() {
        let enc = EncoderConfig::tiny();
        let layer = DecoderLayer::new(&Params::zeros(), 4, 2, &enc, true).unwrap();
        let g = TokenGrid::new([2, 2, 2], Tensor::from_fn(&[8, 4], |i| (i as f64).sin())).unwrap();
        assert_eq!(layer.forward(&g).unwrap().values.to_vec(), g.values.to_vec());
        let literal = DecoderLayer::new(&Params::zeros(), 4, 2, &enc, false).unwrap();
        assert!(literal.forward(&g).unwrap().values.to_vec().iter().all(|&v| v == 0.0));
    }
}
