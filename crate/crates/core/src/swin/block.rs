//! Transformer block, patch embedding and patch merging.

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, Mlp, Params};
use crate::swin::{TokenGrid, WindowAttention, WindowLayout};
use crate::tensor::Tensor;

/// Pre-norm block: `z' = A(LN(z)) + z`, `out = MLP(LN(z')) + z'` where `A`
/// is regular or shifted window attention.
#[derive(Clone)]
pub struct SwinBlock {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    pub shifted: bool,
}

impl SwinBlock {
    pub fn new(
        p: &Params,
        dim: usize,
        heads: usize,
        window: usize,
        mlp_hidden: usize,
        qkv_bias: bool,
        shifted: bool,
    ) -> Result<Self> {
        Ok(SwinBlock {
            norm1: LayerNorm::new(&p.sub("norm1"), dim)?,
            attn: WindowAttention::new(&p.sub("attn"), dim, heads, window, qkv_bias)?,
            norm2: LayerNorm::new(&p.sub("norm2"), dim)?,
            mlp: Mlp::new(&p.sub("mlp"), dim, mlp_hidden)?,
            shifted,
        })
    }

    pub fn forward(&self, grid: &TokenGrid) -> Result<TokenGrid> {
        let z = &grid.values;
        let attended = windowed_attention(&self.attn, grid.dims, &self.norm1.forward(z)?, self.shifted)?;
        let z1 = attended.add(z)?;
        let out = self.mlp.forward(&self.norm2.forward(&z1)?)?.add(&z1)?;
        TokenGrid::new(grid.dims, out)
    }
}

/// Applies window attention to normalized grid rows: shift, pad, partition,
/// attend with masking, and scatter back to grid order.
pub(crate) fn windowed_attention(
    attn: &WindowAttention,
    dims: [usize; 3],
    normed: &Tensor,
    shifted: bool,
) -> Result<Tensor> {
    let layout = WindowLayout::new(dims, attn.window, shifted)?;
    let windows = layout.partition(normed)?;
    let mask = layout.mask();
    let out = attn.forward(&windows, layout.local_offsets(), mask.as_ref())?;
    layout.reverse(&out)
}

/// Splits a single-channel volume into 2x2x2 voxel tokens and embeds each
/// 8-vector linearly into `dim` channels.
#[derive(Clone)]
pub struct PatchEmbed {
    pub proj: Linear,
}

impl PatchEmbed {
    pub fn new(p: &Params, dim: usize) -> Result<Self> {
        Ok(PatchEmbed {
            proj: Linear::new(&p.sub("proj"), 8, dim, true)?,
        })
    }

    /// `[1, 1, H, W, D]` to a `(H/2, W/2, D/2)` grid. Within a token the
    /// eight voxels are ordered by offset `(a, b, c)`, row-major.
    pub fn forward(&self, volume: &Tensor) -> Result<TokenGrid> {
        let raw = patch_vectors(volume)?;
        raw.map_values(|v| self.proj.forward(v))
    }
}

/// Raw `[tokens, 8]` voxel blocks of a `[1, 1, H, W, D]` volume.
pub fn patch_vectors(volume: &Tensor) -> Result<TokenGrid> {
    volume.expect_rank(5, "patch partition input")?;
    let s = volume.shape();
    if s[0] != 1 || s[1] != 1 {
        return Err(Error::shape(format!(
            "patch partition expects a [1, 1, H, W, D] volume, got {s:?}"
        )));
    }
    if s[2..].iter().any(|e| e % 2 != 0) {
        return Err(Error::shape(format!("spatial extents {:?} must be even", &s[2..])));
    }
    let dims = [s[2] / 2, s[3] / 2, s[4] / 2];
    let v = volume
        .reshape(&[dims[0], 2, dims[1], 2, dims[2], 2])?
        .permute(&[0, 2, 4, 1, 3, 5])?
        .reshape(&[dims.iter().product(), 8])?;
    TokenGrid::new(dims, v)
}

/// Halves the grid by concatenating each 2x2x2 token group (8C channels)
/// and projecting to 2C after layer norm. Odd extents are padded by
/// repeating the last plane.
#[derive(Clone)]
pub struct PatchMerge {
    pub norm: LayerNorm,
    pub reduction: Linear,
}

impl PatchMerge {
    pub fn new(p: &Params, dim: usize) -> Result<Self> {
        Ok(PatchMerge {
            norm: LayerNorm::new(&p.sub("norm"), 8 * dim)?,
            reduction: Linear::new(&p.sub("reduction"), 8 * dim, 2 * dim, false)?,
        })
    }

    pub fn forward(&self, grid: &TokenGrid) -> Result<TokenGrid> {
        let merged = merge_groups(grid)?;
        merged.map_values(|v| self.reduction.forward(&self.norm.forward(v)?))
    }
}

/// Concatenated `[tokens', 8C]` neighbor groups, offsets row-major.
pub fn merge_groups(grid: &TokenGrid) -> Result<TokenGrid> {
    let dims = grid.dims;
    if dims.iter().any(|&e| e < 2) {
        return Err(Error::shape(format!(
            "cannot merge grid {dims:?}: every extent must be >= 2"
        )));
    }
    let out = dims.map(|e| e.div_ceil(2));
    let mut rows = Vec::with_capacity(out.iter().product::<usize>() * 8);
    for x in 0..out[0] {
        for y in 0..out[1] {
            for z in 0..out[2] {
                for a in 0..2 {
                    for b in 0..2 {
                        for c in 0..2 {
                            let sx = (2 * x + a).min(dims[0] - 1);
                            let sy = (2 * y + b).min(dims[1] - 1);
                            let sz = (2 * z + c).min(dims[2] - 1);
                            rows.push(Some(grid.row(sx, sy, sz)));
                        }
                    }
                }
            }
        }
    }
    let c = grid.channels();
    let n: usize = out.iter().product();
    TokenGrid::new(out, grid.values.gather_rows(&rows)?.reshape(&[n, 8 * c])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_pure_residual() {
        let p = Params::zeros();
        let block = SwinBlock::new(&p, 4, 2, 2, 16, true, true).unwrap();
        let g = TokenGrid::new([3, 4, 2], Tensor::from_fn(&[24, 4], |i| (i as f64).cos())).unwrap();
        let y = block.forward(&g).unwrap();
        assert_eq!(y.values.to_vec(), g.values.to_vec());
    }

    #[test]
    fn identity_embedding_reproduces_voxels() {
        let p = Params::new(0);
        let embed = PatchEmbed::new(&p, 10).unwrap();
        let mut w = vec![0.0; 80];
        for i in 0..8 {
            w[i * 8 + i] = 1.0;
        }
        embed.proj.weight.assign(&w).unwrap();
        let vol = Tensor::from_fn(&[1, 1, 4, 4, 4], |i| i as f64);
        let g = embed.forward(&vol).unwrap();
        assert_eq!(g.dims, [2, 2, 2]);
        // token (1, 0, 1) covers voxels x in 2..4, y in 0..2, z in 2..4
        let row = g.row(1, 0, 1);
        let got = &g.values.data()[row * 10..row * 10 + 8];
        let want: Vec<f64> = [
            (2, 0, 2),
            (2, 0, 3),
            (2, 1, 2),
            (2, 1, 3),
            (3, 0, 2),
            (3, 0, 3),
            (3, 1, 2),
            (3, 1, 3),
        ]
        .iter()
        .map(|&(x, y, z)| ((x * 4 + y) * 4 + z) as f64)
        .collect();
        assert_eq!(got, &want[..]);
    }

    #[test]
    fn odd_volume_rejected() {
        let p = Params::new(0);
        let embed = PatchEmbed::new(&p, 4).unwrap();
        assert!(matches!(
            embed.forward(&Tensor::zeros(&[1, 1, 4, 3, 4])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn merge_concatenates_in_offset_order() {
        let g = TokenGrid::new([2, 2, 2], Tensor::from_fn(&[8, 2], |i| i as f64)).unwrap();
        let m = merge_groups(&g).unwrap();
        assert_eq!(m.dims, [1, 1, 1]);
        assert_eq!(m.values.to_vec(), (0..16).map(|i| i as f64).collect::<Vec<_>>());
        let merge = PatchMerge::new(&Params::new(0), 2).unwrap();
        assert_eq!(merge.forward(&g).unwrap().values.shape(), &[1, 4]);
    }

    #[test]
    fn odd_merge_replicates_edges() {
        let g = TokenGrid::new([3, 2, 2], Tensor::from_fn(&[12, 1], |i| i as f64)).unwrap();
        let m = merge_groups(&g).unwrap();
        assert_eq!(m.dims, [2, 1, 1]);
        // second group reads plane x = 2 twice
        assert_eq!(&m.values.data()[8..], &[8.0, 9.0, 10.0, 11.0, 8.0, 9.0, 10.0, 11.0]);
        let flat = TokenGrid::new([1, 2, 2], Tensor::zeros(&[4, 1])).unwrap();
        assert!(merge_groups(&flat).is_err());
    }
}
