//! Hierarchical encoder producing skip features at six resolutions.

use crate::error::{Error, Result};
use crate::nn::{CnnBlock, Params};
use crate::swin::{EncoderConfig, PatchEmbed, PatchMerge, SwinBlock, TokenGrid};
use crate::tensor::Tensor;

/// Skip levels `0..=5`; level 5 is the encoder output.
pub const NUM_SKIPS: usize = 6;

/// Input extents must be divisible by this.
pub const INPUT_MULTIPLE: usize = 32;

/// Encoder features as `[1, C_i, H/2^i, W/2^i, D/2^i]` volumes.
#[derive(Debug, Clone)]
pub struct SkipSet {
    pub features: Vec<Tensor>,
}

impl SkipSet {
    pub fn new(features: Vec<Tensor>) -> Result<Self> {
        if features.len() != NUM_SKIPS {
            return Err(Error::contract(format!(
                "skip set needs {NUM_SKIPS} levels, got {}",
                features.len()
            )));
        }
        Ok(SkipSet { features })
    }

    pub fn level(&self, i: usize) -> &Tensor {
        &self.features[i]
    }

    pub fn bottleneck(&self) -> &Tensor {
        &self.features[NUM_SKIPS - 1]
    }
}

/// Shapes `encode` produces for an input of spatial size `input`.
pub fn skip_shapes(config: &EncoderConfig, input: [usize; 3]) -> Result<Vec<[usize; 5]>> {
    config.validate()?;
    check_input_dims(input)?;
    Ok((0..NUM_SKIPS)
        .map(|i| {
            let s = input.map(|e| e >> i);
            [1, config.skip_dim(i), s[0], s[1], s[2]]
        })
        .collect())
}

fn check_input_dims(dims: [usize; 3]) -> Result<()> {
    if dims.iter().any(|&e| e == 0 || e % INPUT_MULTIPLE != 0) {
        return Err(Error::shape(format!(
            "input extents {dims:?} must be positive multiples of {INPUT_MULTIPLE}; pad the volume first"
        )));
    }
    Ok(())
}

#[derive(Clone)]
pub struct Stage {
    pub blocks: Vec<SwinBlock>,
    pub merge: PatchMerge,
}

#[derive(Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub stem: CnnBlock,
    pub embed: PatchEmbed,
    pub stages: Vec<Stage>,
}

impl Encoder {
    /// Registers all encoder parameters under `p`.
    pub fn new(p: &Params, config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let stem = CnnBlock::new(&p.sub("stem"), 1, config.stem_dim())?;
        let embed = PatchEmbed::new(&p.sub("patch_embed"), config.embed_dim)?;
        let mut stages = Vec::with_capacity(EncoderConfig::STAGES);
        for s in 0..EncoderConfig::STAGES {
            let sp = p.sub(&format!("stages.{s}"));
            let dim = config.stage_dim(s);
            let blocks = (0..config.depths[s])
                .map(|b| {
                    SwinBlock::new(
                        &sp.sub(&format!("blocks.{b}")),
                        dim,
                        config.num_heads[s],
                        config.window,
                        config.mlp_hidden(dim),
                        config.qkv_bias,
                        b % 2 == 1,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let merge = PatchMerge::new(&sp.sub("merge"), dim)?;
            stages.push(Stage { blocks, merge });
        }
        Ok(Encoder {
            config: config.clone(),
            stem,
            embed,
            stages,
        })
    }

    /// `[1, 1, H, W, D]` volume to the six skip levels.
    pub fn encode(&self, volume: &Tensor) -> Result<SkipSet> {
        volume.expect_rank(5, "encoder input")?;
        let s = volume.shape();
        if s[0] != 1 || s[1] != 1 {
            return Err(Error::shape(format!("encoder expects [1, 1, H, W, D], got {s:?}")));
        }
        check_input_dims([s[2], s[3], s[4]])?;

        let mut features = Vec::with_capacity(NUM_SKIPS);
        features.push(self.stem.forward(volume)?);
        let mut grid = self.embed.forward(volume)?;
        features.push(grid.to_volume()?);
        for stage in &self.stages {
            grid = self.run_stage(stage, grid)?;
            features.push(grid.to_volume()?);
        }
        SkipSet::new(features)
    }

    fn run_stage(&self, stage: &Stage, mut grid: TokenGrid) -> Result<TokenGrid> {
        for block in &stage.blocks {
            grid = block.forward(&grid)?;
        }
        stage.merge.forward(&grid)
    }
}
