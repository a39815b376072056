//! Convolutional decoder: transposed-convolution upsampling, skip
//! concatenation and a convolutional block per level.

use crate::decoders::{expect_channels, DecoderConfig, DecoderOutputs, Heads};
use crate::error::Result;
use crate::nn::{CnnBlock, Deconv, Params};
use crate::swin::{EncoderConfig, SkipSet, NUM_SKIPS};
use crate::tensor::{concat, Tensor};

#[derive(Clone)]
pub struct CnnStage {
    pub up: Deconv,
    pub block: CnnBlock,
}

#[derive(Clone)]
pub struct CnnDecoder {
    widths: Vec<usize>,
    pub bottleneck: CnnBlock,
    /// `stages[i]` produces level `i` from level `i + 1`.
    pub stages: Vec<CnnStage>,
    pub heads: Heads,
}

impl CnnDecoder {
    pub fn new(p: &Params, enc: &EncoderConfig, dec: &DecoderConfig) -> Result<Self> {
        let widths: Vec<usize> = (0..NUM_SKIPS).map(|i| enc.skip_dim(i)).collect();
        let top = widths[NUM_SKIPS - 1];
        let bottleneck = CnnBlock::new(&p.sub("bottleneck"), top, top)?;
        let stages = (0..NUM_SKIPS - 1)
            .map(|i| {
                let sp = p.sub(&format!("stages.{i}"));
                Ok(CnnStage {
                    up: Deconv::new(&sp.sub("up"), widths[i + 1], widths[i])?,
                    block: CnnBlock::new(&sp.sub("block"), 2 * widths[i], widths[i])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CnnDecoder {
            widths,
            bottleneck,
            stages,
            heads: Heads::new(&p.sub("heads"), enc, dec)?,
        })
    }

    /// Output width after fusing each level, from level 4 down to level 0.
    pub fn fusion_widths(&self) -> Vec<usize> {
        self.stages.iter().rev().map(|s| s.block.out_channels()).collect()
    }

    pub fn decode(&self, skips: &SkipSet) -> Result<DecoderOutputs> {
        for (i, f) in skips.features.iter().enumerate() {
            expect_channels(f, self.widths[i], &format!("skip level {i}"))?;
        }
        let mut levels: Vec<Option<Tensor>> = vec![None; NUM_SKIPS];
        let mut x = self.bottleneck.forward(skips.bottleneck())?;
        for i in (0..NUM_SKIPS - 1).rev() {
            let stage = &self.stages[i];
            let up = stage.up.forward(&x)?;
            x = stage.block.forward(&concat(&[up, skips.level(i).clone()], 1)?)?;
            levels[i] = Some(x.clone());
        }
        let get = |i: usize| levels[i].as_ref().expect("level decoded");
        self.heads.apply([get(0), get(1), get(2)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::Variant;
    use crate::error::Error;

    #[test]
    fn fusion_schedule_halves() {
        let enc = EncoderConfig::default();
        let dec = DecoderConfig {
            variant: Variant::Cnn,
            ..DecoderConfig::default()
        };
        let d = CnnDecoder::new(&Params::zeros(), &enc, &dec).unwrap();
        assert_eq!(d.fusion_widths(), vec![768, 384, 192, 96, 48]);
    }

    #[test]
    fn wrong_skip_width_is_contract_error() {
        let enc = EncoderConfig::tiny();
        let d = CnnDecoder::new(&Params::new(0), &enc, &DecoderConfig::default()).unwrap();
        let feats = (0..NUM_SKIPS)
            .map(|i| Tensor::zeros(&[1, 3, 32 >> i, 32 >> i, 32 >> i]))
            .collect();
        let skips = SkipSet::new(feats).unwrap();
        assert!(matches!(d.decode(&skips), Err(Error::Contract(_))));
    }
}
