//! Segmentation decoders and the full encoder-decoder model.
//!
//! Both decoders consume a [`SkipSet`] and return logits at input
//! resolution, optionally with two auxiliary outputs from levels 1 and 2
//! upsampled to input resolution for deep supervision.

mod cnn;
mod transformer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Params, SegHead};
use crate::swin::{Encoder, EncoderConfig, SkipSet};
use crate::tensor::{trilinear_upsample, Tensor};

pub use cnn::CnnDecoder;
pub use transformer::{level_heads, DecoderLayer, TransformerDecoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Convolutional decoder with transposed-convolution upsampling.
    Cnn,
    /// Windowed transformer decoder with trilinear upsampling.
    Transformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub variant: Variant,
    pub num_classes: usize,
    pub deep_supervision: bool,
    /// Adds a residual around the first line of each transformer decoder
    /// layer (`w = MLP(LN(w)) + w`); off reproduces the non-residual form.
    pub residual_mlp: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            variant: Variant::Cnn,
            num_classes: 3,
            deep_supervision: true,
            residual_mlp: false,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be >= 1"));
        }
        Ok(())
    }
}

/// Logits as `[1, K, H, W, D]`.
#[derive(Debug, Clone)]
pub struct DecoderOutputs {
    pub logits: Tensor,
    /// Level-1 and level-2 logits upsampled to input resolution.
    pub aux: Option<[Tensor; 2]>,
}

/// Segmentation heads at levels 0, 1 and 2.
#[derive(Clone)]
pub struct Heads {
    pub main: SegHead,
    pub aux: Option<[SegHead; 2]>,
}

impl Heads {
    fn new(p: &Params, enc: &EncoderConfig, dec: &DecoderConfig) -> Result<Self> {
        let k = dec.num_classes;
        let aux = if dec.deep_supervision {
            Some([
                SegHead::new(&p.sub("aux1"), enc.skip_dim(1), k)?,
                SegHead::new(&p.sub("aux2"), enc.skip_dim(2), k)?,
            ])
        } else {
            None
        };
        Ok(Heads {
            main: SegHead::new(&p.sub("main"), enc.skip_dim(0), k)?,
            aux,
        })
    }

    /// `levels[i]` is the decoder feature at level `i` for `i` in 0..=2.
    fn apply(&self, levels: [&Tensor; 3]) -> Result<DecoderOutputs> {
        let logits = self.main.forward(levels[0])?;
        let aux = match &self.aux {
            Some([h1, h2]) => Some([
                trilinear_upsample(&h1.forward(levels[1])?, 2)?,
                trilinear_upsample(&h2.forward(levels[2])?, 4)?,
            ]),
            None => None,
        };
        Ok(DecoderOutputs { logits, aux })
    }
}

#[derive(Clone)]
pub enum Decoder {
    Cnn(CnnDecoder),
    Transformer(TransformerDecoder),
}

impl Decoder {
    pub fn new(p: &Params, enc: &EncoderConfig, dec: &DecoderConfig) -> Result<Self> {
        dec.validate()?;
        Ok(match dec.variant {
            Variant::Cnn => Decoder::Cnn(CnnDecoder::new(p, enc, dec)?),
            Variant::Transformer => Decoder::Transformer(TransformerDecoder::new(p, enc, dec)?),
        })
    }

    pub fn decode(&self, skips: &SkipSet) -> Result<DecoderOutputs> {
        match self {
            Decoder::Cnn(d) => d.decode(skips),
            Decoder::Transformer(d) => d.decode(skips),
        }
    }
}

/// Encoder plus decoder. Parameters are registered as `encoder.*` and
/// `decoder.*` in one store.
#[derive(Clone)]
pub struct SegModel {
    pub params: Params,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub encoder_config: EncoderConfig,
    pub decoder_config: DecoderConfig,
}

impl SegModel {
    pub fn new(enc: &EncoderConfig, dec: &DecoderConfig, seed: u64) -> Result<Self> {
        Self::with_params(Params::new(seed), enc, dec)
    }

    pub fn with_params(params: Params, enc: &EncoderConfig, dec: &DecoderConfig) -> Result<Self> {
        let encoder = Encoder::new(&params.sub("encoder"), enc)?;
        let decoder = Decoder::new(&params.sub("decoder"), enc, dec)?;
        Ok(SegModel {
            params,
            encoder,
            decoder,
            encoder_config: enc.clone(),
            decoder_config: dec.clone(),
        })
    }

    /// `[1, 1, H, W, D]` volume to logits.
    pub fn forward(&self, volume: &Tensor) -> Result<DecoderOutputs> {
        self.decoder.decode(&self.encoder.encode(volume)?)
    }

    pub fn num_classes(&self) -> usize {
        self.decoder_config.num_classes
    }
}

/// Scalar learnable parameters held by `params`.
pub fn count_parameters(params: &Params) -> usize {
    params.count()
}

/// Parameter totals for a configuration, split into encoder and decoder.
/// Builds the model with zero-filled weights, so it stays cheap for large
/// configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub encoder: usize,
    pub decoder: usize,
    pub total: usize,
}

pub fn parameter_breakdown(enc: &EncoderConfig, dec: &DecoderConfig) -> Result<ParamCount> {
    let params = Params::zeros();
    let model = SegModel::with_params(params.clone(), enc, dec)?;
    let encoder: usize = params
        .named()
        .iter()
        .filter(|(n, _)| n.starts_with("encoder."))
        .map(|(_, t)| t.numel())
        .sum();
    drop(model);
    let total = params.count();
    Ok(ParamCount {
        encoder,
        decoder: total - encoder,
        total,
    })
}

fn expect_channels(t: &Tensor, c: usize, what: &str) -> Result<()> {
    if t.rank() != 5 || t.shape()[1] != c {
        return Err(Error::contract(format!(
            "{what}: expected {c} channels, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}
