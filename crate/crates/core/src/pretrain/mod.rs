//! Masked-volume pre-training: hide random cubes of the input, reconstruct
//! the volume through the encoder and a light skip-connected decoder, and
//! score the reconstruction with L1 on the hidden voxels only.

mod mask;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::decoders::{DecoderConfig, SegModel};
use crate::error::{Error, Result};
use crate::losses::{masked_l1, L1Normalization};
use crate::nn::{CnnBlock, Params, SegHead};
use crate::runtime::{fit, lr_at, synth_dataset, validation_dice, AdamW, AdamWConfig, SynthConfig, TrainConfig};
use crate::swin::{Encoder, EncoderConfig, SkipSet, NUM_SKIPS};
use crate::tensor::{concat, trilinear_upsample, Tensor};

pub use mask::{apply_mask, generate_mask, masked_cube_count, MaskSpec};

/// Skip levels that feed the reconstruction decoder.
pub const RECON_SKIPS: [usize; 3] = [1, 3, 5];

/// One convolutional block per resolution at half the segmentation
/// decoder's width, trilinear upsampling, skips from levels 1, 3 and 5,
/// and a 1x1x1 projection to one channel.
#[derive(Clone)]
pub struct ReconDecoder {
    /// `blocks[i]` runs at level `i`.
    pub blocks: Vec<CnnBlock>,
    pub out: SegHead,
}

impl ReconDecoder {
    pub fn width(enc: &EncoderConfig, level: usize) -> usize {
        (enc.skip_dim(level) / 2).max(1)
    }

    pub fn new(p: &Params, enc: &EncoderConfig) -> Result<Self> {
        let mut blocks = Vec::with_capacity(NUM_SKIPS);
        for i in 0..NUM_SKIPS {
            let cin = if i == NUM_SKIPS - 1 {
                enc.skip_dim(i)
            } else {
                Self::width(enc, i + 1) + if RECON_SKIPS.contains(&i) { enc.skip_dim(i) } else { 0 }
            };
            blocks.push(CnnBlock::new(&p.sub(&format!("blocks.{i}")), cin, Self::width(enc, i))?);
        }
        Ok(ReconDecoder {
            blocks,
            out: SegHead::new(&p.sub("out"), Self::width(enc, 0), 1)?,
        })
    }

    pub fn decode(&self, skips: &SkipSet) -> Result<Tensor> {
        let top = NUM_SKIPS - 1;
        let mut x = self.blocks[top].forward(skips.level(top))?;
        for i in (0..top).rev() {
            x = trilinear_upsample(&x, 2)?;
            if RECON_SKIPS.contains(&i) {
                x = concat(&[x, skips.level(i).clone()], 1)?;
            }
            x = self.blocks[i].forward(&x)?;
        }
        self.out.forward(&x)
    }
}

/// Encoder plus reconstruction decoder. Encoder parameter names match
/// [`SegModel`]'s so weights transfer by name.
#[derive(Clone)]
pub struct PretrainModel {
    pub params: Params,
    pub encoder: Encoder,
    pub recon: ReconDecoder,
    pub encoder_config: EncoderConfig,
}

impl PretrainModel {
    pub fn new(enc: &EncoderConfig, seed: u64) -> Result<Self> {
        Self::with_params(Params::new(seed), enc)
    }

    pub fn with_params(params: Params, enc: &EncoderConfig) -> Result<Self> {
        Ok(PretrainModel {
            encoder: Encoder::new(&params.sub("encoder"), enc)?,
            recon: ReconDecoder::new(&params.sub("recon"), enc)?,
            encoder_config: enc.clone(),
            params,
        })
    }

    /// Reconstruction `[1, 1, H, W, D]` of a (masked) volume.
    pub fn recon_forward(&self, masked: &Tensor) -> Result<Tensor> {
        self.recon.decode(&self.encoder.encode(masked)?)
    }

    /// Number of reconstruction-decoder parameters.
    pub fn decoder_parameters(&self) -> usize {
        self.params
            .named()
            .iter()
            .filter(|(n, _)| n.starts_with("recon."))
            .map(|(_, t)| t.numel())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub warmup_steps: usize,
    pub mask_ratio: f64,
    pub patch_size: usize,
    pub seed: u64,
    pub fill: f64,
    pub normalization: L1Normalization,
    /// Draw a fresh mask every step; otherwise reuse the step-0 mask.
    pub resample_mask: bool,
    pub optimizer: AdamWConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            lr: 2e-4,
            steps: 100,
            warmup_steps: 10,
            mask_ratio: 0.4,
            patch_size: 16,
            seed: 0,
            fill: 0.0,
            normalization: L1Normalization::Voxels,
            resample_mask: true,
            optimizer: AdamWConfig::default(),
        }
    }
}

/// Model, optimizer and step counter.
pub struct PretrainState {
    pub model: PretrainModel,
    pub optimizer: AdamW,
    pub step: usize,
}

impl PretrainState {
    pub fn new(model: PretrainModel, optimizer: AdamWConfig) -> Self {
        let optimizer = AdamW::new(&model.params, optimizer);
        PretrainState {
            model,
            optimizer,
            step: 0,
        }
    }
}

/// Masked L1 of the reconstruction of `volume` with `mask` applied.
pub fn pretrain_loss(model: &PretrainModel, volume: &Tensor, mask: &MaskSpec, cfg: &PretrainConfig) -> Result<Tensor> {
    let masked = apply_mask(volume, mask, cfg.fill)?;
    let recon = model.recon_forward(&masked)?;
    masked_l1(&recon, volume, mask, cfg.normalization)
}

/// One optimizer step at learning rate `lr`; returns the loss before the update.
pub fn pretrain_step(
    state: &mut PretrainState,
    volume: &Tensor,
    mask: &MaskSpec,
    cfg: &PretrainConfig,
    lr: f64,
) -> Result<f64> {
    if mask.masked_cubes.is_empty() {
        return Err(Error::domain("pre-training needs at least one masked cube"));
    }
    let loss = pretrain_loss(&state.model, volume, mask, cfg)?;
    let v = loss.item();
    if !v.is_finite() {
        return Err(Error::Diverged {
            step: state.step,
            detail: format!("reconstruction loss is {v}"),
        });
    }
    loss.backward()?;
    state.optimizer.step(lr);
    state.step += 1;
    Ok(v)
}

/// Runs `cfg.steps` steps cycling through `volumes`; returns the per-step
/// losses and writes JSON lines `{step, lr, loss}` to `log`.
pub fn pretrain(
    state: &mut PretrainState,
    volumes: &[Tensor],
    cfg: &PretrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<f64>> {
    if volumes.is_empty() {
        return Err(Error::domain("no pre-training volumes"));
    }
    let dims = |v: &Tensor| -> [usize; 3] {
        let s = v.shape();
        [s[2], s[3], s[4]]
    };
    let mut mask = generate_mask(dims(&volumes[0]), cfg.patch_size, cfg.mask_ratio, cfg.seed)?;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let vol = &volumes[step % volumes.len()];
        if cfg.resample_mask && step > 0 || mask.vol_dims != dims(vol) {
            mask = generate_mask(
                dims(vol),
                cfg.patch_size,
                cfg.mask_ratio,
                cfg.seed.wrapping_add(step as u64),
            )?;
        }
        let lr = lr_at(step, cfg.steps, cfg.warmup_steps, cfg.lr);
        let loss = pretrain_step(state, vol, &mask, cfg, lr)?;
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &serde_json::json!({"step": step, "lr": lr, "loss": loss}))?;
            writeln!(w)?;
        }
        losses.push(loss);
    }
    Ok(losses)
}

/// Settings shared by every cell of a masking sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub encoder: EncoderConfig,
    pub vol_size: usize,
    pub volumes: usize,
    pub pretrain: PretrainConfig,
    /// Segmentation fine-tuning steps per cell; 0 skips the Dice column.
    pub finetune_epochs: usize,
    pub finetune: TrainConfig,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            encoder: EncoderConfig::tiny(),
            vol_size: 96,
            volumes: 2,
            pretrain: PretrainConfig {
                steps: 20,
                warmup_steps: 2,
                ..PretrainConfig::default()
            },
            finetune_epochs: 0,
            finetune: TrainConfig::default(),
            num_classes: 3,
            seed: 0,
        }
    }
}

/// Operating point marked as the reference cell.
pub const REFERENCE_CELL: (f64, usize) = (0.4, 16);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub ratio: f64,
    pub patch: usize,
    /// Mean loss over the last (up to) five steps.
    pub final_loss: Option<f64>,
    pub dice: Option<f64>,
    pub reference: bool,
    pub skipped: Option<String>,
}

/// Pre-trains a fresh model per `(ratio, patch)` cell on synthetic volumes
/// and optionally fine-tunes it for segmentation. Cells whose mask is
/// invalid or empty are reported as skipped.
pub fn ablation_sweep(ratios: &[f64], patches: &[usize], cfg: &SweepConfig) -> Result<Vec<SweepCell>> {
    let data = synth_dataset(
        cfg.volumes.max(1),
        cfg.vol_size,
        cfg.num_classes,
        cfg.seed,
        SynthConfig::default(),
    )?;
    let volumes: Vec<Tensor> = data.iter().map(|s| s.image.clone()).collect();
    let mut cells = Vec::new();
    for &ratio in ratios {
        for &patch in patches {
            let reference = (ratio - REFERENCE_CELL.0).abs() < 1e-12 && patch == REFERENCE_CELL.1;
            let mut cell = SweepCell {
                ratio,
                patch,
                final_loss: None,
                dice: None,
                reference,
                skipped: None,
            };
            let probe = generate_mask([cfg.vol_size; 3], patch, ratio, cfg.seed).and_then(|m| {
                if m.masked_cubes.is_empty() {
                    Err(Error::domain("mask selects no cubes"))
                } else {
                    Ok(m)
                }
            });
            if let Err(e) = probe {
                cell.skipped = Some(e.to_string());
                cells.push(cell);
                continue;
            }
            let pcfg = PretrainConfig {
                mask_ratio: ratio,
                patch_size: patch,
                ..cfg.pretrain.clone()
            };
            let mut state = PretrainState::new(PretrainModel::new(&cfg.encoder, cfg.seed)?, pcfg.optimizer);
            let losses = pretrain(&mut state, &volumes, &pcfg, None)?;
            let tail = &losses[losses.len().saturating_sub(5)..];
            cell.final_loss = Some(tail.iter().sum::<f64>() / tail.len().max(1) as f64);
            if cfg.finetune_epochs > 0 {
                let dec = DecoderConfig {
                    num_classes: cfg.num_classes,
                    ..DecoderConfig::default()
                };
                let seg = SegModel::new(&cfg.encoder, &dec, cfg.seed.wrapping_add(1))?;
                transfer_encoder(&state.model.params, &seg.params)?;
                let tcfg = TrainConfig {
                    epochs: cfg.finetune_epochs,
                    ..cfg.finetune.clone()
                };
                fit(&seg, &data, &[], &tcfg, None, None)?;
                cell.dice = Some(validation_dice(&seg, &data)?);
            }
            cells.push(cell);
        }
    }
    Ok(cells)
}

/// Copies every `encoder.*` tensor of `from` into the same-named tensor of
/// `to`; returns the number copied.
pub fn transfer_encoder(from: &Params, to: &Params) -> Result<usize> {
    let mut n = 0;
    for (name, t) in from.named() {
        if !name.starts_with("encoder.") {
            continue;
        }
        let dst = to
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("target has no parameter {name}")))?;
        if dst.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {:?} vs {:?}",
                t.shape(),
                dst.shape()
            )));
        }
        dst.assign(&t.data())?;
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::parameter_breakdown;

    #[test]
    fn recon_is_lighter_than_segmentation_decoder() {
        for enc in [EncoderConfig::tiny(), EncoderConfig::default()] {
            let m = PretrainModel::with_params(Params::zeros(), &enc).unwrap();
            let seg = parameter_breakdown(&enc, &DecoderConfig::default()).unwrap();
            assert!(m.decoder_parameters() < seg.decoder);
        }
    }

    #[test]
    fn recon_shape_matches_input() {
        let m = PretrainModel::new(&EncoderConfig::tiny(), 0).unwrap();
        let x = Tensor::from_fn(&[1, 1, 32, 32, 32], |i| ((i % 11) as f64) * 0.1);
        let y = crate::no_grad(|| m.recon_forward(&x)).unwrap();
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn encoder_names_shared_with_segmentation_model() {
        let enc = EncoderConfig::tiny();
        let pre = PretrainModel::new(&enc, 1).unwrap();
        let seg = SegModel::new(&enc, &DecoderConfig::default(), 2).unwrap();
        let n = transfer_encoder(&pre.params, &seg.params).unwrap();
        let enc_names = seg
            .params
            .named()
            .iter()
            .filter(|(n, _)| n.starts_with("encoder."))
            .count();
        assert_eq!(n, enc_names);
    }
}
