//! Training losses: soft Dice plus cross-entropy with deep supervision, and
//! masked L1 reconstruction.

use serde::{Deserialize, Serialize};

use crate::decoders::DecoderOutputs;
use crate::error::{Error, Result};
use crate::labels::Labels;
use crate::pretrain::MaskSpec;
use crate::tensor::Tensor;

/// Default smoothing term of the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1e-5;

/// Probabilities are clamped to this before the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Weights of the level-1 and level-2 auxiliary losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.5,
            lambda2: 0.25,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// `1 - (1/K) sum_k (2 sum G Y + s) / (sum G^2 + sum Y^2 + s) - (1/N) sum G log Y`
/// for probabilities `y` and one-hot targets `g`, both `[K, N]`.
///
/// With `smooth = 0` this is the plain two-term form; a positive `smooth`
/// makes an absent class (no target, no prediction) score a perfect 1.
pub fn dice_ce_loss(y: &Tensor, g: &Tensor, smooth: f64) -> Result<Tensor> {
    y.expect_rank(2, "dice_ce probabilities")?;
    if y.shape() != g.shape() {
        return Err(Error::shape(format!(
            "dice_ce: probabilities {:?} vs targets {:?}",
            y.shape(),
            g.shape()
        )));
    }
    if !(smooth >= 0.0) {
        return Err(Error::config("dice smoothing must be >= 0"));
    }
    let (k, n) = (y.shape()[0], y.shape()[1]);
    check_columns(y, k, n)?;

    let inter = g.mul(y)?.sum_lastaxis().scale(2.0).add_scalar(smooth);
    let denom = g
        .square()
        .sum_lastaxis()
        .add(&y.square().sum_lastaxis())?
        .add_scalar(smooth);
    let dice = inter.div(&denom)?.sum().scale(1.0 / k as f64);
    let ce = g.mul(&y.log_clamped(LOG_FLOOR)?)?.sum().scale(-1.0 / n as f64);
    dice.neg().add_scalar(1.0).add(&ce)
}

fn check_columns(y: &Tensor, k: usize, n: usize) -> Result<()> {
    let d = y.data();
    for col in 0..n {
        let s: f64 = (0..k).map(|c| d[c * n + col]).sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::domain(format!(
                "dice_ce: probabilities in column {col} sum to {s}"
            )));
        }
    }
    Ok(())
}

/// Softmax over classes of `[1, K, H, W, D]` logits, as `[K, N]`.
pub fn class_probabilities(logits: &Tensor) -> Result<Tensor> {
    logits.expect_rank(5, "logits")?;
    let s = logits.shape();
    if s[0] != 1 {
        return Err(Error::shape(format!("expected batch size 1, got {s:?}")));
    }
    let (k, n) = (s[1], s[2] * s[3] * s[4]);
    logits
        .reshape(&[k, n])?
        .permute(&[1, 0])?
        .softmax_lastaxis()
        .permute(&[1, 0])
}

/// `L(main) + lambda1 L(aux1) + lambda2 L(aux2)` with `L` = [`dice_ce_loss`]
/// on softmax probabilities.
pub fn deep_supervision_loss(
    outputs: &DecoderOutputs,
    target: &Labels,
    weights: LossWeights,
    smooth: f64,
) -> Result<Tensor> {
    weights.validate()?;
    let k = outputs.logits.shape()[1];
    let g = target.one_hot(k)?;
    let term = |logits: &Tensor| -> Result<Tensor> {
        if logits.shape()[2..] != target.dims {
            return Err(Error::shape(format!(
                "logits {:?} do not match label volume {:?}",
                logits.shape(),
                target.dims
            )));
        }
        dice_ce_loss(&class_probabilities(logits)?, &g, smooth)
    };
    let mut loss = term(&outputs.logits)?;
    let uses_aux = weights.lambda1 > 0.0 || weights.lambda2 > 0.0;
    match (&outputs.aux, uses_aux) {
        (Some([a1, a2]), true) => {
            loss = loss
                .add(&term(a1)?.scale(weights.lambda1))?
                .add(&term(a2)?.scale(weights.lambda2))?;
        }
        (None, true) => {
            return Err(Error::contract(
                "auxiliary loss weights are non-zero but the decoder has no auxiliary outputs",
            ))
        }
        (_, false) => {}
    }
    Ok(loss)
}

/// Denominator of the masked L1 loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L1Normalization {
    /// Mean over masked voxels.
    #[default]
    Voxels,
    /// Sum divided by the number of masked cubes.
    Cubes,
}

/// `|P - X|` summed over masked voxels, divided by the masked voxel count
/// (or cube count). Unmasked voxels contribute neither value nor gradient.
pub fn masked_l1(pred: &Tensor, target: &Tensor, mask: &MaskSpec, norm: L1Normalization) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "masked_l1: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.numel() != mask.num_voxels() {
        return Err(Error::shape(format!(
            "masked_l1: {} values but mask covers {} voxels",
            pred.numel(),
            mask.num_voxels()
        )));
    }
    if mask.masked_cubes.is_empty() {
        return Err(Error::domain("masked_l1: mask selects no voxels"));
    }
    let denom = match norm {
        L1Normalization::Voxels => mask.masked_voxel_count,
        L1Normalization::Cubes => mask.masked_cubes.len(),
    } as f64;
    let weight = Tensor::new(
        pred.shape(),
        mask.voxel_mask()
            .iter()
            .map(|&m| if m { 1.0 / denom } else { 0.0 })
            .collect(),
    )?;
    Ok(pred.sub(target)?.abs().mul(&weight)?.sum())
}
