//! Segmentation training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoders::SegModel;
use crate::error::{Error, Result};
use crate::io::{save_checkpoint, CheckpointMeta};
use crate::labels::Labels;
use crate::losses::{deep_supervision_loss, LossWeights, DICE_SMOOTH};
use crate::metrics::mean_foreground_dice;
use crate::runtime::{augment, lr_at, AdamW, AdamWConfig, AugmentFlags, SegSample};
use crate::tensor::no_grad;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub augment: AugmentFlags,
    pub smooth: f64,
    /// Validate every this many steps (and always after the last step).
    pub val_every: usize,
    /// Stop once validation Dice exceeds this value.
    pub target_dice: Option<f64>,
    pub optimizer: AdamWConfig,
    /// Load the best-validation parameters back into the model when done.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            epochs: 100,
            warmup_steps: 10,
            batch_size: 1,
            weights: LossWeights::default(),
            seed: 0,
            augment: AugmentFlags::default(),
            smooth: DICE_SMOOTH,
            val_every: 10,
            target_dice: None,
            optimizer: AdamWConfig::default(),
            restore_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("epochs and batch_size must be >= 1"));
        }
        self.weights.validate()
    }

    pub fn total_steps(&self, samples: usize) -> usize {
        (self.epochs * samples).div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_dice: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub best_val_dice: f64,
    pub best_step: Option<usize>,
    /// First step after which validation Dice exceeded the target.
    pub reached_target_at: Option<usize>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

/// Mean foreground Dice of the model's hard predictions over `samples`.
pub fn validation_dice(model: &SegModel, samples: &[SegSample]) -> Result<f64> {
    let k = model.num_classes();
    let mut total = 0.0;
    for s in samples {
        let out = no_grad(|| model.forward(&s.image))?;
        total += mean_foreground_dice(&Labels::argmax(&out.logits)?, &s.label, k)?;
    }
    Ok(total / samples.len() as f64)
}

/// Trains `model` on `train`, validating on `val` (or `train` when empty).
/// Writes one JSON line per step to `log` and saves the best-validation
/// parameters to `checkpoint`.
pub fn fit(
    model: &SegModel,
    train: &[SegSample],
    val: &[SegSample],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
    checkpoint: Option<&Path>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    let val = if val.is_empty() { train } else { val };
    let total = cfg.total_steps(train.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(&model.params, cfg.optimizer);
    model.params.zero_grad();
    let mut order: Vec<usize> = Vec::new();
    let mut out = TrainLog {
        best_val_dice: f64::NEG_INFINITY,
        ..TrainLog::default()
    };
    let mut best: Option<Vec<Vec<f64>>> = None;

    for step in 0..total {
        let mut loss_sum = 0.0;
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..train.len()).rev().collect();
                order.shuffle(&mut rng);
            }
            let sample = &train[order.pop().expect("refilled")];
            let sample = augment(sample, cfg.augment, &mut rng)?;
            let outputs = model.forward(&sample.image)?;
            let loss = deep_supervision_loss(&outputs, &sample.label, cfg.weights, cfg.smooth)?
                .scale(1.0 / cfg.batch_size as f64);
            let v = loss.item();
            if !v.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("loss is {v}"),
                });
            }
            loss.backward()?;
            loss_sum += v;
        }
        let lr = lr_at(step, total, cfg.warmup_steps, cfg.lr);
        opt.step(lr);

        let last = step + 1 == total;
        let val_dice = if last || (cfg.val_every > 0 && (step + 1) % cfg.val_every == 0) {
            Some(validation_dice(model, val)?)
        } else {
            None
        };
        let rec = StepRecord {
            step,
            lr,
            loss: loss_sum,
            val_dice,
        };
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &rec)?;
            writeln!(w)?;
        }
        out.records.push(rec);

        if let Some(d) = val_dice {
            if d > out.best_val_dice {
                out.best_val_dice = d;
                out.best_step = Some(step);
                best = Some(model.params.named().iter().map(|(_, t)| t.to_vec()).collect());
                if let Some(path) = checkpoint {
                    let meta = CheckpointMeta::segmentation(model, step as u64 + 1, cfg.seed);
                    save_checkpoint(path, &model.params, &meta)?;
                }
            }
            if let Some(target) = cfg.target_dice {
                if d > target {
                    out.reached_target_at = Some(step + 1);
                    break;
                }
            }
        }
    }
    if cfg.restore_best {
        if let Some(values) = best {
            for ((_, t), v) in model.params.named().iter().zip(values) {
                t.assign(&v)?;
            }
        }
    }
    Ok(out)
}
