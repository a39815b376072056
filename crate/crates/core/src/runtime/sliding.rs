//! Overlapping sliding-window inference with probability blending.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::class_probabilities;
use crate::swin::INPUT_MULTIPLE;
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Blend {
    /// Plain average of overlapping windows.
    #[default]
    Constant,
    /// Gaussian weight centred on each window, sigma = roi / 8.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlidingWindowConfig {
    pub roi: [usize; 3],
    pub overlap: f64,
    pub blend: Blend,
}

impl Default for SlidingWindowConfig {
    fn default() -> Self {
        SlidingWindowConfig {
            roi: [96; 3],
            overlap: 0.7,
            blend: Blend::Constant,
        }
    }
}

impl SlidingWindowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::config(format!(
                "overlap must be in [0, 1), got {}",
                self.overlap
            )));
        }
        if self.roi.iter().any(|&r| r == 0 || r % INPUT_MULTIPLE != 0) {
            return Err(Error::config(format!(
                "roi {:?} must be a positive multiple of {INPUT_MULTIPLE}",
                self.roi
            )));
        }
        Ok(())
    }
}

/// `round_half_up(roi * (1 - overlap))`, at least 1.
pub fn window_stride(roi: usize, overlap: f64) -> usize {
    ((roi as f64 * (1.0 - overlap) + 0.5).floor() as usize).max(1)
}

/// Window origins along one axis: multiples of the stride, plus a final
/// window flush with the far edge.
pub fn window_origins(extent: usize, roi: usize, stride: usize) -> Vec<usize> {
    if extent <= roi {
        return vec![0];
    }
    let last = extent - roi;
    let mut v: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o < last).collect();
    v.push(last);
    v
}

fn blend_weights(roi: [usize; 3], blend: Blend) -> Vec<f64> {
    let axis = |r: usize| -> Vec<f64> {
        match blend {
            Blend::Constant => vec![1.0; r],
            Blend::Gaussian => {
                let sigma = r as f64 / 8.0;
                let c = (r as f64 - 1.0) / 2.0;
                (0..r)
                    .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
                    .collect()
            }
        }
    };
    let (a, b, c) = (axis(roi[0]), axis(roi[1]), axis(roi[2]));
    let mut w = Vec::with_capacity(roi.iter().product());
    for x in &a {
        for y in &b {
            for z in &c {
                w.push(x * y * z);
            }
        }
    }
    w
}

fn crop(vol: &Tensor, origin: [usize; 3], roi: [usize; 3]) -> Result<Tensor> {
    vol.narrow(2, origin[0], roi[0])?
        .narrow(3, origin[1], roi[1])?
        .narrow(4, origin[2], roi[2])
}

/// Zero-pads `[1, C, H, W, D]` at the far end up to `target`.
fn pad_to(vol: &Tensor, target: [usize; 3]) -> Result<Tensor> {
    let s = vol.shape().to_vec();
    let src = vol.data();
    let (c, d) = (s[1], [s[2], s[3], s[4]]);
    let mut out = vec![0.0; c * target.iter().product::<usize>()];
    for ch in 0..c {
        for x in 0..d[0] {
            for y in 0..d[1] {
                let si = ((ch * d[0] + x) * d[1] + y) * d[2];
                let oi = ((ch * target[0] + x) * target[1] + y) * target[2];
                out[oi..oi + d[2]].copy_from_slice(&src[si..si + d[2]]);
            }
        }
    }
    Tensor::new(&[1, c, target[0], target[1], target[2]], out)
}

/// Class probabilities `[1, K, H, W, D]` for a `[1, 1, H, W, D]` volume.
///
/// `model` maps a roi-sized window to logits `[1, K, r0, r1, r2]`. Windows
/// are processed and accumulated in raster order of their origins.
pub fn sliding_window_infer(
    model: &dyn Fn(&Tensor) -> Result<Tensor>,
    volume: &Tensor,
    cfg: &SlidingWindowConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    volume.expect_rank(5, "inference volume")?;
    let s = volume.shape();
    if s[0] != 1 {
        return Err(Error::shape(format!("expected batch size 1, got {s:?}")));
    }
    let dims = [s[2], s[3], s[4]];
    let roi = cfg.roi;
    let work = [0, 1, 2].map(|a| dims[a].max(roi[a]));
    let padded = if work != dims {
        pad_to(volume, work)?
    } else {
        volume.clone()
    };

    let origins: Vec<Vec<usize>> = (0..3)
        .map(|a| window_origins(work[a], roi[a], window_stride(roi[a], cfg.overlap)))
        .collect();
    let weights = blend_weights(roi, cfg.blend);
    let n_work: usize = work.iter().product();
    let n_roi: usize = roi.iter().product();
    let mut acc: Vec<f64> = Vec::new();
    let mut wsum = vec![0.0; n_work];
    let mut k = 0;

    no_grad(|| -> Result<()> {
        for &ox in &origins[0] {
            for &oy in &origins[1] {
                for &oz in &origins[2] {
                    let window = crop(&padded, [ox, oy, oz], roi)?;
                    let logits = model(&window)?;
                    if logits.rank() != 5 || logits.shape()[2..] != roi {
                        return Err(Error::config(format!(
                            "model returned {:?} for roi {roi:?}",
                            logits.shape()
                        )));
                    }
                    let probs = class_probabilities(&logits)?;
                    if acc.is_empty() {
                        k = logits.shape()[1];
                        acc = vec![0.0; k * n_work];
                    }
                    let p = probs.data();
                    for x in 0..roi[0] {
                        for y in 0..roi[1] {
                            for z in 0..roi[2] {
                                let li = (x * roi[1] + y) * roi[2] + z;
                                let gi = ((ox + x) * work[1] + oy + y) * work[2] + oz + z;
                                let w = weights[li];
                                wsum[gi] += w;
                                for c in 0..k {
                                    acc[c * n_work + gi] += w * p[c * n_roi + li];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    })?;

    for c in 0..k {
        for (a, w) in acc[c * n_work..(c + 1) * n_work].iter_mut().zip(&wsum) {
            *a /= w;
        }
    }
    let full = Tensor::new(&[1, k, work[0], work[1], work[2]], acc)?;
    if work == dims {
        Ok(full)
    } else {
        crop(&full, [0; 3], dims).map(|t| t.detach())
    }
}
