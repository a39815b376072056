//! Evaluation metrics on hard label volumes: Dice overlap and (percentile)
//! Hausdorff distance between 6-connected mask boundaries.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::labels::Labels;

fn check_pair(a: &Labels, b: &Labels) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::shape(format!(
            "label volumes {:?} and {:?} differ",
            a.dims, b.dims
        )));
    }
    Ok(())
}

/// `2|A ∩ B| / (|A| + |B|)` for the voxels labelled `class`; 1.0 when both are empty.
pub fn dice_score(pred: &Labels, gt: &Labels, class: u16) -> Result<f64> {
    check_pair(pred, gt)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.values.iter().zip(&gt.values) {
        let (a, b) = (p == class, g == class);
        na += a as usize;
        nb += b as usize;
        inter += (a && b) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Voxels of the mask with at least one 6-neighbour outside the mask; the
/// region outside the volume counts as outside.
pub fn boundary(mask: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let [h, w, d] = dims;
    let idx = |x: usize, y: usize, z: usize| (x * w + y) * d + z;
    let mut out = vec![false; mask.len()];
    for x in 0..h {
        for y in 0..w {
            for z in 0..d {
                let i = idx(x, y, z);
                if !mask[i] {
                    continue;
                }
                out[i] = x == 0
                    || y == 0
                    || z == 0
                    || x + 1 == h
                    || y + 1 == w
                    || z + 1 == d
                    || !mask[idx(x - 1, y, z)]
                    || !mask[idx(x + 1, y, z)]
                    || !mask[idx(x, y - 1, z)]
                    || !mask[idx(x, y + 1, z)]
                    || !mask[idx(x, y, z - 1)]
                    || !mask[idx(x, y, z + 1)];
            }
        }
    }
    out
}

/// Exact squared Euclidean distance to the nearest `true` site, with
/// per-axis voxel spacing; separable lower-envelope transform.
pub fn squared_distance_transform(sites: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let mut f: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut line = Vec::new();
    let mut out = Vec::new();
    for axis in 0..3 {
        let n = dims[axis];
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for i in 0..dims[others[0]] {
            for j in 0..dims[others[1]] {
                let base = i * strides[others[0]] + j * strides[others[1]];
                line.clear();
                line.extend((0..n).map(|k| f[base + k * strides[axis]]));
                lower_envelope(&line, spacing[axis], &mut out);
                for k in 0..n {
                    f[base + k * strides[axis]] = out[k];
                }
            }
        }
    }
    f
}

/// `out[q] = min_p ((q - p) s)^2 + f[p]` over finite `f[p]`.
fn lower_envelope(f: &[f64], s: f64, out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let s2 = s * s;
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    let key = |q: usize| f[q] + s2 * (q * q) as f64;
    for q in (0..n).filter(|&q| f[q].is_finite()) {
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let cross = (key(q) - key(p)) / (2.0 * s2 * (q - p) as f64);
                    if cross <= *z.last().expect("boundary per parabola") {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(cross);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = (q as f64 - v[k] as f64) * s;
        *o = dq * dq + f[v[k]];
    }
}

/// Percentile of `values` with linear interpolation between order
/// statistics (position `p/100 * (n-1)`).
pub fn percentile(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty set");
    values.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 100.0) / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// Distances from each boundary voxel of `from` to the nearest boundary voxel of `to`.
fn directed(from: &[bool], to_edt: &[f64]) -> Vec<f64> {
    from.iter()
        .zip(to_edt)
        .filter(|(&b, _)| b)
        .map(|(_, &d2)| d2.sqrt())
        .collect()
}

/// Symmetric Hausdorff distance between the boundaries of the `class`
/// masks: the larger of the two directed `percentile`-th distances
/// (`100` gives the classic maximum). Empty masks are a domain error.
pub fn hausdorff(pred: &Labels, gt: &Labels, class: u16, spacing: [f64; 3], pct: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    if spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::config(format!(
            "voxel spacing must be positive, got {spacing:?}"
        )));
    }
    let a: Vec<bool> = pred.values.iter().map(|&v| v == class).collect();
    let b: Vec<bool> = gt.values.iter().map(|&v| v == class).collect();
    if !a.contains(&true) || !b.contains(&true) {
        return Err(Error::domain(format!("class {class} is empty in at least one volume")));
    }
    let (ba, bb) = (boundary(&a, pred.dims), boundary(&b, gt.dims));
    let mut ab = directed(&ba, &squared_distance_transform(&bb, gt.dims, spacing));
    let mut ba_d = directed(&bb, &squared_distance_transform(&ba, pred.dims, spacing));
    Ok(percentile(&mut ab, pct).max(percentile(&mut ba_d, pct)))
}

/// Per-class evaluation. Distances are `None` when either mask is empty.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ClassEval {
    pub class: u16,
    pub dice: f64,
    pub hausdorff: Option<f64>,
    pub hd95: Option<f64>,
    pub empty: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EvalResult {
    pub per_class: Vec<ClassEval>,
    /// Mean Dice over foreground classes `1..K`.
    pub mean_dice: f64,
}

/// Dice, HD and HD95 for every foreground class `1..k`.
pub fn evaluate(pred: &Labels, gt: &Labels, k: usize, spacing: [f64; 3]) -> Result<EvalResult> {
    let mut per_class = Vec::new();
    for class in 1..k as u16 {
        let dice = dice_score(pred, gt, class)?;
        let (hd, hd95) = match hausdorff(pred, gt, class, spacing, 100.0) {
            Ok(hd) => (Some(hd), Some(hausdorff(pred, gt, class, spacing, 95.0)?)),
            Err(Error::Domain(_)) => (None, None),
            Err(e) => return Err(e),
        };
        per_class.push(ClassEval {
            class,
            dice,
            hausdorff: hd,
            hd95,
            empty: hd.is_none(),
        });
    }
    let mean_dice = mean_foreground_dice(pred, gt, k)?;
    Ok(EvalResult { per_class, mean_dice })
}

/// Mean Dice over classes `1..k` (or class 0 when `k == 1`).
pub fn mean_foreground_dice(pred: &Labels, gt: &Labels, k: usize) -> Result<f64> {
    if k <= 1 {
        return dice_score(pred, gt, 0);
    }
    let mut s = 0.0;
    for class in 1..k as u16 {
        s += dice_score(pred, gt, class)?;
    }
    Ok(s / (k - 1) as f64)
}
