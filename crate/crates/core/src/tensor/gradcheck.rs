//! Central finite-difference gradient checker.
//!
//! The checked function closes over its input handles; the checker perturbs
//! those handles' buffers in place, so every probe sees the same graph shape.
//! Error per coordinate is `|analytic - numeric| / max(1, |analytic|, |numeric|)`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{no_grad, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub op_name: String,
    pub max_rel_error: f64,
    /// Which input held the worst coordinate.
    pub worst_input: usize,
    /// Flat index of the worst coordinate within that input.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates_checked: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Checks every coordinate of every input.
pub fn gradcheck(op_name: &str, f: &dyn Fn() -> Result<Tensor>, inputs: &[Tensor], eps: f64) -> Result<GradReport> {
    run(op_name, f, inputs, eps, None)
}

/// Checks at most `per_input` randomly chosen coordinates of each input.
pub fn gradcheck_sampled(
    op_name: &str,
    f: &dyn Fn() -> Result<Tensor>,
    inputs: &[Tensor],
    eps: f64,
    per_input: usize,
    seed: u64,
) -> Result<GradReport> {
    run(op_name, f, inputs, eps, Some((per_input, seed)))
}

fn run(
    op_name: &str,
    f: &dyn Fn() -> Result<Tensor>,
    inputs: &[Tensor],
    eps: f64,
    sampling: Option<(usize, u64)>,
) -> Result<GradReport> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::config(format!("gradcheck step must be positive, got {eps}")));
    }
    for (i, t) in inputs.iter().enumerate() {
        if !t.tracks_grad() || !t.is_leaf() {
            return Err(Error::contract(format!("gradcheck input {i} is not a tracked leaf")));
        }
        t.ensure_finite("gradcheck input")?;
        t.zero_grad();
    }

    let loss = f()?;
    if loss.numel() != 1 {
        return Err(Error::contract(format!(
            "gradcheck function must return a scalar, got {:?}",
            loss.shape()
        )));
    }
    let again = no_grad(f)?.item();
    if again.to_bits() != loss.item().to_bits() {
        return Err(Error::contract(format!(
            "{op_name}: function is not deterministic ({} vs {again})",
            loss.item()
        )));
    }
    loss.backward()?;
    drop(loss);

    let mut rng = sampling.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let mut report = GradReport {
        op_name: op_name.to_string(),
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates_checked: 0,
    };

    for (which, t) in inputs.iter().enumerate() {
        let analytic = t.grad().unwrap_or_else(|| vec![0.0; t.numel()]);
        let coords: Vec<usize> = match (&mut rng, sampling) {
            (Some(rng), Some((per, _))) if per < t.numel() => {
                let mut v = sample(rng, t.numel(), per).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..t.numel()).collect(),
        };
        for idx in coords {
            let orig = t.data()[idx];
            t.data_mut()[idx] = orig + eps;
            let plus = no_grad(f)?.item();
            t.data_mut()[idx] = orig - eps;
            let minus = no_grad(f)?.item();
            t.data_mut()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.coordinates_checked += 1;
            if rel > report.max_rel_error || report.coordinates_checked == 1 {
                report.max_rel_error = rel;
                report.worst_input = which;
                report.worst_index = idx;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Reduces an arbitrary tensor to a scalar with fixed pseudo-random weights,
/// so every output coordinate contributes to the checked gradient.
pub fn random_projection(t: &Tensor, seed: u64) -> Result<Tensor> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..t.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = Tensor::new(t.shape(), w)?;
    Ok(t.mul(&w)?.sum())
}
