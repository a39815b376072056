//! Trilinear upsampling, align-corners convention: output sample `o` on an
//! axis of input length `n` and output length `m` reads source coordinate
//! `o * (n - 1) / (m - 1)`, so corner samples coincide exactly.
//!
//! Implemented as three separable linear passes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `(lo, hi, t)` per output sample along one axis.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|o| {
            if n_in == 1 || n_out == 1 {
                return (0, 0, 0.0);
            }
            let num = o * (n_in - 1);
            let den = n_out - 1;
            let lo = num / den;
            if lo >= n_in - 1 {
                (n_in - 1, n_in - 1, 0.0)
            } else {
                (lo, lo + 1, (num - lo * den) as f64 / den as f64)
            }
        })
        .collect()
}

fn interp_axis(x: &Tensor, axis: usize, n_out: usize) -> Tensor {
    let shape = x.shape().to_vec();
    let n_in = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let taps = axis_taps(n_in, n_out);
    let mut out_shape = shape.clone();
    out_shape[axis] = n_out;

    let mut data = vec![0.0; outer * n_out * inner];
    {
        let src = x.data();
        for o in 0..outer {
            for (j, &(lo, hi, t)) in taps.iter().enumerate() {
                let dst = &mut data[(o * n_out + j) * inner..(o * n_out + j + 1) * inner];
                let a = &src[(o * n_in + lo) * inner..(o * n_in + lo + 1) * inner];
                let b = &src[(o * n_in + hi) * inner..(o * n_in + hi + 1) * inner];
                for ((d, av), bv) in dst.iter_mut().zip(a).zip(b) {
                    *d = (1.0 - t) * av + t * bv;
                }
            }
        }
    }
    Tensor::from_op(
        "interp_axis",
        out_shape,
        data,
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut gx = vec![0.0; outer * n_in * inner];
            for o in 0..outer {
                for (j, &(lo, hi, t)) in taps.iter().enumerate() {
                    let gr = &g[(o * n_out + j) * inner..(o * n_out + j + 1) * inner];
                    let base_lo = (o * n_in + lo) * inner;
                    for (k, gv) in gr.iter().enumerate() {
                        gx[base_lo + k] += (1.0 - t) * gv;
                    }
                    let base_hi = (o * n_in + hi) * inner;
                    for (k, gv) in gr.iter().enumerate() {
                        gx[base_hi + k] += t * gv;
                    }
                }
            }
            vec![Some(gx)]
        }),
    )
}

/// Upsamples the three trailing spatial axes of `[N, C, H, W, D]` by an
/// integer `factor >= 2`.
pub fn trilinear_upsample(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 2 {
        return Err(Error::config(format!("upsample factor must be >= 2, got {factor}")));
    }
    input.expect_rank(5, "trilinear_upsample input")?;
    let s = input.shape().to_vec();
    let y = interp_axis(input, 2, s[2] * factor);
    let y = interp_axis(&y, 3, s[3] * factor);
    Ok(interp_axis(&y, 4, s[4] * factor))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(&[1, 2, 2, 3, 2], 3.0);
        let y = trilinear_upsample(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 6, 4]);
        assert!(y.to_vec().iter().all(|&v| (v - 3.0).abs() < 1e-15));
    }

    #[test]
    fn two_sample_axis_is_monotone_with_exact_corners() {
        let x = Tensor::new(&[1, 1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let y = trilinear_upsample(&x, 2).unwrap().to_vec();
        assert_eq!(y.len(), 16);
        let y = &y[..4];
        assert_eq!(y[0], 0.0);
        assert_eq!(y[3], 1.0);
        assert!(y.windows(2).all(|w| w[0] <= w[1]));
        assert!((y[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn factor_below_two_rejected() {
        let x = Tensor::ones(&[1, 1, 2, 2, 2]);
        assert!(matches!(trilinear_upsample(&x, 1), Err(Error::Config(_))));
    }
}
