use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `out[m, n] += a[m, k] * b[k, n]`, all row-major.
fn gemm_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            row.iter_mut()
                .zip(&b[p * n..(p + 1) * n])
                .for_each(|(o, bv)| *o += av * bv);
        }
    }
}

/// `out[m, n] += a[m, k] * b[n, k]^T`.
fn gemm_nt_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k, n] += a[m, k]^T * b[m, n]`.
fn gemm_tn_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let br = &b[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            out[p * n..(p + 1) * n]
                .iter_mut()
                .zip(br)
                .for_each(|(o, bv)| *o += av * bv);
        }
    }
}

/// Dot product with four independent partial sums (fixed order).
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

impl Tensor {
    /// `x @ weight^T + bias` over the last axis of `x`; `weight` is `[out, in]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        weight.expect_rank(2, "linear weight")?;
        let (n_out, n_in) = (weight.shape()[0], weight.shape()[1]);
        if self.shape().last() != Some(&n_in) {
            return Err(Error::shape(format!(
                "linear: input {:?} does not end in {n_in}",
                self.shape()
            )));
        }
        if let Some(b) = bias {
            b.expect_shape(&[n_out], "linear bias")?;
        }
        let rows = self.numel() / n_in;
        let mut out_shape = self.shape().to_vec();
        *out_shape.last_mut().unwrap() = n_out;

        let mut data = vec![0.0; rows * n_out];
        {
            let x = self.data();
            let wt = transpose(&weight.data(), n_out, n_in);
            if let Some(b) = bias {
                let b = b.data();
                data.chunks_exact_mut(n_out).for_each(|r| r.copy_from_slice(&b));
            }
            gemm_acc(&mut data, &x, &wt, rows, n_in, n_out);
        }

        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Ok(Tensor::from_op(
            "linear",
            out_shape,
            data,
            parents,
            Box::new(move |g, p| {
                let x = p[0].data();
                let w = p[1].data();
                let gx = p[0].tracks_grad().then(|| {
                    let mut gx = vec![0.0; rows * n_in];
                    gemm_acc(&mut gx, g, &w, rows, n_out, n_in);
                    gx
                });
                let gw = p[1].tracks_grad().then(|| {
                    let mut gw = vec![0.0; n_out * n_in];
                    gemm_tn_acc(&mut gw, g, &x, rows, n_out, n_in);
                    gw
                });
                let mut grads = vec![gx, gw];
                if p.len() == 3 {
                    grads.push(p[2].tracks_grad().then(|| {
                        let mut gb = vec![0.0; n_out];
                        for r in g.chunks_exact(n_out) {
                            gb.iter_mut().zip(r).for_each(|(a, b)| *a += b);
                        }
                        gb
                    }));
                }
                grads
            }),
        ))
    }

    /// Batched matrix product over matching leading axes:
    /// `[.., m, k] x [.., k, n] -> [.., m, n]`, or with `transpose_rhs`
    /// `[.., m, k] x [.., n, k] -> [.., m, n]`.
    pub fn bmm(&self, rhs: &Tensor, transpose_rhs: bool) -> Result<Tensor> {
        let (a_shape, b_shape) = (self.shape(), rhs.shape());
        let r = a_shape.len();
        if r < 2 || b_shape.len() != r || a_shape[..r - 2] != b_shape[..r - 2] {
            return Err(Error::shape(format!("bmm: incompatible {a_shape:?} and {b_shape:?}")));
        }
        let (m, k) = (a_shape[r - 2], a_shape[r - 1]);
        let (kb, n) = if transpose_rhs {
            (b_shape[r - 1], b_shape[r - 2])
        } else {
            (b_shape[r - 2], b_shape[r - 1])
        };
        if kb != k {
            return Err(Error::shape(format!("bmm: inner extents {k} and {kb} differ")));
        }
        let batch: usize = a_shape[..r - 2].iter().product();
        let mut out_shape = a_shape[..r - 2].to_vec();
        out_shape.extend([m, n]);

        let mut data = vec![0.0; batch * m * n];
        {
            let a = self.data();
            let b = rhs.data();
            for bi in 0..batch {
                let out = &mut data[bi * m * n..(bi + 1) * m * n];
                let ab = &a[bi * m * k..(bi + 1) * m * k];
                let bb = &b[bi * k * n..(bi + 1) * k * n];
                if transpose_rhs {
                    gemm_nt_acc(out, ab, bb, m, k, n);
                } else {
                    gemm_acc(out, ab, bb, m, k, n);
                }
            }
        }
        Ok(Tensor::from_op(
            "bmm",
            out_shape,
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, p| {
                let a = p[0].data();
                let b = p[1].data();
                let ga = p[0].tracks_grad().then(|| {
                    let mut ga = vec![0.0; batch * m * k];
                    for bi in 0..batch {
                        let gb = &g[bi * m * n..(bi + 1) * m * n];
                        let bb = &b[bi * k * n..(bi + 1) * k * n];
                        let out = &mut ga[bi * m * k..(bi + 1) * m * k];
                        if transpose_rhs {
                            // dA = G B, B is [n, k]
                            gemm_acc(out, gb, bb, m, n, k);
                        } else {
                            // dA = G B^T, B is [k, n]
                            gemm_nt_acc(out, gb, bb, m, n, k);
                        }
                    }
                    ga
                });
                let gbm = p[1].tracks_grad().then(|| {
                    let mut gbm = vec![0.0; batch * k * n];
                    for bi in 0..batch {
                        let gb = &g[bi * m * n..(bi + 1) * m * n];
                        let ab = &a[bi * m * k..(bi + 1) * m * k];
                        let out = &mut gbm[bi * k * n..(bi + 1) * k * n];
                        if transpose_rhs {
                            // dB = G^T A  -> [n, k]
                            gemm_tn_acc(out, gb, ab, m, n, k);
                        } else {
                            // dB = A^T G  -> [k, n]
                            gemm_tn_acc(out, ab, gb, m, k, n);
                        }
                    }
                    gbm
                });
                vec![ga, gbm]
            }),
        ))
    }
}
