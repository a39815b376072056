//! 3D convolution and the 2x2x2 / stride-2 transposed convolution.
//!
//! Layout is `[N, C, H, W, D]` with `D` contiguous. The stride-1 kernel walks
//! output rows along `D` and accumulates shifted input rows, so the innermost
//! loops are contiguous axpy updates in a fixed order.

use crate::error::{Error, Result};
use crate::tensor::ops::linalg::dot;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ins: [usize; 3],
    outs: [usize; 3],
}

impl Geometry {
    fn in_plane(&self) -> usize {
        self.ins.iter().product()
    }
    fn out_plane(&self) -> usize {
        self.outs.iter().product()
    }
}

fn geometry(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Geometry> {
    input.expect_rank(5, "conv3d input")?;
    weight.expect_rank(5, "conv3d weight")?;
    let (is, ws) = (input.shape(), weight.shape());
    let k = ws[2];
    if ws[3] != k || ws[4] != k {
        return Err(Error::shape(format!("conv3d weight must be cubic, got {ws:?}")));
    }
    if k % 2 == 0 && k != 2 {
        return Err(Error::config(format!("conv3d kernel must be odd or 2, got {k}")));
    }
    if ws[1] != is[1] {
        return Err(Error::shape(format!(
            "conv3d: weight expects {} input channels, input has {} ({is:?})",
            ws[1], is[1]
        )));
    }
    if stride == 0 {
        return Err(Error::config("conv3d stride must be at least 1"));
    }
    let mut outs = [0usize; 3];
    for a in 0..3 {
        let span = is[2 + a] + 2 * padding;
        if span < k {
            return Err(Error::domain(format!(
                "conv3d produces an empty output: extent {} + 2*{padding} < kernel {k}",
                is[2 + a]
            )));
        }
        outs[a] = (span - k) / stride + 1;
    }
    Ok(Geometry {
        n: is[0],
        cin: is[1],
        cout: ws[0],
        k,
        stride,
        pad: padding,
        ins: [is[2], is[3], is[4]],
        outs,
    })
}

/// `out[d] += sum_t w[t] * inp[d + t - pad]` over valid taps (stride 1).
#[inline]
fn row_corr(out: &mut [f64], inp: &[f64], w: &[f64], pad: usize) {
    let (od, id, k) = (out.len(), inp.len(), w.len());
    if k == 3 && pad == 1 && od == id && od >= 2 {
        let (w0, w1, w2) = (w[0], w[1], w[2]);
        out[0] += w1 * inp[0] + w2 * inp[1];
        for (((o, a), b), c) in out[1..od - 1]
            .iter_mut()
            .zip(&inp[..id - 2])
            .zip(&inp[1..id - 1])
            .zip(&inp[2..])
        {
            *o += w0 * a + w1 * b + w2 * c;
        }
        out[od - 1] += w0 * inp[id - 2] + w1 * inp[id - 1];
        return;
    }
    for (t, &wv) in w.iter().enumerate() {
        let lo = pad.saturating_sub(t);
        let hi = (id + pad).saturating_sub(t).min(od);
        if hi <= lo {
            continue;
        }
        let off = lo + t - pad;
        out[lo..hi]
            .iter_mut()
            .zip(&inp[off..off + (hi - lo)])
            .for_each(|(o, i)| *o += wv * i);
    }
}

/// Adjoint of `row_corr` with respect to `inp`:
/// `gin[i] += sum_t w[t] * gout[i - t + pad]`.
#[inline]
fn row_corr_adjoint(gin: &mut [f64], gout: &[f64], w: &[f64], pad: usize) {
    let (id, od, k) = (gin.len(), gout.len(), w.len());
    if k == 3 && pad == 1 && od == id && od >= 2 {
        let rev = [w[2], w[1], w[0]];
        row_corr(gin, gout, &rev, 1);
        return;
    }
    for (t, &wv) in w.iter().enumerate() {
        let lo = pad.saturating_sub(t);
        let hi = (id + pad).saturating_sub(t).min(od);
        if hi <= lo {
            continue;
        }
        let off = lo + t - pad;
        gin[off..off + (hi - lo)]
            .iter_mut()
            .zip(&gout[lo..hi])
            .for_each(|(i, g)| *i += wv * g);
    }
}

/// `gw[t] += sum_d gout[d] * inp[d + t - pad]`.
#[inline]
fn row_corr_weight(gw: &mut [f64], gout: &[f64], inp: &[f64], pad: usize) {
    let (od, id) = (gout.len(), inp.len());
    if gw.len() == 3 && pad == 1 && od == id && od >= 2 {
        // Interior d in [1, od-1): all three taps valid; lanes of 4.
        let g = &gout[1..od - 1];
        let (a, b, c) = (&inp[..id - 2], &inp[1..id - 1], &inp[2..]);
        let mut acc = [[0.0f64; 4]; 3];
        let n4 = g.len() / 4 * 4;
        for j in (0..n4).step_by(4) {
            for l in 0..4 {
                let gv = g[j + l];
                acc[0][l] += gv * a[j + l];
                acc[1][l] += gv * b[j + l];
                acc[2][l] += gv * c[j + l];
            }
        }
        let mut s = acc.map(|v| (v[0] + v[1]) + (v[2] + v[3]));
        for j in n4..g.len() {
            s[0] += g[j] * a[j];
            s[1] += g[j] * b[j];
            s[2] += g[j] * c[j];
        }
        s[1] += gout[0] * inp[0] + gout[od - 1] * inp[id - 1];
        s[2] += gout[0] * inp[1];
        s[0] += gout[od - 1] * inp[id - 2];
        gw.iter_mut().zip(s).for_each(|(w, v)| *w += v);
        return;
    }
    for (t, acc) in gw.iter_mut().enumerate() {
        let lo = pad.saturating_sub(t);
        let hi = (id + pad).saturating_sub(t).min(od);
        if hi <= lo {
            continue;
        }
        let off = lo + t - pad;
        *acc += dot(&gout[lo..hi], &inp[off..off + (hi - lo)]);
    }
}

/// Output rows `[lo, hi)` that see kernel tap `t` along one axis (stride 1).
#[inline]
fn tap_range(t: usize, pad: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(t);
    let hi = (n_in + pad).saturating_sub(t).min(n_out);
    (lo, hi.max(lo))
}

/// Visits every (output row, input row, kernel row offset) triple of one
/// sample for stride 1, spatial rows outermost so the working set stays small.
#[inline]
fn for_each_row_pair(gm: &Geometry, mut f: impl FnMut(usize, usize, usize)) {
    let [ih, iw, _] = gm.ins;
    let [oh, ow, _] = gm.outs;
    let k = gm.k;
    for y in 0..oh {
        for x in 0..ow {
            let orow = y * ow + x;
            for kh in 0..k {
                let (h0, h1) = tap_range(kh, gm.pad, ih, oh);
                if y < h0 || y >= h1 {
                    continue;
                }
                let iy = y + kh - gm.pad;
                for kw in 0..k {
                    let (w0, w1) = tap_range(kw, gm.pad, iw, ow);
                    if x < w0 || x >= w1 {
                        continue;
                    }
                    let ix = x + kw - gm.pad;
                    f(orow, iy * iw + ix, kh * k + kw);
                }
            }
        }
    }
}

fn strided_index(o: usize, t: usize, s: usize, pad: usize, n: usize) -> Option<usize> {
    (o * s + t).checked_sub(pad).filter(|&v| v < n)
}

/// Strided forward for one `(n, co)` plane and one input channel.
fn strided_fwd_plane(gm: &Geometry, out: &mut [f64], inp: &[f64], w: &[f64]) {
    let [ih, iw, id] = gm.ins;
    let [oh, ow, od] = gm.outs;
    let (k, s, p) = (gm.k, gm.stride, gm.pad);
    for y in 0..oh {
        for x in 0..ow {
            for z in 0..od {
                let mut acc = 0.0;
                for kh in 0..k {
                    let Some(iy) = strided_index(y, kh, s, p, ih) else {
                        continue;
                    };
                    for kw in 0..k {
                        let Some(ix) = strided_index(x, kw, s, p, iw) else {
                            continue;
                        };
                        for kd in 0..k {
                            let Some(iz) = strided_index(z, kd, s, p, id) else {
                                continue;
                            };
                            acc += w[(kh * k + kw) * k + kd] * inp[(iy * iw + ix) * id + iz];
                        }
                    }
                }
                out[(y * ow + x) * od + z] += acc;
            }
        }
    }
}

/// Strided input and weight gradients for one `(n, co, ci)` triple.
fn strided_bwd_plane(
    gm: &Geometry,
    gin: Option<&mut [f64]>,
    gw: Option<&mut [f64]>,
    gout: &[f64],
    inp: &[f64],
    w: &[f64],
) {
    let [ih, iw, id] = gm.ins;
    let [oh, ow, od] = gm.outs;
    let (k, s, p) = (gm.k, gm.stride, gm.pad);
    let (mut gin, mut gw) = (gin, gw);
    for y in 0..oh {
        for x in 0..ow {
            for z in 0..od {
                let gv = gout[(y * ow + x) * od + z];
                for kh in 0..k {
                    let Some(iy) = strided_index(y, kh, s, p, ih) else {
                        continue;
                    };
                    for kw in 0..k {
                        let Some(ix) = strided_index(x, kw, s, p, iw) else {
                            continue;
                        };
                        for kd in 0..k {
                            let Some(iz) = strided_index(z, kd, s, p, id) else {
                                continue;
                            };
                            let (wi, ii) = ((kh * k + kw) * k + kd, (iy * iw + ix) * id + iz);
                            if let Some(gin) = gin.as_deref_mut() {
                                gin[ii] += w[wi] * gv;
                            }
                            if let Some(gw) = gw.as_deref_mut() {
                                gw[wi] += gv * inp[ii];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `conv3d(input[N,Cin,H,W,D], weight[Cout,Cin,k,k,k], bias[Cout])`.
/// Output extent per axis is `(in + 2*padding - k) / stride + 1`.
pub fn conv3d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let gm = geometry(input, weight, stride, padding)?;
    if let Some(b) = bias {
        b.expect_shape(&[gm.cout], "conv3d bias")?;
    }
    let (ip, op, kv) = (gm.in_plane(), gm.out_plane(), gm.k * gm.k * gm.k);
    let (k, id, od) = (gm.k, gm.ins[2], gm.outs[2]);
    let mut data = vec![0.0; gm.n * gm.cout * op];
    {
        let x = input.data();
        let w = weight.data();
        let b = bias.map(|b| b.data());
        for n in 0..gm.n {
            let out = &mut data[n * gm.cout * op..(n + 1) * gm.cout * op];
            if let Some(b) = &b {
                for (co, plane) in out.chunks_exact_mut(op).enumerate() {
                    plane.fill(b[co]);
                }
            }
            let xs = &x[n * gm.cin * ip..(n + 1) * gm.cin * ip];
            if gm.stride == 1 {
                for_each_row_pair(&gm, |orow, irow, khw| {
                    for ci in 0..gm.cin {
                        let inp = &xs[ci * ip + irow * id..ci * ip + (irow + 1) * id];
                        for co in 0..gm.cout {
                            let wo = (co * gm.cin + ci) * kv + khw * k;
                            let o = &mut out[co * op + orow * od..co * op + (orow + 1) * od];
                            row_corr(o, inp, &w[wo..wo + k], gm.pad);
                        }
                    }
                });
            } else {
                for co in 0..gm.cout {
                    for ci in 0..gm.cin {
                        let wk = &w[(co * gm.cin + ci) * kv..(co * gm.cin + ci + 1) * kv];
                        strided_fwd_plane(&gm, &mut out[co * op..(co + 1) * op], &xs[ci * ip..(ci + 1) * ip], wk);
                    }
                }
            }
        }
    }
    let mut out_shape = vec![gm.n, gm.cout];
    out_shape.extend(gm.outs);
    let mut parents = vec![input.clone(), weight.clone()];
    parents.extend(bias.cloned());
    Ok(Tensor::from_op(
        "conv3d",
        out_shape,
        data,
        parents,
        Box::new(move |g, p| {
            let x = p[0].data();
            let w = p[1].data();
            let mut gx = p[0].tracks_grad().then(|| vec![0.0; gm.n * gm.cin * ip]);
            let mut gw = p[1].tracks_grad().then(|| vec![0.0; gm.cout * gm.cin * kv]);
            for n in 0..gm.n {
                let gs = &g[n * gm.cout * op..(n + 1) * gm.cout * op];
                let xs = &x[n * gm.cin * ip..(n + 1) * gm.cin * ip];
                if gm.stride == 1 {
                    if let Some(gx) = gx.as_mut() {
                        let gxs = &mut gx[n * gm.cin * ip..(n + 1) * gm.cin * ip];
                        for_each_row_pair(&gm, |orow, irow, khw| {
                            for ci in 0..gm.cin {
                                let gi = &mut gxs[ci * ip + irow * id..ci * ip + (irow + 1) * id];
                                for co in 0..gm.cout {
                                    let wo = (co * gm.cin + ci) * kv + khw * k;
                                    let go = &gs[co * op + orow * od..co * op + (orow + 1) * od];
                                    row_corr_adjoint(gi, go, &w[wo..wo + k], gm.pad);
                                }
                            }
                        });
                    }
                    if let Some(gw) = gw.as_mut() {
                        for_each_row_pair(&gm, |orow, irow, khw| {
                            for ci in 0..gm.cin {
                                let inp = &xs[ci * ip + irow * id..ci * ip + (irow + 1) * id];
                                for co in 0..gm.cout {
                                    let wo = (co * gm.cin + ci) * kv + khw * k;
                                    let go = &gs[co * op + orow * od..co * op + (orow + 1) * od];
                                    row_corr_weight(&mut gw[wo..wo + k], go, inp, gm.pad);
                                }
                            }
                        });
                    }
                } else {
                    for co in 0..gm.cout {
                        for ci in 0..gm.cin {
                            let (wlo, whi) = ((co * gm.cin + ci) * kv, (co * gm.cin + ci + 1) * kv);
                            let gin = gx
                                .as_mut()
                                .map(|v| &mut v[(n * gm.cin + ci) * ip..(n * gm.cin + ci + 1) * ip]);
                            let gwk = gw.as_mut().map(|v| &mut v[wlo..whi]);
                            strided_bwd_plane(
                                &gm,
                                gin,
                                gwk,
                                &gs[co * op..(co + 1) * op],
                                &xs[ci * ip..(ci + 1) * ip],
                                &w[wlo..whi],
                            );
                        }
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if p.len() == 3 {
                grads.push(p[2].tracks_grad().then(|| {
                    let mut gb = vec![0.0; gm.cout];
                    for (i, plane) in g.chunks_exact(op).enumerate() {
                        gb[i % gm.cout] += plane.iter().sum::<f64>();
                    }
                    gb
                }));
            }
            grads
        }),
    ))
}

/// Transposed convolution with kernel 2 and stride 2: every input voxel
/// writes a disjoint 2x2x2 output block. `weight` is `[Cin, Cout, 2, 2, 2]`.
pub fn conv_transpose3d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    kernel: usize,
) -> Result<Tensor> {
    if stride != 2 || kernel != 2 {
        return Err(Error::config(format!(
            "transposed conv supports only stride 2 with kernel 2, got stride {stride}, kernel {kernel}"
        )));
    }
    input.expect_rank(5, "transposed conv input")?;
    weight.expect_rank(5, "transposed conv weight")?;
    let (is, ws) = (input.shape().to_vec(), weight.shape().to_vec());
    if ws[0] != is[1] || ws[2..] != [2, 2, 2] {
        return Err(Error::shape(format!(
            "transposed conv: weight {ws:?} incompatible with input {is:?}"
        )));
    }
    let (n, cin, cout) = (is[0], is[1], ws[1]);
    if let Some(b) = bias {
        b.expect_shape(&[cout], "transposed conv bias")?;
    }
    let [h, w, d] = [is[2], is[3], is[4]];
    let (ip, op) = (h * w * d, 8 * h * w * d);
    let (ow, od) = (2 * w, 2 * d);

    // Output index of tap (a, b, c) for input voxel (y, x, z).
    let out_index = move |y: usize, x: usize, z: usize, tap: usize| {
        let (a, b, c) = (tap / 4, (tap / 2) % 2, tap % 2);
        ((2 * y + a) * ow + (2 * x + b)) * od + 2 * z + c
    };

    let mut data = vec![0.0; n * cout * op];
    {
        let xd = input.data();
        let wd = weight.data();
        let bd = bias.map(|b| b.data());
        for s in 0..n {
            for co in 0..cout {
                let out = &mut data[(s * cout + co) * op..(s * cout + co + 1) * op];
                if let Some(b) = &bd {
                    out.fill(b[co]);
                }
                for ci in 0..cin {
                    let inp = &xd[(s * cin + ci) * ip..(s * cin + ci + 1) * ip];
                    let wk = &wd[(ci * cout + co) * 8..(ci * cout + co + 1) * 8];
                    for y in 0..h {
                        for x in 0..w {
                            for z in 0..d {
                                let v = inp[(y * w + x) * d + z];
                                for (tap, &wv) in wk.iter().enumerate() {
                                    out[out_index(y, x, z, tap)] += v * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let out_shape = vec![n, cout, 2 * h, 2 * w, 2 * d];
    let mut parents = vec![input.clone(), weight.clone()];
    parents.extend(bias.cloned());
    Ok(Tensor::from_op(
        "conv_transpose3d",
        out_shape,
        data,
        parents,
        Box::new(move |g, p| {
            let xd = p[0].data();
            let wd = p[1].data();
            let gx = p[0].tracks_grad().then(|| {
                let mut gx = vec![0.0; n * cin * ip];
                for s in 0..n {
                    for ci in 0..cin {
                        let dst = &mut gx[(s * cin + ci) * ip..(s * cin + ci + 1) * ip];
                        for co in 0..cout {
                            let gout = &g[(s * cout + co) * op..(s * cout + co + 1) * op];
                            let wk = &wd[(ci * cout + co) * 8..(ci * cout + co + 1) * 8];
                            for y in 0..h {
                                for x in 0..w {
                                    for z in 0..d {
                                        let mut acc = 0.0;
                                        for (tap, &wv) in wk.iter().enumerate() {
                                            acc += gout[out_index(y, x, z, tap)] * wv;
                                        }
                                        dst[(y * w + x) * d + z] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
                gx
            });
            let gw = p[1].tracks_grad().then(|| {
                let mut gw = vec![0.0; cin * cout * 8];
                for s in 0..n {
                    for ci in 0..cin {
                        let inp = &xd[(s * cin + ci) * ip..(s * cin + ci + 1) * ip];
                        for co in 0..cout {
                            let gout = &g[(s * cout + co) * op..(s * cout + co + 1) * op];
                            let dst = &mut gw[(ci * cout + co) * 8..(ci * cout + co + 1) * 8];
                            for y in 0..h {
                                for x in 0..w {
                                    for z in 0..d {
                                        let v = inp[(y * w + x) * d + z];
                                        for (tap, acc) in dst.iter_mut().enumerate() {
                                            *acc += v * gout[out_index(y, x, z, tap)];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                gw
            });
            let mut grads = vec![gx, gw];
            if p.len() == 3 {
                grads.push(p[2].tracks_grad().then(|| {
                    let mut gb = vec![0.0; cout];
                    for (i, plane) in g.chunks_exact(op).enumerate() {
                        gb[i % cout] += plane.iter().sum::<f64>();
                    }
                    gb
                }));
            }
            grads
        }),
    ))
}
