//! Explicit-loop reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unetformer::labels::Labels;
use unetformer::nn::{LayerNorm, Linear, Mlp, Params};
use unetformer::swin::WindowAttention;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Overwrites every parameter with U(-scale, scale) values.
pub fn randomize(params: &Params, scale: f64, seed: u64) {
    let mut r = rng(seed);
    for (_, t) in params.named() {
        let v: Vec<f64> = (0..t.numel()).map(|_| r.random_range(-scale..scale)).collect();
        t.assign(&v).unwrap();
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Direct six-loop convolution of `x[n,ci,h,w,d]` with `w[co,ci,k,k,k]`.
pub fn naive_conv3d(
    x: &[f64],
    xs: [usize; 5],
    w: &[f64],
    ws: [usize; 5],
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 5]) {
    let [n, ci, h, wd, d] = xs;
    let (co, k) = (ws[0], ws[2]);
    let o = |e: usize| (e + 2 * pad - k) / stride + 1;
    let os = [n, co, o(h), o(wd), o(d)];
    let mut out = vec![0.0; os.iter().product()];
    for b in 0..n {
        for oc in 0..co {
            for ox in 0..os[2] {
                for oy in 0..os[3] {
                    for oz in 0..os[4] {
                        let mut acc = bias.map_or(0.0, |bv| bv[oc]);
                        for ic in 0..ci {
                            for kx in 0..k {
                                for ky in 0..k {
                                    for kz in 0..k {
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        let iz = (oz * stride + kz) as isize - pad as isize;
                                        if ix < 0
                                            || iy < 0
                                            || iz < 0
                                            || ix >= h as isize
                                            || iy >= wd as isize
                                            || iz >= d as isize
                                        {
                                            continue;
                                        }
                                        let xi =
                                            (((b * ci + ic) * h + ix as usize) * wd + iy as usize) * d + iz as usize;
                                        let wi = (((oc * ci + ic) * k + kx) * k + ky) * k + kz;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        out[(((b * co + oc) * os[2] + ox) * os[3] + oy) * os[4] + oz] = acc;
                    }
                }
            }
        }
    }
    (out, os)
}

/// Scatter-add transposed convolution, kernel 2 stride 2, `w[ci,co,2,2,2]`.
pub fn scatter_deconv(x: &[f64], xs: [usize; 5], w: &[f64], co: usize, bias: &[f64]) -> Vec<f64> {
    let [n, ci, h, wd, d] = xs;
    let os = [n, co, 2 * h, 2 * wd, 2 * d];
    let mut out = vec![0.0; os.iter().product()];
    for b in 0..n {
        for oc in 0..co {
            for i in 0..os[2] * os[3] * os[4] {
                out[(b * co + oc) * os[2] * os[3] * os[4] + i] = bias[oc];
            }
        }
        for ic in 0..ci {
            for x0 in 0..h {
                for y0 in 0..wd {
                    for z0 in 0..d {
                        let v = x[(((b * ci + ic) * h + x0) * wd + y0) * d + z0];
                        for oc in 0..co {
                            for a in 0..2 {
                                for bb in 0..2 {
                                    for c in 0..2 {
                                        let wi = (((ic * co + oc) * 2 + a) * 2 + bb) * 2 + c;
                                        let oi = (((b * co + oc) * os[2] + 2 * x0 + a) * os[3] + 2 * y0 + bb) * os[4]
                                            + 2 * z0
                                            + c;
                                        out[oi] += v * w[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn linear_rows(x: &[f64], c_in: usize, lin: &Linear) -> Vec<f64> {
    let w = lin.weight.to_vec();
    let c_out = lin.weight.shape()[0];
    let b = lin.bias.as_ref().map(|b| b.to_vec());
    let mut out = Vec::with_capacity(x.len() / c_in * c_out);
    for row in x.chunks(c_in) {
        for o in 0..c_out {
            let mut acc = b.as_ref().map_or(0.0, |b| b[o]);
            for i in 0..c_in {
                acc += w[o * c_in + i] * row[i];
            }
            out.push(acc);
        }
    }
    out
}

pub fn layer_norm_rows(x: &[f64], c: usize, ln: &LayerNorm) -> Vec<f64> {
    let (g, b) = (ln.gamma.to_vec(), ln.beta.to_vec());
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        for i in 0..c {
            out.push((row[i] - mean) / (var + 1e-5).sqrt() * g[i] + b[i]);
        }
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn mlp_rows(x: &[f64], c: usize, mlp: &Mlp) -> Vec<f64> {
    let hidden = mlp.fc1.weight.shape()[0];
    let h: Vec<f64> = linear_rows(x, c, &mlp.fc1).into_iter().map(gelu).collect();
    linear_rows(&h, hidden, &mlp.fc2)
}

/// Window attention over grid rows `x` (`[N, C]`, row-major over `dims`)
/// computed token by token.
///
/// Each token sits at rolled position `(p - s) mod dims`, where `s` is
/// `floor(M/2)` on shifted axes longer than `M`. Tokens attend to the tokens
/// of the same `min(M, extent)` window whose rolled positions did not wrap
/// differently on any axis.
pub fn dense_window_attention(attn: &WindowAttention, dims: [usize; 3], x: &[f64], shifted: bool) -> Vec<f64> {
    let c = attn.dim();
    let (heads, dh, m) = (attn.heads, attn.head_dim(), attn.window);
    let n: usize = dims.iter().product();
    let win = dims.map(|e| m.min(e));
    let shift = dims.map(|e| if shifted && e > m { m / 2 } else { 0 });
    let qkv = linear_rows(x, c, &attn.qkv);
    let table = attn.bias_table.to_vec();
    let span = 2 * m - 1;

    let coords = |i: usize| [i / (dims[1] * dims[2]), (i / dims[2]) % dims[1], i % dims[2]];
    let rolled = |i: usize| {
        let p = coords(i);
        [0, 1, 2].map(|a| (p[a] + dims[a] - shift[a]) % dims[a])
    };
    let wrapped = |u: [usize; 3]| [0, 1, 2].map(|a| shift[a] > 0 && u[a] + shift[a] >= dims[a]);

    let mut heads_out = vec![0.0; n * c];
    for q in 0..n {
        let uq = rolled(q);
        let keys: Vec<usize> = (0..n)
            .filter(|&k| {
                let uk = rolled(k);
                (0..3).all(|a| uq[a] / win[a] == uk[a] / win[a]) && wrapped(uq) == wrapped(uk)
            })
            .collect();
        for h in 0..heads {
            let mut logits = Vec::with_capacity(keys.len());
            for &k in &keys {
                let uk = rolled(k);
                let mut dot = 0.0;
                for e in 0..dh {
                    dot += qkv[q * 3 * c + h * dh + e] * qkv[k * 3 * c + c + h * dh + e];
                }
                let r = [0, 1, 2].map(|a| uq[a] % win[a] + m - 1 - uk[a] % win[a]);
                let row = (r[0] * span + r[1]) * span + r[2];
                logits.push(dot / (dh as f64).sqrt() + table[row * heads + h]);
            }
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = weights.iter().sum();
            for e in 0..dh {
                let mut acc = 0.0;
                for (wgt, &k) in weights.iter().zip(&keys) {
                    acc += wgt / total * qkv[k * 3 * c + 2 * c + h * dh + e];
                }
                heads_out[q * c + h * dh + e] = acc;
            }
        }
    }
    linear_rows(&heads_out, c, &attn.proj)
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn random_labels(dims: [usize; 3], k: u16, density: f64, seed: u64) -> Labels {
    let mut r = rng(seed);
    let n = dims.iter().product();
    let values = (0..n)
        .map(|_| {
            if r.random_bool(density) {
                r.random_range(1..k)
            } else {
                0
            }
        })
        .collect();
    Labels::new(dims, values).unwrap()
}

pub fn brute_dice(a: &Labels, b: &Labels, class: u16) -> f64 {
    let mut inter = 0usize;
    let (mut na, mut nb) = (0usize, 0usize);
    for (x, y) in a.values.iter().zip(&b.values) {
        na += (*x == class) as usize;
        nb += (*y == class) as usize;
        inter += (*x == class && *y == class) as usize;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// Coordinates of class voxels with a face neighbour outside the class or
/// outside the volume.
pub fn brute_boundary(l: &Labels, class: u16) -> Vec<[usize; 3]> {
    let [h, w, d] = l.dims;
    let at = |x: isize, y: isize, z: isize| -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < h
            && (y as usize) < w
            && (z as usize) < d
            && l.values[l.index(x as usize, y as usize, z as usize)] == class
    };
    let mut out = Vec::new();
    for x in 0..h as isize {
        for y in 0..w as isize {
            for z in 0..d as isize {
                if !at(x, y, z) {
                    continue;
                }
                let steps = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
                if steps.iter().any(|&(a, b, c)| !at(x + a, y + b, z + c)) {
                    out.push([x as usize, y as usize, z as usize]);
                }
            }
        }
    }
    out
}

fn directed_all_pairs(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    (0..3)
                        .map(|a| ((p[a] as f64 - q[a] as f64) * spacing[a]).powi(2))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

fn interpolated_percentile(mut v: Vec<f64>, p: f64) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Symmetric boundary Hausdorff distance by exhaustive pair search; `None`
/// when either class mask is empty.
pub fn brute_hausdorff(a: &Labels, b: &Labels, class: u16, spacing: [f64; 3], pct: f64) -> Option<f64> {
    let (ba, bb) = (brute_boundary(a, class), brute_boundary(b, class));
    if ba.is_empty() || bb.is_empty() {
        return None;
    }
    let ab = interpolated_percentile(directed_all_pairs(&ba, &bb, spacing), pct);
    let ba_d = interpolated_percentile(directed_all_pairs(&bb, &ba, spacing), pct);
    Some(ab.max(ba_d))
}

/// Grids covering every window shape `1..=M` per axis, with and without
/// remainders.
pub fn attention_grids(m: usize) -> Vec<[usize; 3]> {
    let mut v = Vec::new();
    for a in 1..=m {
        v.push([a, m.min(a + 1), 1]);
        v.push([a, a, a]);
    }
    v.push([m, m, m]);
    v.push([m + 1, 2 * m, m + 2]);
    v.push([2 * m + 1, m, 1]);
    v
}
