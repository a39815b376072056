//! Layer norm (over the last axis) and instance norm (per sample and channel
//! over the spatial axes). Both use the biased variance and `sqrt(var + eps)`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

struct GroupStats {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn normalize_groups(x: &[f64], group: usize, eps: f64) -> GroupStats {
    let n_groups = x.len() / group;
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(n_groups);
    for (src, dst) in x.chunks_exact(group).zip(xhat.chunks_exact_mut(group)) {
        let mean = src.iter().sum::<f64>() / group as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / group as f64;
        let is = 1.0 / (var + eps).sqrt();
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * is;
        }
        inv_std.push(is);
    }
    GroupStats { xhat, inv_std }
}

/// dx for one group given dxhat.
fn group_input_grad(dxhat: &[f64], xhat: &[f64], inv_std: f64, out: &mut [f64]) {
    let n = dxhat.len() as f64;
    let m1 = dxhat.iter().sum::<f64>() / n;
    let m2 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
    for ((o, d), xh) in out.iter_mut().zip(dxhat).zip(xhat) {
        *o = inv_std * (d - m1 - xh * m2);
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::config(format!("normalization eps must be positive, got {eps}")));
    }
    Ok(())
}

/// Normalizes each row of the last axis, then applies `gamma`/`beta` of
/// shape `[C]`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    check_eps(eps)?;
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| Error::shape("layer_norm on a rank-0 tensor"))?;
    gamma.expect_shape(&[c], "layer_norm gamma")?;
    beta.expect_shape(&[c], "layer_norm beta")?;

    let stats = normalize_groups(&x.data(), c, eps);
    let data: Vec<f64> = {
        let (g, b) = (gamma.data(), beta.data());
        stats
            .xhat
            .chunks_exact(c)
            .flat_map(|row| row.iter().zip(g.iter()).zip(b.iter()).map(|((v, g), b)| v * g + b))
            .collect()
    };
    Ok(Tensor::from_op(
        "layer_norm",
        x.shape().to_vec(),
        data,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, p| {
            let gam = p[1].data();
            let gx = p[0].tracks_grad().then(|| {
                let mut gx = vec![0.0; g.len()];
                let mut dxhat = vec![0.0; c];
                for (((out, gr), xh), &is) in gx
                    .chunks_exact_mut(c)
                    .zip(g.chunks_exact(c))
                    .zip(stats.xhat.chunks_exact(c))
                    .zip(&stats.inv_std)
                {
                    for ((d, gv), gm) in dxhat.iter_mut().zip(gr).zip(gam.iter()) {
                        *d = gv * gm;
                    }
                    group_input_grad(&dxhat, xh, is, out);
                }
                gx
            });
            let ggamma = p[1].tracks_grad().then(|| {
                let mut acc = vec![0.0; c];
                for (gr, xh) in g.chunks_exact(c).zip(stats.xhat.chunks_exact(c)) {
                    for ((a, gv), x) in acc.iter_mut().zip(gr).zip(xh) {
                        *a += gv * x;
                    }
                }
                acc
            });
            let gbeta = p[2].tracks_grad().then(|| {
                let mut acc = vec![0.0; c];
                for gr in g.chunks_exact(c) {
                    acc.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                }
                acc
            });
            vec![gx, ggamma, gbeta]
        }),
    ))
}

/// Normalizes each `(sample, channel)` slab of an `[N, C, ...spatial]` tensor
/// over its spatial extent; `gamma`/`beta` have shape `[C]`.
pub fn instance_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    check_eps(eps)?;
    if x.rank() < 3 {
        return Err(Error::shape(format!(
            "instance_norm needs [N, C, spatial..], got {:?}",
            x.shape()
        )));
    }
    let c = x.shape()[1];
    let spatial: usize = x.shape()[2..].iter().product();
    gamma.expect_shape(&[c], "instance_norm gamma")?;
    beta.expect_shape(&[c], "instance_norm beta")?;

    let stats = normalize_groups(&x.data(), spatial, eps);
    let data: Vec<f64> = {
        let (g, b) = (gamma.data(), beta.data());
        stats
            .xhat
            .chunks_exact(spatial)
            .enumerate()
            .flat_map(|(grp, slab)| {
                let (gv, bv) = (g[grp % c], b[grp % c]);
                slab.iter().map(move |v| v * gv + bv)
            })
            .collect()
    };
    Ok(Tensor::from_op(
        "instance_norm",
        x.shape().to_vec(),
        data,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, p| {
            let gam = p[1].data();
            let gx = p[0].tracks_grad().then(|| {
                let mut gx = vec![0.0; g.len()];
                let mut dxhat = vec![0.0; spatial];
                for (grp, (((out, gr), xh), &is)) in gx
                    .chunks_exact_mut(spatial)
                    .zip(g.chunks_exact(spatial))
                    .zip(stats.xhat.chunks_exact(spatial))
                    .zip(&stats.inv_std)
                    .enumerate()
                {
                    let gm = gam[grp % c];
                    for (d, gv) in dxhat.iter_mut().zip(gr) {
                        *d = gv * gm;
                    }
                    group_input_grad(&dxhat, xh, is, out);
                }
                gx
            });
            let ggamma = p[1].tracks_grad().then(|| {
                let mut acc = vec![0.0; c];
                for (grp, (gr, xh)) in g
                    .chunks_exact(spatial)
                    .zip(stats.xhat.chunks_exact(spatial))
                    .enumerate()
                {
                    acc[grp % c] += gr.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
                }
                acc
            });
            let gbeta = p[2].tracks_grad().then(|| {
                let mut acc = vec![0.0; c];
                for (grp, gr) in g.chunks_exact(spatial).enumerate() {
                    acc[grp % c] += gr.iter().sum::<f64>();
                }
                acc
            });
            vec![gx, ggamma, gbeta]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive_eps() {
        let x = Tensor::ones(&[2, 3]);
        let (g, b) = (Tensor::ones(&[3]), Tensor::zeros(&[3]));
        assert!(matches!(layer_norm(&x, &g, &b, 0.0), Err(Error::Config(_))));
        assert!(matches!(layer_norm(&x, &g, &b, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn constant_input_gives_beta() {
        let x = Tensor::full(&[1, 2, 2, 2, 2], 4.0);
        let g = Tensor::new(&[2], vec![3.0, 5.0]).unwrap();
        let b = Tensor::new(&[2], vec![0.25, -1.0]).unwrap();
        let y = instance_norm(&x, &g, &b, DEFAULT_EPS).unwrap().to_vec();
        assert!(y[..8].iter().all(|&v| v == 0.25));
        assert!(y[8..].iter().all(|&v| v == -1.0));
        let y = layer_norm(&Tensor::full(&[3, 2], 7.0), &g, &b, DEFAULT_EPS)
            .unwrap()
            .to_vec();
        assert_eq!(y, vec![0.25, -1.0, 0.25, -1.0, 0.25, -1.0]);
    }
}
