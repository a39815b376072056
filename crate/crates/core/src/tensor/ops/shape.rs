use crate::error::{Error, Result};
use crate::tensor::{numel_of, strides_of, Tensor};

impl Tensor {
    /// Same data, new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(format!("invalid permutation {perm:?} for rank {rank}")));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let map = permute_map(&in_shape, perm);
        let data: Vec<f64> = {
            let x = self.data();
            map.iter().map(|&j| x[j]).collect()
        };
        Ok(Tensor::from_op(
            "permute",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut out = vec![0.0; g.len()];
                for (gv, &j) in g.iter().zip(&map) {
                    out[j] = *gv;
                }
                vec![Some(out)]
            }),
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(format!(
                "narrow(axis={axis}, start={start}, len={len}) out of range for {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let data: Vec<f64> = {
            let x = self.data();
            let mut d = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * full + start) * inner;
                d.extend_from_slice(&x[base..base + len * inner]);
            }
            d
        };
        Ok(Tensor::from_op(
            "narrow",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut out = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    let src = o * len * inner;
                    out[base..base + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                vec![Some(out)]
            }),
        ))
    }

    /// Selects rows along axis 0. `None` entries produce rows of zeros.
    pub fn gather_rows(&self, rows: &[Option<usize>]) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if shape.is_empty() {
            return Err(Error::shape("gather_rows on a rank-0 tensor"));
        }
        let n_rows = shape[0];
        if let Some(bad) = rows.iter().flatten().find(|&&r| r >= n_rows) {
            return Err(Error::shape(format!("gather_rows: row {bad} out of range {n_rows}")));
        }
        if rows.is_empty() {
            return Err(Error::shape("gather_rows: empty selection"));
        }
        let row_len: usize = shape[1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[0] = rows.len();
        let data: Vec<f64> = {
            let x = self.data();
            let mut d = vec![0.0; rows.len() * row_len];
            for (dst, r) in d.chunks_exact_mut(row_len).zip(rows) {
                if let Some(r) = r {
                    dst.copy_from_slice(&x[r * row_len..(r + 1) * row_len]);
                }
            }
            d
        };
        let rows = rows.to_vec();
        Ok(Tensor::from_op(
            "gather_rows",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut out = vec![0.0; n_rows * row_len];
                for (src, r) in g.chunks_exact(row_len).zip(&rows) {
                    if let Some(r) = r {
                        out[r * row_len..(r + 1) * row_len]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(o, s)| *o += s);
                    }
                }
                vec![Some(out)]
            }),
        ))
    }
}

/// For each output flat index of the permuted tensor, the input flat index.
fn permute_map(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides_of(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = numel_of(in_shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            cur += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            cur -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::shape(format!("concat axis {axis} out of range for rank {rank}")));
    }
    for p in parts {
        let ok = p.rank() == rank
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape(format!(
                "concat along {axis}: {:?} incompatible with {:?}",
                p.shape(),
                first.shape()
            )));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = widths.iter().sum();
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = total;

    let mut data = Vec::with_capacity(outer * total * inner);
    {
        let bufs: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (b, &w) in bufs.iter().zip(&widths) {
                data.extend_from_slice(&b[o * w * inner..(o + 1) * w * inner]);
            }
        }
    }
    Ok(Tensor::from_op(
        "concat",
        out_shape,
        data,
        parts.to_vec(),
        Box::new(move |g, p| {
            let mut grads: Vec<Option<Vec<f64>>> = p
                .iter()
                .zip(&widths)
                .map(|(t, &w)| t.tracks_grad().then(|| Vec::with_capacity(outer * w * inner)))
                .collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (gr, &w) in grads.iter_mut().zip(&widths) {
                    let n = w * inner;
                    if let Some(gr) = gr {
                        gr.extend_from_slice(&g[pos..pos + n]);
                    }
                    pos += n;
                }
            }
            grads
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_transpose() {
        let x = Tensor::new(&[2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let t = x.permute(&[1, 0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.to_vec(), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(x.permute(&[0, 0]).is_err());
    }

    #[test]
    fn concat_and_narrow_invert() {
        let a = Tensor::from_fn(&[2, 2, 3], |i| i as f64);
        let b = Tensor::from_fn(&[2, 1, 3], |i| 100.0 + i as f64);
        let c = concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(c.narrow(1, 0, 2).unwrap().to_vec(), a.to_vec());
        assert_eq!(c.narrow(1, 2, 1).unwrap().to_vec(), b.to_vec());
    }

    #[test]
    fn gather_rows_scatter_adds() {
        let x = Tensor::param(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = x.gather_rows(&[Some(2), None, Some(2), Some(0)]).unwrap();
        assert_eq!(y.to_vec(), vec![5.0, 6.0, 0.0, 0.0, 5.0, 6.0, 1.0, 2.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
