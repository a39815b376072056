//! Integer label volumes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class index per voxel, row-major over `(H, W, D)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub dims: [usize; 3],
    pub values: Vec<u16>,
}

impl Labels {
    pub fn new(dims: [usize; 3], values: Vec<u16>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n == 0 || values.len() != n {
            return Err(Error::shape(format!(
                "label volume {dims:?} needs {n} values, got {}",
                values.len()
            )));
        }
        Ok(Labels { dims, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn max_class(&self) -> u16 {
        self.values.iter().copied().max().unwrap_or(0)
    }

    pub fn count(&self, class: u16) -> usize {
        self.values.iter().filter(|&&v| v == class).count()
    }

    /// Per-voxel argmax over the channel axis of `[1, K, H, W, D]`
    /// scores; ties go to the lower class.
    pub fn argmax(scores: &Tensor) -> Result<Self> {
        scores.expect_rank(5, "argmax input")?;
        let s = scores.shape();
        if s[0] != 1 {
            return Err(Error::shape(format!("argmax expects batch size 1, got {s:?}")));
        }
        let (k, dims) = (s[1], [s[2], s[3], s[4]]);
        let n: usize = dims.iter().product();
        let d = scores.data();
        let values = (0..n)
            .map(|v| {
                let mut best = 0;
                for c in 1..k {
                    if d[c * n + v] > d[best * n + v] {
                        best = c;
                    }
                }
                best as u16
            })
            .collect();
        Labels::new(dims, values)
    }

    /// `[K, N]` one-hot matrix.
    pub fn one_hot(&self, k: usize) -> Result<Tensor> {
        if let Some(&bad) = self.values.iter().find(|&&v| v as usize >= k) {
            return Err(Error::domain(format!("label {bad} outside 0..{k}")));
        }
        let n = self.len();
        let mut data = vec![0.0; k * n];
        for (i, &v) in self.values.iter().enumerate() {
            data[v as usize * n + i] = 1.0;
        }
        Tensor::new(&[k, n], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_picks_largest_channel() {
        let t = Tensor::new(&[1, 2, 1, 1, 3], vec![0.0, 2.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(Labels::argmax(&t).unwrap().values, vec![1, 0, 0]);
    }

    #[test]
    fn one_hot_rejects_out_of_range() {
        let l = Labels::new([1, 1, 2], vec![0, 2]).unwrap();
        assert!(l.one_hot(2).is_err());
        assert_eq!(l.one_hot(3).unwrap().to_vec(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }
}
