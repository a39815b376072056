use crate::tensor::Tensor;

impl Tensor {
    /// Softmax over the last axis, stabilized by subtracting the row max.
    pub fn softmax_lastaxis(&self) -> Tensor {
        let last = *self.shape().last().expect("softmax on a rank-0 tensor");
        let mut out = self.to_vec();
        for row in out.chunks_exact_mut(last) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            let inv = 1.0 / z;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        let saved = out.clone();
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; g.len()];
                for ((dst, gr), yr) in gx
                    .chunks_exact_mut(last)
                    .zip(g.chunks_exact(last))
                    .zip(saved.chunks_exact(last))
                {
                    let s: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, gv), yv) in dst.iter_mut().zip(gr).zip(yr) {
                        *d = yv * (gv - s);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_element_is_one() {
        let x = Tensor::new(&[3, 1], vec![-5.0, 0.0, 7.0]).unwrap();
        assert_eq!(x.softmax_lastaxis().to_vec(), vec![1.0; 3]);
    }

    #[test]
    fn uniform_row() {
        let y = Tensor::zeros(&[3]).softmax_lastaxis().to_vec();
        for v in y {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn large_gap_is_stable() {
        let y = Tensor::new(&[2], vec![1000.0, 0.0])
            .unwrap()
            .softmax_lastaxis()
            .to_vec();
        assert!(y.iter().all(|v| v.is_finite()));
        assert!((y[0] - 1.0).abs() < 1e-15);
        assert!(y[1] < 1e-300);
    }
}
