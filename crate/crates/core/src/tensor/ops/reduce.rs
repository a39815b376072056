use crate::tensor::Tensor;

impl Tensor {
    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![],
            vec![s],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        self.sum().scale(1.0 / n as f64)
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_lastaxis(&self) -> Tensor {
        let shape = self.shape();
        let last = *shape.last().expect("sum_lastaxis on a rank-0 tensor");
        let out_shape = shape[..shape.len() - 1].to_vec();
        let data: Vec<f64> = self.data().chunks_exact(last).map(|c| c.iter().sum()).collect();
        Tensor::from_op(
            "sum_lastaxis",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut out = Vec::with_capacity(g.len() * last);
                for &v in g {
                    out.extend(std::iter::repeat_n(v, last));
                }
                vec![Some(out)]
            }),
        )
    }
}
