use crate::error::{Error, Result};
use crate::tensor::{strides_of, Tensor};

/// For every flat index of `lhs_shape`, the flat index into a tensor of
/// `rhs_shape` broadcast against it (right-aligned, extents 1 or equal).
fn broadcast_map(lhs_shape: &[usize], rhs_shape: &[usize]) -> Result<Vec<usize>> {
    if rhs_shape.len() > lhs_shape.len() {
        return Err(Error::shape(format!(
            "cannot broadcast {rhs_shape:?} onto {lhs_shape:?}"
        )));
    }
    let offset = lhs_shape.len() - rhs_shape.len();
    let rhs_strides = strides_of(rhs_shape);
    let mut eff = vec![0usize; lhs_shape.len()];
    for (j, (&r, &s)) in rhs_shape.iter().zip(&rhs_strides).enumerate() {
        let l = lhs_shape[offset + j];
        if r == l {
            eff[offset + j] = s;
        } else if r != 1 {
            return Err(Error::shape(format!(
                "cannot broadcast {rhs_shape:?} onto {lhs_shape:?}"
            )));
        }
    }
    let n: usize = lhs_shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; lhs_shape.len()];
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for ax in (0..lhs_shape.len()).rev() {
            idx[ax] += 1;
            cur += eff[ax];
            if idx[ax] < lhs_shape[ax] {
                break;
            }
            cur -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Ok(map)
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "add")?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "sub")?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "mul")?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, p| {
                let a = p[0].data();
                let b = p[1].data();
                let ga = p[0]
                    .tracks_grad()
                    .then(|| g.iter().zip(b.iter()).map(|(g, b)| g * b).collect());
                let gb = p[1]
                    .tracks_grad()
                    .then(|| g.iter().zip(a.iter()).map(|(g, a)| g * a).collect());
                vec![ga, gb]
            }),
        ))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "div")?;
        if let Some(i) = other.data().iter().position(|&v| v == 0.0) {
            return Err(Error::domain(format!("div: zero divisor at flat index {i}")));
        }
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a / b)
            .collect();
        Ok(Tensor::from_op(
            "div",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, p| {
                let a = p[0].data();
                let b = p[1].data();
                let ga = p[0]
                    .tracks_grad()
                    .then(|| g.iter().zip(b.iter()).map(|(g, b)| g / b).collect());
                let gb = p[1].tracks_grad().then(|| {
                    g.iter()
                        .zip(a.iter().zip(b.iter()))
                        .map(|(g, (a, b))| -g * a / (b * b))
                        .collect()
                });
                vec![ga, gb]
            }),
        ))
    }

    /// `self + rhs` with `rhs` broadcast (right-aligned) to `self`'s shape.
    pub fn add_broadcast(&self, rhs: &Tensor) -> Result<Tensor> {
        let map = broadcast_map(self.shape(), rhs.shape())?;
        let data: Vec<f64> = {
            let a = self.data();
            let b = rhs.data();
            a.iter().zip(&map).map(|(a, &j)| a + b[j]).collect()
        };
        let rhs_n = rhs.numel();
        Ok(Tensor::from_op(
            "add_broadcast",
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, p| {
                let gb = p[1].tracks_grad().then(|| {
                    let mut acc = vec![0.0; rhs_n];
                    for (gv, &j) in g.iter().zip(&map) {
                        acc[j] += gv;
                    }
                    acc
                });
                vec![p[0].tracks_grad().then(|| g.to_vec()), gb]
            }),
        ))
    }

    /// `self * rhs` with `rhs` broadcast (right-aligned) to `self`'s shape.
    pub fn mul_broadcast(&self, rhs: &Tensor) -> Result<Tensor> {
        let map = broadcast_map(self.shape(), rhs.shape())?;
        let data: Vec<f64> = {
            let a = self.data();
            let b = rhs.data();
            a.iter().zip(&map).map(|(a, &j)| a * b[j]).collect()
        };
        let rhs_n = rhs.numel();
        Ok(Tensor::from_op(
            "mul_broadcast",
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, p| {
                let a = p[0].data();
                let b = p[1].data();
                let ga = p[0]
                    .tracks_grad()
                    .then(|| g.iter().zip(&map).map(|(g, &j)| g * b[j]).collect());
                let gb = p[1].tracks_grad().then(|| {
                    let mut acc = vec![0.0; rhs_n];
                    for ((gv, av), &j) in g.iter().zip(a.iter()).zip(&map) {
                        acc[j] += gv * av;
                    }
                    acc
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|a| a * s).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.iter().map(|v| v * s).collect())]),
        )
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|a| a + s).collect();
        Tensor::from_op(
            "add_scalar",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// `max(x, 0) + slope * min(x, 0)`.
    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let data: Vec<f64> = self
            .data()
            .iter()
            .map(|&a| if a > 0.0 { a } else { slope * a })
            .collect();
        Tensor::from_op(
            "leaky_relu",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, p| {
                let x = p[0].data();
                vec![Some(
                    g.iter()
                        .zip(x.iter())
                        .map(|(g, &x)| if x > 0.0 { *g } else { slope * g })
                        .collect(),
                )]
            }),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044_715;
        let data: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh()))
            .collect();
        Tensor::from_op(
            "gelu",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, p| {
                let x = p[0].data();
                vec![Some(
                    g.iter()
                        .zip(x.iter())
                        .map(|(g, &x)| {
                            let u = C * (x + A * x * x * x);
                            let t = u.tanh();
                            let du = C * (1.0 + 3.0 * A * x * x);
                            g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                        })
                        .collect(),
                )]
            }),
        )
    }

    /// `ln(max(x, floor))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&self, floor: f64) -> Result<Tensor> {
        if floor <= 0.0 {
            return Err(Error::config(format!("log clamp floor must be positive, got {floor}")));
        }
        let data: Vec<f64> = self.data().iter().map(|&x| x.max(floor).ln()).collect();
        Ok(Tensor::from_op(
            "log_clamped",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, p| {
                let x = p[0].data();
                vec![Some(
                    g.iter()
                        .zip(x.iter())
                        .map(|(g, &x)| if x > floor { g / x } else { 0.0 })
                        .collect(),
                )]
            }),
        ))
    }

    /// Elementwise absolute value; subgradient 0 at 0.
    pub fn abs(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|a| a.abs()).collect();
        Tensor::from_op(
            "abs",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, p| {
                let x = p[0].data();
                vec![Some(
                    g.iter()
                        .zip(x.iter())
                        .map(|(g, &x)| {
                            if x > 0.0 {
                                *g
                            } else if x < 0.0 {
                                -g
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                )]
            }),
        )
    }

    pub fn square(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|a| a * a).collect();
        Tensor::from_op(
            "square",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, p| {
                let x = p[0].data();
                vec![Some(g.iter().zip(x.iter()).map(|(g, x)| 2.0 * g * x).collect())]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_map_channel_bias() {
        let map = broadcast_map(&[2, 3, 2], &[3, 1]).unwrap();
        assert_eq!(map, vec![0, 0, 1, 1, 2, 2, 0, 0, 1, 1, 2, 2]);
        assert!(broadcast_map(&[2, 3], &[2]).is_err());
    }

    #[test]
    fn add_broadcast_backward_reduces() {
        let x = Tensor::param(&[2, 3], vec![1.0; 6]).unwrap();
        let b = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = x.add_broadcast(&b).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 3.0, 4.0, 2.0, 3.0, 4.0]);
        y.sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn leaky_relu_slope() {
        let x = Tensor::new(&[3], vec![-2.0, 0.0, 3.0]).unwrap();
        assert_eq!(x.leaky_relu(0.01).to_vec(), vec![-0.02, 0.0, 3.0]);
    }

    #[test]
    fn log_clamp_never_infinite() {
        let x = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        let y = x.log_clamped(1e-12).unwrap();
        assert!(y.to_vec().iter().all(|v| v.is_finite()));
        assert!((y.to_vec()[0] - (1e-12f64).ln()).abs() < 1e-12);
    }
}
