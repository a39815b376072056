//! Named parameter storage and the small layers the models are built from.

use std::cell::RefCell;
use std::rc::Rc;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{conv3d, conv_transpose3d, instance_norm, layer_norm, Tensor, NORM_EPS};

/// Leaky ReLU negative slope used by every convolutional block.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InitMode {
    Random,
    /// Every parameter starts at zero. Zero-filled buffers are never touched,
    /// so very large models can be built cheaply for counting.
    Zeros,
}

struct Store {
    map: IndexMap<String, Tensor>,
    rng: ChaCha8Rng,
    mode: InitMode,
}

/// Shared, ordered map of named parameters. Cloned handles and `sub` scopes
/// all write into the same store.
#[derive(Clone)]
pub struct Params {
    store: Rc<RefCell<Store>>,
    prefix: String,
}

impl Params {
    pub fn new(seed: u64) -> Self {
        Self::with_mode(seed, InitMode::Random)
    }

    /// Store whose parameters are all zero; for counting and shape probes.
    pub fn zeros() -> Self {
        Self::with_mode(0, InitMode::Zeros)
    }

    fn with_mode(seed: u64, mode: InitMode) -> Self {
        Params {
            store: Rc::new(RefCell::new(Store {
                map: IndexMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
                mode,
            })),
            prefix: String::new(),
        }
    }

    /// Scope for a sub-module: names become `prefix.name.*`.
    pub fn sub(&self, name: &str) -> Params {
        Params {
            store: Rc::clone(&self.store),
            prefix: self.full_name(name),
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn insert(&self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let full = self.full_name(name);
        let t = Tensor::param(shape, data)?;
        let mut store = self.store.borrow_mut();
        if store.map.contains_key(&full) {
            return Err(Error::contract(format!("parameter {full} registered twice")));
        }
        store.map.insert(full, t.clone());
        Ok(t)
    }

    fn filled(&self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let v = if self.store.borrow().mode == InitMode::Zeros {
            0.0
        } else {
            value
        };
        self.insert(name, shape, vec![v; n])
    }

    pub fn zeros_param(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.filled(name, shape, 0.0)
    }

    pub fn ones_param(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.filled(name, shape, 1.0)
    }

    /// Normal(0, std) resampled until within two standard deviations.
    pub fn trunc_normal(&self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data = {
            let mut store = self.store.borrow_mut();
            if store.mode == InitMode::Zeros {
                vec![0.0; n]
            } else {
                (0..n)
                    .map(|_| loop {
                        let z: f64 = StandardNormal.sample(&mut store.rng);
                        if z.abs() <= 2.0 {
                            break z * std;
                        }
                    })
                    .collect()
            }
        };
        self.insert(name, shape, data)
    }

    /// Names and handles in registration order.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        self.store
            .borrow()
            .map
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<Tensor> {
        self.store.borrow().map.get(name).cloned()
    }

    pub fn len(&self) -> usize {
        self.store.borrow().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of scalar parameters.
    pub fn count(&self) -> usize {
        self.store.borrow().map.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.store.borrow().map.values().for_each(Tensor::zero_grad);
    }
}

/// Std used for projection weights.
pub const PROJ_STD: f64 = 0.02;

#[derive(Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(p: &Params, n_in: usize, n_out: usize, bias: bool) -> Result<Self> {
        Ok(Linear {
            weight: p.trunc_normal("weight", &[n_out, n_in], PROJ_STD)?,
            bias: if bias {
                Some(p.zeros_param("bias", &[n_out])?)
            } else {
                None
            },
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.linear(&self.weight, self.bias.as_ref())
    }
}

#[derive(Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(p: &Params, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: p.ones_param("weight", &[dim])?,
            beta: p.zeros_param("bias", &[dim])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.gamma, &self.beta, NORM_EPS)
    }
}

/// Two-layer perceptron with GELU.
#[derive(Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(p: &Params, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(&p.sub("fc1"), dim, hidden, true)?,
            fc2: Linear::new(&p.sub("fc2"), hidden, dim, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu())
    }
}

#[derive(Clone)]
pub struct Conv3d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub padding: usize,
}

impl Conv3d {
    /// Stride-1 "same" convolution for odd `k`. Weights are drawn from a
    /// truncated normal with He scaling `sqrt(2 / fan_in)`.
    pub fn new(p: &Params, cin: usize, cout: usize, k: usize) -> Result<Self> {
        let fan_in = (cin * k * k * k) as f64;
        Ok(Conv3d {
            weight: p.trunc_normal("weight", &[cout, cin, k, k, k], (2.0 / fan_in).sqrt())?,
            bias: Some(p.zeros_param("bias", &[cout])?),
            padding: k / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv3d(x, &self.weight, self.bias.as_ref(), 1, self.padding)
    }
}

/// 2x2x2 stride-2 transposed convolution.
#[derive(Clone)]
pub struct Deconv {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Deconv {
    pub fn new(p: &Params, cin: usize, cout: usize) -> Result<Self> {
        Ok(Deconv {
            weight: p.trunc_normal("weight", &[cin, cout, 2, 2, 2], (1.0 / cin as f64).sqrt())?,
            bias: p.zeros_param("bias", &[cout])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv_transpose3d(x, &self.weight, Some(&self.bias), 2, 2)
    }
}

#[derive(Clone)]
pub struct InstanceNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl InstanceNorm {
    pub fn new(p: &Params, channels: usize) -> Result<Self> {
        Ok(InstanceNorm {
            gamma: p.ones_param("weight", &[channels])?,
            beta: p.zeros_param("bias", &[channels])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        instance_norm(x, &self.gamma, &self.beta, NORM_EPS)
    }
}

/// Two 3x3x3 convolutions, each followed by instance norm and leaky ReLU.
#[derive(Clone)]
pub struct CnnBlock {
    pub conv1: Conv3d,
    pub norm1: InstanceNorm,
    pub conv2: Conv3d,
    pub norm2: InstanceNorm,
}

impl CnnBlock {
    pub fn new(p: &Params, cin: usize, cout: usize) -> Result<Self> {
        Ok(CnnBlock {
            conv1: Conv3d::new(&p.sub("conv1"), cin, cout, 3)?,
            norm1: InstanceNorm::new(&p.sub("norm1"), cout)?,
            conv2: Conv3d::new(&p.sub("conv2"), cout, cout, 3)?,
            norm2: InstanceNorm::new(&p.sub("norm2"), cout)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 5 {
            return Err(Error::shape(format!(
                "cnn block expects a 5-D input, got {:?}",
                x.shape()
            )));
        }
        let h = self.norm1.forward(&self.conv1.forward(x)?)?.leaky_relu(LEAKY_SLOPE);
        Ok(self.norm2.forward(&self.conv2.forward(&h)?)?.leaky_relu(LEAKY_SLOPE))
    }
}

/// 1x1x1 convolution producing class logits.
#[derive(Clone)]
pub struct SegHead {
    pub conv: Conv3d,
}

impl SegHead {
    pub fn new(p: &Params, cin: usize, classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::config("segmentation head needs at least one class"));
        }
        Ok(SegHead {
            conv: Conv3d {
                weight: p.trunc_normal("weight", &[classes, cin, 1, 1, 1], (1.0 / cin as f64).sqrt())?,
                bias: Some(p.zeros_param("bias", &[classes])?),
                padding: 0,
            },
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.conv.forward(x)
    }
}
