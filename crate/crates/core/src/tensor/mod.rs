//! Dense row-major `f64` tensors with reverse-mode gradients.
//!
//! A [`Tensor`] is a cheap handle (reference counted) to an immutable shape,
//! a data buffer, an optional gradient buffer and, for op results, the node
//! that produced it. Ops record a node only when at least one input tracks
//! gradients and recording is enabled (see [`no_grad`]). Calling
//! [`Tensor::backward`] on a scalar walks the recorded graph and accumulates
//! `d loss / d leaf` into every tracked leaf.
//!
//! Parameters are leaves whose data can be overwritten in place
//! ([`Tensor::data_mut`]); every handle cloned from the same leaf observes the
//! update.

mod autograd;
pub mod gradcheck;
mod ops;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use gradcheck::{gradcheck, gradcheck_sampled, GradReport};
pub use ops::concat;
pub use ops::conv::{conv3d, conv_transpose3d};
pub use ops::interp::trilinear_upsample;
pub use ops::norm::{instance_norm, layer_norm, DEFAULT_EPS as NORM_EPS};

/// Per-parent gradients produced by a backward rule.
pub(crate) type ParentGrads = Vec<Option<Vec<f64>>>;

/// Backward rule: receives the output gradient and the parent handles.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[Tensor]) -> ParentGrads>;

pub(crate) struct Node {
    pub(crate) op: &'static str,
    pub(crate) parents: Vec<Tensor>,
    pub(crate) backward: BackwardFn,
}

pub(crate) struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    track_grad: bool,
    node: Option<Node>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with graph recording disabled. Ops still compute values but never
/// record nodes, so results do not track gradients.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_finite(context: &str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            context: context.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, track_grad: bool, node: Option<Node>) -> Self {
        Tensor(Rc::new(Inner {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            track_grad,
            node,
        }))
    }

    /// Untracked tensor. Rejects zero extents, length mismatch and non-finite values.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::validated(shape, data, false)
    }

    /// Leaf that accumulates gradients on `backward`.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::validated(shape, data, true)
    }

    fn validated(shape: &[usize], data: Vec<f64>, track_grad: bool) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        if numel_of(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {} values, got {}",
                numel_of(shape),
                data.len()
            )));
        }
        check_finite("tensor construction", &data)?;
        Ok(Self::build(shape.to_vec(), data, track_grad, None))
    }

    pub fn scalar(v: f64) -> Self {
        Self::full(&[], v)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        assert!(v.is_finite(), "non-finite fill value");
        assert!(!shape.contains(&0), "zero extent in shape {shape:?}");
        Self::build(shape.to_vec(), vec![v; numel_of(shape)], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let data: Vec<f64> = (0..numel_of(shape)).map(&mut f).collect();
        Self::new(shape, data).expect("from_fn produced an invalid tensor")
    }

    /// Result of an op. Records a node when any parent tracks gradients and
    /// recording is enabled.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len(), "{op}: shape/data mismatch");
        if cfg!(debug_assertions) {
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                panic!("{op} produced a non-finite value at flat index {i}");
            }
        }
        let track = grad_enabled() && parents.iter().any(|p| p.tracks_grad());
        let node = track.then(|| Node { op, parents, backward });
        Self::build(shape, data, track, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn tracks_grad(&self) -> bool {
        self.0.track_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Name of the op that produced this tensor, if it was recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Mutable access to the buffer. Intended for parameter updates and
    /// finite-difference probes; callers must keep values finite.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Untracked copy of the current values.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    /// Tracked leaf holding a copy of the current values.
    pub fn to_param(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.to_vec(), true, None)
    }

    /// Copies `values` into this tensor's buffer in place.
    pub fn assign(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::shape(format!(
                "assign of {} values into shape {:?}",
                values.len(),
                self.shape()
            )));
        }
        check_finite("assign", values)?;
        self.data_mut().copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn node(&self) -> Option<&Node> {
        self.0.node.as_ref()
    }

    pub(crate) fn ptr(&self) -> *const Inner {
        Rc::as_ptr(&self.0)
    }

    /// Scans the buffer for NaN/Inf.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        check_finite(context, &self.data())
    }

    pub(crate) fn expect_shape(&self, expected: &[usize], what: &str) -> Result<()> {
        if self.shape() != expected {
            return Err(Error::shape(format!(
                "{what}: expected shape {expected:?}, got {:?}",
                self.shape()
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::shape(format!(
                "{what}: expected rank {rank}, got shape {:?}",
                self.shape()
            )));
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.data();
        let preview: Vec<f64> = d.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("track_grad", &self.tracks_grad())
            .field("op", &self.op_name())
            .field("head", &preview)
            .finish()
    }
}

/// Row-major strides for `shape`.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_rejects_bad_input() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
        assert!(matches!(
            Tensor::new(&[2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(Tensor::new(&[1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn scalar_has_one_element() {
        let s = Tensor::scalar(2.5);
        assert_eq!(s.numel(), 1);
        assert_eq!(s.item(), 2.5);
    }

    #[test]
    fn no_grad_suppresses_recording() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = no_grad(|| x.scale(2.0));
        assert!(!y.tracks_grad());
        assert!(grad_enabled());
        let z = x.scale(2.0);
        assert!(z.tracks_grad());
        assert_eq!(z.op_name(), Some("scale"));
    }

    #[test]
    fn strides_row_major() {
        assert_eq!(strides_of(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides_of(&[]), Vec::<usize>::new());
    }
}
