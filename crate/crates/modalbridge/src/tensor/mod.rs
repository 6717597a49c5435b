//! Dense f32 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap-to-clone handle to row-major f32 storage. All
//! differentiable operations live on [`GradGraph`], a tape that records the
//! executed operations in topological order and replays them in reverse for
//! [`GradGraph::backward`]. Tensors and graphs are deliberately `!Send`:
//! a graph and everything attached to it stays on the thread that built it.

mod graph;
mod init;
mod ops;
mod optim;

pub use graph::GradGraph;
pub use init::{kaiming_normal, zeros_init};
pub use optim::Sgd;

use crate::error::{Error, Result};
use std::cell::{Ref, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a tensor's storage, used to key gradients and momentum buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(u64);

struct TensorInner {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
    /// True when this tensor was produced by a recorded operation (i.e. it is
    /// an intermediate of the current graph rather than a leaf).
    from_op: bool,
}

/// An n-dimensional row-major array of f32 values.
///
/// Cloning a `Tensor` clones the handle, not the storage; two clones share
/// data and gradient. This is what lets networks hand parameter handles to
/// both the graph and the optimizer.
#[derive(Clone)]
pub struct Tensor {
    id: TensorId,
    inner: Rc<RefCell<TensorInner>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        write!(
            f,
            "Tensor(id={:?}, shape={:?}, requires_grad={})",
            self.id.0, inner.shape, inner.requires_grad
        )
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_inner(inner: TensorInner) -> Self {
        Tensor {
            id: TensorId(NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed)),
            inner: Rc::new(RefCell::new(inner)),
        }
    }

    /// Build a tensor from explicit shape and data.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("from_vec", format!("zero-sized dimension in {shape:?}")));
        }
        if numel_of(&shape) != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} implies {} values, got {}", shape, numel_of(&shape), data.len()),
            ));
        }
        Ok(Tensor::from_inner(TensorInner {
            shape,
            data,
            grad: None,
            requires_grad: false,
            from_op: false,
        }))
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel_of(&shape);
        Tensor::from_inner(TensorInner {
            shape,
            data: vec![0.0; n],
            grad: None,
            requires_grad: false,
            from_op: false,
        })
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Self {
        let n = numel_of(&shape);
        Tensor::from_inner(TensorInner {
            shape,
            data: vec![value; n],
            grad: None,
            requires_grad: false,
            from_op: false,
        })
    }

    /// A scalar, represented throughout the crate as shape `[1]`.
    pub fn scalar(value: f32) -> Self {
        Tensor::from_inner(TensorInner {
            shape: vec![1],
            data: vec![value],
            grad: None,
            requires_grad: false,
            from_op: false,
        })
    }

    /// A trainable leaf tensor.
    pub fn param(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let t = Tensor::from_vec(shape, data)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub(crate) fn from_op_output(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite op output");
        Tensor::from_inner(TensorInner {
            shape,
            data,
            grad: None,
            requires_grad,
            from_op: requires_grad,
        })
    }

    pub fn id(&self) -> TensorId {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    /// Borrow the underlying values.
    pub fn data(&self) -> Ref<'_, [f32]> {
        Ref::map(self.inner.borrow(), |i| i.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.borrow().data.clone()
    }

    /// The single value of a shape-`[1]` tensor.
    pub fn item(&self) -> f32 {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() on non-scalar tensor");
        inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, requires: bool) {
        let mut inner = self.inner.borrow_mut();
        inner.requires_grad = requires;
        if !requires {
            inner.grad = None;
        }
    }

    pub(crate) fn is_from_op(&self) -> bool {
        self.inner.borrow().from_op
    }

    /// Current gradient, if populated by a backward pass.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.borrow().grad.clone()
    }

    /// Drop the accumulated gradient. The next backward pass starts fresh.
    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[f32]) {
        let mut inner = self.inner.borrow_mut();
        debug_assert_eq!(inner.data.len(), contribution.len());
        debug_assert!(contribution.iter().all(|v| v.is_finite()), "non-finite gradient");
        match &mut inner.grad {
            Some(grad) => {
                for (g, c) in grad.iter_mut().zip(contribution) {
                    *g += c;
                }
            }
            None => inner.grad = Some(contribution.to_vec()),
        }
    }

    /// Replace the stored values. The shape must stay fixed.
    pub fn set_data(&self, data: Vec<f32>) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if data.len() != inner.data.len() {
            return Err(Error::shape(
                "set_data",
                format!("expected {} values for shape {:?}, got {}", inner.data.len(), inner.shape, data.len()),
            ));
        }
        inner.data = data;
        Ok(())
    }

    /// Apply an in-place update to the stored values (used by optimizers).
    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f32])) {
        f(&mut self.inner.borrow_mut().data);
    }

    /// A detached copy: same values, no gradient tracking, fresh storage.
    pub fn detached(&self) -> Tensor {
        let inner = self.inner.borrow();
        Tensor::from_inner(TensorInner {
            shape: inner.shape.clone(),
            data: inner.data.clone(),
            grad: None,
            requires_grad: false,
            from_op: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_is_shape_one() {
        let s = Tensor::scalar(3.5);
        assert_eq!(s.shape(), vec![1]);
        assert_eq!(s.item(), 3.5);
    }

    #[test]
    fn from_vec_rejects_length_mismatch() {
        let err = Tensor::from_vec(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(err.to_string().contains("from_vec"));
    }

    #[test]
    fn clones_share_storage() {
        let a = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let b = a.clone();
        a.set_data(vec![5.0, 6.0]).unwrap();
        assert_eq!(b.to_vec(), vec![5.0, 6.0]);
        assert_eq!(a.id(), b.id());
    }

    #[test]
    fn grad_accumulates_until_zeroed() {
        let a = Tensor::param(vec![2], vec![0.0, 0.0]).unwrap();
        a.accumulate_grad(&[1.0, 2.0]);
        a.accumulate_grad(&[0.5, 0.5]);
        assert_eq!(a.grad().unwrap(), vec![1.5, 2.5]);
        a.zero_grad();
        assert!(a.grad().is_none());
    }
}
