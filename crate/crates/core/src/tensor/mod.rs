//! Minimal reverse-mode differentiable tensor engine.
//!
//! Tensors are dense n-dimensional arrays in row-major layout. Ops record a
//! backward closure onto the output tensor; calling [`Tensor::backward`] on a
//! scalar loss walks the graph in reverse topological order exactly once and
//! accumulates gradients into every tensor with `requires_grad` set.
//!
//! The engine is generic over the element type: training runs in `f32`,
//! gradient checking runs a parallel `f64` path.

pub mod gradcheck;
pub mod ops;

use num_traits::{Float, NumAssign, NumCast};
use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

/// Element type of a tensor. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + NumAssign + NumCast + fmt::Debug + Default + Send + Sync + 'static
{
}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Cast an `f64` constant into the element type.
pub(crate) fn lit<T: Scalar>(x: f64) -> T {
    T::from(x).expect("finite constant convertible to scalar type")
}

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<V> = std::result::Result<V, TensorError>;

type BackwardFn<T> = Box<dyn Fn(&[T])>;

thread_local! {
    static NO_GRAD: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

fn no_grad_active() -> bool {
    NO_GRAD.with(|c| c.get())
}

/// Run `f` with graph recording disabled on this thread. Evaluation forwards
/// under `no_grad` allocate no tape regardless of parameter flags.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = NO_GRAD.with(|c| c.replace(true));
    let out = f();
    NO_GRAD.with(|c| c.set(prev));
    out
}

struct Inner<T: Scalar> {
    id: u64,
    dims: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: std::cell::Cell<bool>,
    /// Parents that require grad; drives the topological walk.
    parents: Vec<Tensor<T>>,
    /// Consumes the output gradient, accumulates into parents.
    backward_fn: Option<BackwardFn<T>>,
}

fn next_id() -> u64 {
    use std::cell::Cell;
    thread_local! {
        static COUNTER: Cell<u64> = const { Cell::new(0) };
    }
    COUNTER.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Dense n-dimensional float array with optional gradient tracking.
pub struct Tensor<T: Scalar> {
    inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dims", &self.inner.dims)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "product(dims) must equal data length"
        );
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                dims,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: std::cell::Cell::new(false),
                parents: Vec::new(),
                backward_fn: None,
            }),
        }
    }

    /// Leaf tensor that accumulates gradients (a trainable parameter).
    pub fn param(dims: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "product(dims) must equal data length"
        );
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                dims,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: std::cell::Cell::new(true),
                parents: Vec::new(),
                backward_fn: None,
            }),
        }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor::new(dims, vec![T::zero(); n])
    }

    pub fn full(dims: Vec<usize>, value: T) -> Self {
        let n = dims.iter().product();
        Tensor::new(dims, vec![value; n])
    }

    /// Non-leaf tensor produced by an op. `requires_grad` is inherited from
    /// the parents; when no parent tracks gradients the graph edge is dropped
    /// so evaluation forwards carry no tape.
    pub(crate) fn from_op<F>(
        dims: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: F,
    ) -> Self
    where
        F: Fn(&[T]) + 'static,
    {
        if no_grad_active() {
            return Tensor::new(dims, data);
        }
        let tracked: Vec<Tensor<T>> = parents
            .into_iter()
            .filter(|p| p.inner.requires_grad.get())
            .collect();
        if tracked.is_empty() {
            return Tensor::new(dims, data);
        }
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                dims,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: std::cell::Cell::new(true),
                parents: tracked,
                backward_fn: Some(Box::new(backward)),
            }),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.inner.dims
    }

    pub fn len(&self) -> usize {
        self.inner.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    /// Toggle gradient tracking on a leaf. Ops consuming a non-tracking leaf
    /// record no tape, so freezing parameters also prunes the graph.
    pub fn set_requires_grad(&self, on: bool) {
        self.inner.requires_grad.set(on);
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.inner.data.borrow_mut()
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        debug_assert_eq!(g.len(), self.len());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Accumulates dLoss/dT into every
    /// tensor reachable through tracked parents.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(TensorError::Usage(format!(
                "backward requires a scalar loss, got dims {:?}",
                self.dims()
            )));
        }
        let order = self.topo_order();
        self.accumulate_grad(&[T::one()]);
        for node in order.iter().rev() {
            if let Some(f) = &node.inner.backward_fn {
                let g = node.inner.grad.borrow().clone().expect(
                    "every non-leaf in reverse topological order has received a gradient",
                );
                f(&g);
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        // Iterative post-order DFS; the graph can be deep.
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.inner.id);
        while let Some((node, child_idx)) = stack.pop() {
            if child_idx < node.inner.parents.len() {
                let parent = node.inner.parents[child_idx].clone();
                stack.push((node, child_idx + 1));
                if visited.insert(parent.inner.id) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }

    /// Detached copy: same dims and data, no graph history, no grad tracking.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::new(self.dims().to_vec(), self.data().clone())
    }
}

impl Tensor<f32> {
    /// Lossless widening for the float64 gradient-check path.
    pub fn to_f64(&self) -> Tensor<f64> {
        let data = self.data().iter().map(|&v| v as f64).collect();
        Tensor::new(self.dims().to_vec(), data)
    }
}
