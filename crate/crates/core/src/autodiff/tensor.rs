use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct TensorData {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub requires_grad: bool,
}

/// n-dimensional real array with a same-shape gradient accumulator.
///
/// `Tensor` is a cheap handle (`Rc`) onto shared storage: cloning a tensor
/// clones the handle, not the data. Gradients start at zero and are only
/// written by [`Graph::backward`](super::Graph::backward) and explicit
/// [`zero_grad`](Tensor::zero_grad).
#[derive(Clone)]
pub struct Tensor {
    id: u64,
    pub(crate) data: Rc<RefCell<TensorData>>,
}

impl Tensor {
    fn build(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::contract(format!(
                "tensor shape must be nonempty positive dims, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![values.len()],
            });
        }
        let grad = vec![0.0; numel];
        Ok(Tensor {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            data: Rc::new(RefCell::new(TensorData {
                shape,
                values,
                grad,
                requires_grad,
            })),
        })
    }

    /// Constant (non-trainable) tensor from row-major values.
    pub fn constant(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        Self::build(shape.to_vec(), values, false)
    }

    /// Trainable parameter from row-major values.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        Self::build(shape.to_vec(), values, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::build(shape.to_vec(), vec![0.0; numel], false).expect("positive shape")
    }

    pub fn scalar(v: f64) -> Self {
        Self::build(vec![1], vec![v], false).expect("scalar shape")
    }

    pub(crate) fn output(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Self {
        Self::build(shape, values, requires_grad).expect("op output shape")
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.data.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.data.borrow().values.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.data.borrow().requires_grad
    }

    /// Row-major copy of the values.
    pub fn values(&self) -> Vec<f64> {
        self.data.borrow().values.clone()
    }

    /// Row-major copy of the gradient accumulator.
    pub fn grad(&self) -> Vec<f64> {
        self.data.borrow().grad.clone()
    }

    /// The single value of a scalar tensor. Panics on non-scalars.
    pub fn item(&self) -> f64 {
        let d = self.data.borrow();
        assert!(d.values.len() == 1, "item() on tensor of shape {:?}", d.shape);
        d.values[0]
    }

    pub fn value_at(&self, index: usize) -> f64 {
        self.data.borrow().values[index]
    }

    /// Overwrite values in place (optimizer updates, finite-difference probes).
    pub fn set_values(&self, values: &[f64]) {
        let mut d = self.data.borrow_mut();
        assert_eq!(d.values.len(), values.len(), "set_values length");
        d.values.copy_from_slice(values);
    }

    pub fn nudge_value(&self, index: usize, delta: f64) {
        self.data.borrow_mut().values[index] += delta;
    }

    pub fn zero_grad(&self) {
        for g in self.data.borrow_mut().grad.iter_mut() {
            *g = 0.0;
        }
    }

    pub(crate) fn add_to_grad(&self, contribution: &[f64]) {
        let mut d = self.data.borrow_mut();
        debug_assert_eq!(d.grad.len(), contribution.len());
        for (g, c) in d.grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.data.borrow();
        f.debug_struct("Tensor")
            .field("shape", &d.shape)
            .field("requires_grad", &d.requires_grad)
            .field("values", &d.values)
            .finish()
    }
}

/// Zero the gradient accumulators of every tensor in `params`.
pub fn zero_grads(params: &[Tensor]) {
    for p in params {
        p.zero_grad();
    }
}
