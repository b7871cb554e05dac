//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! Every op that has at least one gradient-tracking input records a
//! [`GradFn`] on its output. [`Tensor::backward`] walks that graph once in
//! reverse topological order and accumulates gradients into the leaves.
//! Graphs are built per forward pass; parameters are long-lived leaves whose
//! data the optimizer mutates in place between passes.

mod conv;
mod element;
mod elementwise;
pub mod gradcheck;
mod io;
mod loss;
mod matmul;
mod norm;
mod pool;
mod shape_ops;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

pub use conv::{conv2d, conv2d_output_size, Conv2dOptions};
pub use element::{gemm, Element};
pub use io::{read_tensor_table, write_tensor_table, NamedArray, TENSOR_MAGIC};
pub use loss::{cross_entropy, log_softmax, softmax};
pub use matmul::{matmul, transpose2d};
pub use norm::{batch_norm2d, BatchNormMode, RunningStats};
pub use pool::{global_avg_pool2d, pool2d, pool_output_size, PoolKind};
pub use shape_ops::{concat, narrow, split, split_sizes};

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward called on a tensor that is not part of a gradient graph")]
    Detached,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("tensor table: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        msg: msg.into(),
    }
}

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording gradient functions.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Inputs handed to a backward rule.
pub(crate) struct BackwardArgs<'a, T: Element> {
    pub inputs: &'a [Tensor<T>],
    pub output: &'a [T],
    pub grad: &'a [T],
}

type BackwardRule<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>>>;

pub(crate) struct GradFn<T: Element> {
    name: &'static str,
    inputs: Vec<Tensor<T>>,
    rule: BackwardRule<T>,
}

struct Node<T: Element> {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

pub struct Tensor<T: Element = f32> {
    node: Rc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.node.grad_fn.as_ref().map(|g| g.name).unwrap_or("leaf");
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("dtype", &T::NAME)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &op)
            .finish()
    }
}

/// Counters gathered during one backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardStats {
    pub nodes_visited: usize,
    pub leaves_updated: usize,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn new_node(data: Vec<T>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        Self {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                grad_fn,
            }),
        }
    }

    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(invalid(
                "from_vec",
                format!("{} values cannot fill shape {:?}", data.len(), shape),
            ));
        }
        Ok(Self::new_node(data, shape.to_vec(), false, None))
    }

    /// Gradient-tracking leaf.
    pub fn parameter(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(invalid(
                "parameter",
                format!("{} values cannot fill shape {:?}", data.len(), shape),
            ));
        }
        Ok(Self::new_node(data, shape.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new_node(vec![T::zero(); numel(shape)], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::new_node(vec![value; numel(shape)], shape.to_vec(), false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::new_node(vec![value], Vec::new(), false, None)
    }

    /// Result of an op. Records `rule` only if some input tracks gradients
    /// and recording is enabled.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        name: &'static str,
        inputs: Vec<Tensor<T>>,
        rule: impl Fn(&BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if track {
            let grad_fn = GradFn {
                name,
                inputs,
                rule: Box::new(rule),
            };
            Self::new_node(data, shape, true, Some(grad_fn))
        } else {
            Self::new_node(data, shape, false, None)
        }
    }

    pub fn id(&self) -> usize {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.node.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.node.grad_fn.as_ref().map(|g| g.name)
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    /// Mutable access to the values. Only meaningful for leaves: mutating an
    /// interior node's data invalidates the graph that saved it.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.node.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let d = self.node.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.node.shape);
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<T>>> {
        self.node.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Copy of the values cut from the graph.
    pub fn detach(&self) -> Self {
        Self::new_node(self.to_vec(), self.node.shape.clone(), false, None)
    }

    fn accumulate_grad(&self, g: Vec<T>) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g),
        }
    }

    /// Back-propagates from this scalar into every gradient-tracking leaf.
    ///
    /// Leaf gradients accumulate across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<BackwardStats> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Err(TensorError::Detached);
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        let mut stats = BackwardStats {
            nodes_visited: 0,
            leaves_updated: 0,
        };
        for t in order.iter().rev() {
            stats.nodes_visited += 1;
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            let Some(gf) = t.node.grad_fn.as_ref() else {
                t.accumulate_grad(g);
                stats.leaves_updated += 1;
                continue;
            };
            let input_grads = {
                let out = t.node.data.borrow();
                (gf.rule)(&BackwardArgs {
                    inputs: &gf.inputs,
                    output: &out,
                    grad: &g,
                })
            };
            debug_assert_eq!(input_grads.len(), gf.inputs.len(), "{}", gf.name);
            for (inp, ig) in gf.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !inp.requires_grad() {
                    continue;
                }
                debug_assert_eq!(ig.len(), inp.numel(), "{} grad size", gf.name);
                match pending.get_mut(&inp.id()) {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(ig) {
                            *a += b;
                        }
                    }
                    None => {
                        pending.insert(inp.id(), ig);
                    }
                }
            }
        }
        Ok(stats)
    }

    /// Nodes reachable through gradient-tracking edges, parents before children.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = t.node.grad_fn.as_ref() {
                for inp in gf.inputs.iter().rev() {
                    if inp.requires_grad() && !seen.contains(&inp.id()) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Number of distinct gradient-tracking nodes reachable from this tensor.
    pub fn graph_size(&self) -> usize {
        self.topo_order().len()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Self::from_op(
            self.to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            |a| vec![Some(a.grad.to_vec())],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar_and_detached_roots() {
        let x = Tensor::<f64>::parameter(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(x.relu().backward(), Err(TensorError::NonScalarRoot(_))));
        let c = Tensor::<f64>::scalar(1.0);
        assert!(matches!(c.backward(), Err(TensorError::Detached)));
    }

    #[test]
    fn diamond_graph_visits_each_node_once() {
        // x -> a = relu(x), b = exp(x) -> c = a * b -> sum
        let x = Tensor::<f64>::parameter(vec![0.5, 1.5], &[2]).unwrap();
        let a = x.relu();
        let b = x.exp();
        let loss = a.mul(&b).unwrap().sum();
        let nodes = loss.graph_size();
        assert_eq!(nodes, 5);
        let stats = loss.backward().unwrap();
        assert_eq!(stats.nodes_visited, nodes);
        assert_eq!(stats.leaves_updated, 1);
        let g = x.grad().unwrap();
        for (gv, xv) in g.iter().zip([0.5f64, 1.5]) {
            assert!((gv - (xv.exp() + xv * xv.exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::<f64>::parameter(vec![1.0], &[1]).unwrap();
        let y = no_grad(|| x.exp());
        assert!(!y.requires_grad());
        assert!(x.exp().requires_grad());
    }
}
