//! Reverse-mode differentiation over a linear tape.
//!
//! Operations are methods on [`Graph`]. Every op computes its value eagerly;
//! when the graph is recording and at least one input is tracked, the op also
//! pushes a node holding a backward closure. Nodes are appended in execution
//! order, so the tape is topologically sorted by construction and the backward
//! sweep is a single reverse scan.

use std::cell::{Cell, RefCell};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::tensor::Tensor;

pub type NodeId = usize;

/// Vector-Jacobian product of one op. Receives the gradient of the op output
/// and a mask of which inputs need a gradient; returns one entry per input.
pub type Backward<T> = Box<dyn FnOnce(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>> + Send>;

struct Node<T> {
    op: &'static str,
    parents: Vec<Option<NodeId>>,
    backward: Option<Backward<T>>,
}

/// A value flowing through a graph, optionally attached to a tape node.
#[derive(Clone, Debug)]
pub struct Var<T> {
    value: Tensor<T>,
    node: Option<NodeId>,
}

impl<T: Float> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn into_value(self) -> Tensor<T> {
        self.value
    }
}

/// Gradients produced by one backward sweep, indexed by tape node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        var.node.and_then(|id| self.grads.get(id)).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of its shape when nothing flowed into it.
    pub fn get_or_zeros(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    pub fn take(&mut self, var: &Var<T>) -> Option<Tensor<T>> {
        var.node.and_then(|id| self.grads.get_mut(id)).and_then(|g| g.take())
    }
}

/// The tape. Single-writer: one forward/backward pass owns it at a time.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
    check_finite: bool,
    consumed: Cell<bool>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    /// A recording graph.
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::new()), recording: true, check_finite: false, consumed: Cell::new(false) }
    }

    /// A graph that never records; every value is a constant.
    pub fn inference() -> Self {
        Graph { recording: false, ..Self::new() }
    }

    /// Fail any op whose output contains NaN or infinity, naming the op.
    pub fn with_finite_checks(mut self) -> Self {
        self.check_finite = true;
        self
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Op names in tape order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.borrow().iter().map(|n| n.op).collect()
    }

    /// Drop every recorded node so the graph can be reused.
    pub fn reset(&self) {
        self.nodes.borrow_mut().clear();
        self.consumed.set(false);
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var { value, node: None }
    }

    /// A leaf. It is tracked only if `requires_grad` and the graph records.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<T> {
        if !(requires_grad && self.recording) {
            return Var { value, node: None };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op: "leaf", parents: Vec::new(), backward: None });
        Var { value, node: Some(nodes.len() - 1) }
    }

    pub fn param(&self, value: Tensor<T>) -> Var<T> {
        self.leaf(value, true)
    }

    /// Register the result of a differentiable op.
    pub fn apply<F>(&self, op: &'static str, inputs: &[&Var<T>], value: Tensor<T>, backward: F) -> Result<Var<T>>
    where
        F: FnOnce(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>> + Send + 'static,
    {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        if !self.recording || inputs.iter().all(|v| v.node.is_none()) {
            return Ok(Var { value, node: None });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, parents: inputs.iter().map(|v| v.node).collect(), backward: Some(Box::new(backward)) });
        Ok(Var { value, node: Some(nodes.len() - 1) })
    }

    /// Reverse sweep from a scalar `loss`. Consumes the recorded closures;
    /// call [`Graph::reset`] before recording again.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value.numel() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", loss.shape())));
        }
        if self.consumed.get() {
            return Err(Error::Contract("tape already consumed by a previous backward".into()));
        }
        let n = self.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        let Some(root) = loss.node else {
            return Ok(Gradients { grads });
        };
        if root >= n {
            return Err(Error::Contract("loss is not on this tape".into()));
        }
        self.consumed.set(true);
        grads[root] = Some(Tensor::full(loss.shape(), T::one()));

        let mut nodes = self.nodes.borrow_mut();
        for id in (0..=root).rev() {
            let node = &mut nodes[id];
            let Some(backward) = node.backward.take() else {
                continue;
            };
            let Some(grad_out) = grads[id].clone() else {
                continue;
            };
            let needs: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
            let input_grads = backward(&grad_out, &needs)?;
            debug_assert_eq!(input_grads.len(), node.parents.len(), "{} backward arity", node.op);
            for (parent, g) in node.parents.iter().zip(input_grads) {
                if let (Some(p), Some(g)) = (parent, g) {
                    match &mut grads[*p] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            // Interior gradients are no longer needed once propagated.
            if !node.parents.is_empty() {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inference_graph_records_nothing() {
        let g = Graph::<f64>::inference();
        let x = g.param(Tensor::ones(&[3]));
        let y = g.mul(&x, &x).unwrap();
        assert!(!y.requires_grad());
        assert!(g.is_empty());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64(&[2, 2], &[1.0, -2.0, 3.0, 0.5]).unwrap());
        let loss = g.sum(&x).unwrap();
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn square_gradient_is_two_x() {
        let g = Graph::<f64>::new();
        let vals = [1.0, -2.0, 3.0, 0.5];
        let x = g.param(Tensor::from_f64(&[4], &vals).unwrap());
        let sq = g.mul(&x, &x).unwrap();
        let loss = g.sum(&sq).unwrap();
        let grads = g.backward(&loss).unwrap();
        let expect: Vec<f64> = vals.iter().map(|v| 2.0 * v).collect();
        assert_eq!(grads.get(&x).unwrap().data(), expect.as_slice());
    }

    #[test]
    fn fan_out_accumulates() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let a = g.scale(&x, 3.0).unwrap();
        let b = g.add(&a, &x).unwrap();
        let loss = g.sum(&b).unwrap();
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[4.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[2]));
        assert!(matches!(g.backward(&x), Err(Error::Contract(_))));
    }

    #[test]
    fn tape_is_consumed() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[2]));
        let loss = g.sum(&x).unwrap();
        g.backward(&loss).unwrap();
        assert!(g.backward(&loss).is_err());
        g.reset();
        assert!(g.is_empty());
    }

    #[test]
    fn tape_is_topologically_ordered() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[2]));
        let y = g.scale(&x, 2.0).unwrap();
        let z = g.mul(&y, &x).unwrap();
        let nodes = g.nodes.borrow();
        for (id, node) in nodes.iter().enumerate() {
            assert!(node.parents.iter().flatten().all(|&p| p < id));
        }
        assert_eq!(z.node(), Some(nodes.len() - 1));
    }

    #[test]
    fn finite_checks_name_the_op() {
        let g = Graph::<f64>::new().with_finite_checks();
        let x = g.param(Tensor::from_f64(&[1], &[f64::MAX]).unwrap());
        let err = g.mul(&x, &x).unwrap_err();
        assert_eq!(err, Error::NonFinite { op: "mul" });
    }
}
