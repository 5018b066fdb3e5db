//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles. Nodes are
//! appended in evaluation order, so walking the tape backwards visits them in a
//! valid reverse topological order.
//!
//! ```
//! use lite_vsr::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.var(Tensor::from_f64([2], &[-1.0, 2.0]).unwrap());
//! let loss = x.relu().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap(), &[0.0, 1.0]);
//! ```

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Identifier of a trainable tensor inside a model's registry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

type BackwardFn<T> = Box<dyn Fn(&[T], &mut GradSink<T>) -> Result<()>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
    param: Option<ParamId>,
}

/// Records a differentiable computation.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Receives gradient contributions for the parents of a node.
pub struct GradSink<T> {
    grads: Vec<Option<Vec<T>>>,
    requires: Vec<bool>,
}

impl<T: Scalar> GradSink<T> {
    pub(crate) fn needs(&self, id: usize) -> bool {
        self.requires[id]
    }

    pub(crate) fn add(&mut self, id: usize, delta: &[T]) {
        if !self.requires[id] {
            return;
        }
        match &mut self.grads[id] {
            Some(g) => g.iter_mut().zip(delta).for_each(|(g, &d)| *g += d),
            slot @ None => *slot = Some(delta.to_vec()),
        }
    }

    pub(crate) fn add_owned(&mut self, id: usize, delta: Vec<T>) {
        if !self.requires[id] {
            return;
        }
        match &mut self.grads[id] {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(g, &d)| *g += d),
            slot @ None => *slot = Some(delta),
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: BTreeMap<ParamId, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to a recorded variable.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Gradient for a parameter, summed over every place it was used.
    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf whose gradient is tracked if the tensor's `requires_grad` flag is set.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        let requires_grad = value.requires_grad();
        self.push_node(Node {
            value: Rc::new(value),
            requires_grad,
            backward: None,
            param: None,
        })
    }

    /// A leaf that always tracks gradients.
    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value.with_requires_grad(true))
    }

    /// A leaf that never tracks gradients.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value.with_requires_grad(false))
    }

    /// Leaf bound to a model parameter; its gradient is reported under `id`.
    pub fn param(&self, id: ParamId, value: &Tensor<T>) -> Var<'_, T> {
        let mut value = value.clone();
        value.clear_grad();
        let requires_grad = value.requires_grad();
        self.push_node(Node {
            value: Rc::new(value),
            requires_grad,
            backward: None,
            param: requires_grad.then_some(id),
        })
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Appends the result of an operation over `parents`.
    pub(crate) fn record(
        &self,
        value: Tensor<T>,
        parents: &[usize],
        backward: impl Fn(&[T], &mut GradSink<T>) -> Result<()> + 'static,
    ) -> Var<'_, T> {
        let requires_grad = parents.iter().any(|&p| self.requires_grad_of(p));
        self.push_node(Node {
            value: Rc::new(value),
            requires_grad,
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn<T>),
            param: None,
        })
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if loss_node.value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut sink = GradSink {
            grads: (0..nodes.len()).map(|_| None).collect(),
            requires: nodes.iter().map(|n| n.requires_grad).collect(),
        };
        sink.add(loss.id, &[T::one()]);
        for id in (0..=loss.id).rev() {
            let Some(backward) = nodes[id].backward.as_ref() else {
                continue;
            };
            // Interior gradients are released once propagated; leaves keep theirs.
            let Some(grad) = sink.grads[id].take() else {
                continue;
            };
            backward(&grad, &mut sink)?;
        }
        let mut params: BTreeMap<ParamId, Vec<T>> = BTreeMap::new();
        for (node, grad) in nodes.iter().zip(sink.grads.iter()) {
            if let (Some(pid), Some(g)) = (node.param, grad) {
                match params.get_mut(&pid) {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                    None => {
                        params.insert(pid, g.clone());
                    }
                }
            }
        }
        Ok(Gradients {
            grads: sink.grads,
            params,
        })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub(crate) fn same_tape(&self, other: &Var<'_, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::invalid("variables belong to different tapes"))
        }
    }
}
