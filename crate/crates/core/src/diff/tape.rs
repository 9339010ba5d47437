//! Dynamic (define-by-run) reverse-mode differentiation tape.
//!
//! Every forward op pushes a node holding its output value and a backward
//! rule. `backward` walks the nodes in reverse creation order — which is a
//! reverse topological order, since an op can only consume already-created
//! nodes — and accumulates gradients additively into the leaves.
//!
//! A fresh tape is built per training step; tapes are single-threaded.
//! Independent steps may run concurrently on disjoint tapes.

use std::cell::{Ref, RefCell};

use crate::diff::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

pub type BackFn<T> = Box<dyn Fn(&Tape<T>, &Tensor<T>, &mut GradSink<'_, T>)>;

struct Node<T: Scalar> {
    value: Tensor<T>,
    back: Option<BackFn<T>>,
    needs_grad: bool,
}

/// Gradient accumulator passed to backward rules.
pub struct GradSink<'a, T: Scalar> {
    slots: &'a mut Vec<Option<Tensor<T>>>,
    wanted: &'a [bool],
}

impl<T: Scalar> GradSink<'_, T> {
    /// True when `v` (or one of its ancestors) requires a gradient, i.e.
    /// a contribution for it will actually be used.
    pub fn wants(&self, v: Var) -> bool {
        self.wanted[v.0]
    }

    /// Accumulate a gradient contribution for `v`.
    pub fn add(&mut self, v: Var, g: Tensor<T>) {
        if !self.wanted[v.0] {
            return;
        }
        match &mut self.slots[v.0] {
            Some(acc) => {
                debug_assert_eq!(acc.shape(), g.shape(), "gradient shape mismatch");
                acc.add_assign(&g);
            }
            slot @ None => *slot = Some(g),
        }
    }
}

pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    leaf_grads: RefCell<Vec<Option<Tensor<T>>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            leaf_grads: RefCell::new(Vec::new()),
        }
    }

    fn push(&self, value: Tensor<T>, back: Option<BackFn<T>>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            back,
            needs_grad,
        });
        self.leaf_grads.borrow_mut().push(None);
        Var(id)
    }

    /// Record a trainable leaf; `backward` accumulates into its gradient.
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push(value, None, true)
    }

    /// Record a constant; no gradient is tracked through it.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, None, false)
    }

    /// Record the output of an op. `back` is invoked during `backward` with
    /// the output gradient; it must push contributions for each parent.
    /// When no parent needs a gradient the rule is dropped entirely.
    pub fn push_op(
        &self,
        value: Tensor<T>,
        parents: &[Var],
        back: impl Fn(&Tape<T>, &Tensor<T>, &mut GradSink<'_, T>) + 'static,
    ) -> Var {
        let needs = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].needs_grad)
        };
        if needs {
            self.push(value, Some(Box::new(back)), true)
        } else {
            self.push(value, None, false)
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn value_clone(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn scalar_value(&self, v: Var) -> T {
        let nodes = self.nodes.borrow();
        debug_assert_eq!(nodes[v.0].value.numel(), 1);
        nodes[v.0].value.data()[0]
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    /// Back-propagate from a scalar loss. Gradients of leaves accumulate
    /// additively across repeated calls; use `reset_grads` between steps.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::InvalidArgument {
                op: "backward",
                msg: format!(
                    "loss must be scalar, got shape {:?}",
                    nodes[loss.0].value.shape()
                ),
            });
        }
        let wanted: Vec<bool> = nodes.iter().map(|n| n.needs_grad).collect();
        let mut slots: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = slots[i].take() else { continue };
            if !wanted[i] {
                continue;
            }
            match &nodes[i].back {
                Some(back) => {
                    let mut sink = GradSink {
                        slots: &mut slots,
                        wanted: &wanted,
                    };
                    back(self, &g, &mut sink);
                }
                None => {
                    // Leaf: fold into the persistent gradient buffer.
                    let mut lg = self.leaf_grads.borrow_mut();
                    match &mut lg[i] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient accumulated on a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.leaf_grads.borrow()[v.0].clone()
    }

    pub fn reset_grads(&self) {
        for g in self.leaf_grads.borrow_mut().iter_mut() {
            *g = None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[3]));
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn constants_collect_no_gradient() {
        let tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(2.0));
        tape.backward(c).unwrap();
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn leaf_gradient_accumulates_across_calls() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::scalar(5.0));
        tape.backward(a).unwrap();
        tape.backward(a).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[2.0]);
        tape.reset_grads();
        assert!(tape.grad(a).is_none());
    }
}
