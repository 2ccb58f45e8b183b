//! Reverse-mode gradient tape.
//!
//! Define-by-run: every differentiable op appends one node holding the ids of
//! its parents and a closure that maps the node's output gradient to parent
//! gradients. `backward` replays the nodes in reverse creation order, which is
//! a valid topological order because an op can only consume tensors that
//! already exist.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

pub(crate) type NodeId = usize;

/// Accumulates gradients per node during the reverse sweep.
pub(crate) struct GradSink {
    slots: Vec<Option<Vec<f64>>>,
}

impl GradSink {
    fn new(n: usize) -> Self {
        GradSink {
            slots: (0..n).map(|_| None).collect(),
        }
    }

    /// Add `grad` into the accumulator for `id`, elementwise.
    pub(crate) fn add(&mut self, id: NodeId, grad: &[f64]) {
        match &mut self.slots[id] {
            Some(acc) => {
                debug_assert_eq!(acc.len(), grad.len());
                for (a, g) in acc.iter_mut().zip(grad) {
                    *a += g;
                }
            }
            None => self.slots[id] = Some(grad.to_vec()),
        }
    }

    /// Like `add` but takes ownership, avoiding a copy when the slot is empty.
    pub(crate) fn add_owned(&mut self, id: NodeId, grad: Vec<f64>) {
        match &mut self.slots[id] {
            Some(acc) => {
                debug_assert_eq!(acc.len(), grad.len());
                for (a, g) in acc.iter_mut().zip(&grad) {
                    *a += g;
                }
            }
            None => self.slots[id] = Some(grad),
        }
    }
}

type BackwardFn = Box<dyn Fn(&[f64], &mut GradSink)>;

struct Node {
    numel: usize,
    backward: Option<BackwardFn>, // None for leaves
}

struct TapeInner {
    nodes: Vec<Node>,
    /// Populated once `backward` has run; the tape is consumed afterwards.
    grads: Option<GradSink>,
}

/// Shared handle to one gradient tape. Clones refer to the same tape.
///
/// A tape is owned by a single logical training thread: it records a forward
/// pass, is consumed by exactly one `backward`, and is then only good for
/// reading gradients.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                grads: None,
            })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn push_leaf(&self, numel: usize) -> NodeId {
        self.push_node(numel, None)
    }

    pub(crate) fn push_op(&self, numel: usize, backward: BackwardFn) -> NodeId {
        self.push_node(numel, Some(backward))
    }

    fn push_node(&self, numel: usize, backward: Option<BackwardFn>) -> NodeId {
        let mut inner = self.inner.borrow_mut();
        assert!(
            inner.grads.is_none(),
            "gradient tape already consumed by backward(); build a fresh tape per forward pass"
        );
        let id = inner.nodes.len();
        inner.nodes.push(Node { numel, backward });
        id
    }

    /// Reverse sweep seeding the scalar at `loss` with 1.0.
    ///
    /// Consumes the tape: recording or calling `backward` again is an error.
    pub(crate) fn run_backward(&self, loss: NodeId, loss_numel: usize) -> Result<()> {
        if loss_numel != 1 {
            return Err(Error::usage(format!(
                "backward() needs a scalar loss, got {loss_numel} elements"
            )));
        }
        let mut inner = self.inner.borrow_mut();
        if inner.grads.is_some() {
            return Err(Error::usage(
                "backward() called twice on the same tape".to_string(),
            ));
        }
        let mut sink = GradSink::new(inner.nodes.len());
        sink.add_owned(loss, vec![1.0]);
        for id in (0..=loss).rev() {
            let grad = sink.slots[id].take();
            let Some(grad) = grad else { continue };
            if let Some(backward) = &inner.nodes[id].backward {
                backward(&grad, &mut sink);
            } else {
                // Leaf: keep the accumulated gradient readable afterwards.
                sink.slots[id] = Some(grad);
            }
        }
        inner.grads = Some(sink);
        Ok(())
    }

    /// Gradient of the node, available after `backward`. Leaves that received
    /// no gradient report zeros of their own size.
    pub(crate) fn grad_of(&self, id: NodeId) -> Option<Vec<f64>> {
        let inner = self.inner.borrow();
        let sink = inner.grads.as_ref()?;
        match &sink.slots[id] {
            Some(g) => Some(g.clone()),
            None => Some(vec![0.0; inner.nodes[id].numel]),
        }
    }
}
