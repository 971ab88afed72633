//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] owns an arena of nodes; [`GradNode`] is a cheap handle into
//! it. Forward ops append nodes together with a backward closure; calling
//! [`GradNode::backward`] on a scalar root walks the arena once in reverse
//! topological order and accumulates `d(root)/d(leaf)` into every leaf
//! created with `requires_grad = true`.
//!
//! Graphs are single-threaded by design (one graph per training step);
//! tensors themselves are immutable and freely shared.
//!
//! Repeated `backward` calls accumulate into the persistent leaf gradients;
//! call [`GradNode::zero_grad`] between steps when accumulation is not
//! wanted.

mod ops;

pub use ops::Padding;

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradient contributions for each parent, in parent order. `None` for
/// parents whose subgraph needs no gradient.
type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    /// Leaf flag: accumulate d(root)/d(this) persistently.
    requires_grad: bool,
    /// True when this node or any ancestor requires a gradient, i.e. the
    /// backward pass must flow through it.
    needs_grad: bool,
    /// Persistent accumulator, allocated on first backward pass.
    grad: Option<Vec<f64>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
struct GraphInner {
    nodes: RefCell<Vec<Node>>,
}

/// A single-threaded autodiff arena. Clones share the same arena.
#[derive(Clone, Default)]
pub struct Graph {
    inner: Rc<GraphInner>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    /// Insert a node that never receives a gradient (inputs, targets,
    /// frozen weights).
    pub fn constant(&self, value: Tensor) -> GradNode {
        self.push(value, false)
    }

    /// Insert a trainable leaf; `backward` accumulates into its grad.
    pub fn parameter(&self, value: Tensor) -> GradNode {
        self.push(value, true)
    }

    pub fn node_count(&self) -> usize {
        self.inner.nodes.borrow().len()
    }

    fn push(&self, value: Tensor, requires_grad: bool) -> GradNode {
        let mut nodes = self.inner.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            needs_grad: requires_grad,
            grad: None,
            parents: Vec::new(),
            backward: None,
        });
        GradNode {
            graph: self.clone(),
            id: nodes.len() - 1,
        }
    }

    /// Append an interior op node. The backward closure is retained only if
    /// some ancestor needs a gradient.
    pub(crate) fn push_op(
        &self,
        value: Tensor,
        parents: Vec<usize>,
        backward: BackwardFn,
    ) -> GradNode {
        let mut nodes = self.inner.nodes.borrow_mut();
        let needs_grad = parents.iter().any(|&p| nodes[p].needs_grad);
        nodes.push(Node {
            value,
            requires_grad: false,
            needs_grad,
            grad: None,
            parents,
            backward: needs_grad.then_some(backward),
        });
        GradNode {
            graph: self.clone(),
            id: nodes.len() - 1,
        }
    }

    fn same_graph(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Handle to one node of a [`Graph`].
#[derive(Clone)]
pub struct GradNode {
    graph: Graph,
    id: usize,
}

impl std::fmt::Debug for GradNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GradNode")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl GradNode {
    pub fn value(&self) -> Tensor {
        self.graph.inner.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.nodes.borrow()[self.id]
            .value
            .shape()
            .to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient of a `requires_grad` leaf; zeros before the
    /// first backward pass, `None` for non-leaf or frozen nodes.
    pub fn grad(&self) -> Option<Tensor> {
        let nodes = self.graph.inner.nodes.borrow();
        let node = &nodes[self.id];
        if !node.requires_grad {
            return None;
        }
        Some(match &node.grad {
            Some(g) => Tensor::from_op(node.value.shape().to_vec(), g.clone()),
            None => Tensor::zeros(node.value.shape()),
        })
    }

    pub fn zero_grad(&self) {
        let mut nodes = self.graph.inner.nodes.borrow_mut();
        nodes[self.id].grad = None;
    }

    /// Reverse-mode sweep from a scalar root. Every node reachable through
    /// gradient-needing edges is visited exactly once, in reverse
    /// topological order.
    pub fn backward(&self) -> Result<()> {
        {
            let nodes = self.graph.inner.nodes.borrow();
            if !nodes[self.id].value.is_scalar() {
                return Err(Error::Contract(format!(
                    "backward requires a scalar root, got shape {:?}",
                    nodes[self.id].value.shape()
                )));
            }
        }

        let order = self.topo_order();
        let mut nodes = self.graph.inner.nodes.borrow_mut();
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        pending[self.id] = Some(vec![1.0]);

        for &id in order.iter().rev() {
            let Some(grad_data) = pending[id].take() else {
                continue;
            };
            if nodes[id].requires_grad {
                let acc = nodes[id]
                    .grad
                    .get_or_insert_with(|| vec![0.0; grad_data.len()]);
                for (a, g) in acc.iter_mut().zip(&grad_data) {
                    *a += g;
                }
            }
            let Some(backward) = nodes[id].backward.as_ref() else {
                continue;
            };
            let parents = nodes[id].parents.clone();
            let need: Vec<bool> = parents.iter().map(|&p| nodes[p].needs_grad).collect();
            let grad = Tensor::from_op(nodes[id].value.shape().to_vec(), grad_data);
            let contributions = backward(&grad, &need);
            debug_assert_eq!(contributions.len(), parents.len());
            for (&parent, contribution) in parents.iter().zip(contributions) {
                let Some(c) = contribution else { continue };
                debug_assert_eq!(c.shape(), nodes[parent].value.shape());
                match &mut pending[parent] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(c.data()) {
                            *a += v;
                        }
                    }
                    slot => *slot = Some(c.data().to_vec()),
                }
            }
        }
        Ok(())
    }

    /// Post-order over the ancestors of `self` (parents before children).
    fn topo_order(&self) -> Vec<usize> {
        let nodes = self.graph.inner.nodes.borrow();
        let mut order = Vec::new();
        let mut visited = vec![false; nodes.len()];
        let mut stack = vec![(self.id, false)];
        while let Some((id, expanded)) = stack.pop() {
            if expanded {
                order.push(id);
                continue;
            }
            if visited[id] {
                continue;
            }
            visited[id] = true;
            stack.push((id, true));
            for &p in &nodes[id].parents {
                if !visited[p] && nodes[p].needs_grad {
                    stack.push((p, false));
                }
            }
        }
        order
    }

    pub(crate) fn same_graph(&self, other: &GradNode) -> Result<()> {
        if self.graph.same_graph(&other.graph) {
            Ok(())
        } else {
            Err(Error::Contract(
                "operands belong to different graphs".into(),
            ))
        }
    }

    pub(crate) fn graph(&self) -> &Graph {
        &self.graph
    }

    pub(crate) fn id(&self) -> usize {
        self.id
    }
}
