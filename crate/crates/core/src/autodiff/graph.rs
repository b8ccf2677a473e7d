use alloc::rc::Rc;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use super::ops::Op;
use super::{Array, Tensor};

/// Append-only tape of recorded operations. Node ids are tape positions, so
/// every node's inputs precede it.
#[derive(Clone, Default)]
pub struct Graph {
    tape: Rc<RefCell<Tape>>,
}

#[derive(Default)]
struct Tape {
    nodes: Vec<Node>,
    routing: u64,
}

#[derive(Clone)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Input>,
    pub(crate) output: Arc<Array>,
}

/// A recorded operand: its node id when graph-connected, and its value.
#[derive(Clone)]
pub(crate) struct Input {
    pub(crate) id: Option<usize>,
    pub(crate) value: Arc<Array>,
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub(crate) graph: Graph,
    pub(crate) id: usize,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a differentiable leaf.
    pub fn leaf(&self, value: Array) -> Tensor {
        self.leaf_shared(Arc::new(value))
    }

    pub fn leaf_shared(&self, value: Arc<Array>) -> Tensor {
        let id = self.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            output: value.clone(),
        });
        Tensor {
            value,
            node: Some(NodeRef {
                graph: self.clone(),
                id,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hash of every data-dependent routing decision recorded so far (relu
    /// masks, max selections, pooling argmaxes). Two forward passes with the
    /// same signature are on the same linear piece of a piecewise-smooth map.
    pub fn routing_signature(&self) -> u64 {
        self.tape.borrow().routing
    }

    pub(crate) fn same(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.tape, &other.tape)
    }

    pub(crate) fn push(&self, node: Node) -> usize {
        let mut tape = self.tape.borrow_mut();
        tape.nodes.push(node);
        tape.nodes.len() - 1
    }

    pub(crate) fn node(&self, id: usize) -> Node {
        self.tape.borrow().nodes[id].clone()
    }

    pub(crate) fn mix_routing(&self, bits: impl IntoIterator<Item = u64>) {
        let mut tape = self.tape.borrow_mut();
        let mut h = tape.routing;
        for b in bits {
            // FNV-1a over 64-bit words
            h ^= b;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        tape.routing = h;
    }

    fn input_ids(&self, id: usize) -> Vec<Option<usize>> {
        self.tape.borrow().nodes[id]
            .inputs
            .iter()
            .map(|i| i.id)
            .collect()
    }
}

/// What to differentiate, with respect to what, and whether the resulting
/// gradients should themselves be differentiable.
pub struct GradRequest<'a> {
    pub root: &'a Tensor,
    pub targets: &'a [&'a Tensor],
    pub create_graph: bool,
}

/// Reverse-mode gradients of a scalar root, one per target in request order.
///
/// Targets outside the root's graph get a zero gradient of their own shape.
/// With `create_graph` every returned gradient is a node of the root's graph
/// and can be differentiated again; otherwise results are detached.
///
/// Panics if the root is not a scalar.
pub fn backward(req: GradRequest<'_>) -> Vec<Tensor> {
    let GradRequest {
        root,
        targets,
        create_graph,
    } = req;
    assert!(
        root.value().is_scalar(),
        "backward root must have shape [] or [1], got {:?}",
        root.shape()
    );
    let zeros = |t: &Tensor| Tensor::constant(Array::zeros(t.shape()));

    let Some(root_ref) = root.node.as_ref() else {
        return targets.iter().map(|t| zeros(t)).collect();
    };
    let graph = &root_ref.graph;
    let root_id = root_ref.id;

    let target_ids: Vec<Option<usize>> = targets
        .iter()
        .map(|t| match &t.node {
            Some(n) if n.graph.same(graph) && n.id <= root_id => Some(n.id),
            _ => None,
        })
        .collect();
    let Some(first) = target_ids.iter().flatten().min().copied() else {
        return targets.iter().map(|t| zeros(t)).collect();
    };

    // Only nodes that depend on some target need a gradient.
    let mut needed = vec![false; root_id + 1];
    for id in target_ids.iter().flatten() {
        needed[*id] = true;
    }
    for id in first..=root_id {
        if !needed[id] && graph.input_ids(id).iter().flatten().any(|&j| needed[j]) {
            needed[id] = true;
        }
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; root_id + 1];
    let mut found: Vec<Option<Tensor>> = vec![None; root_id + 1];
    grads[root_id] = Some(Tensor::constant(Array::ones(root.shape())));

    for id in (first..=root_id).rev() {
        let Some(upstream) = grads[id].take() else {
            continue;
        };
        if !needed[id] {
            continue;
        }
        let node = graph.node(id);
        if target_ids.contains(&Some(id)) {
            found[id] = Some(upstream.clone());
        }
        if node.inputs.is_empty() {
            continue;
        }
        let attach = |input: &Input| match (create_graph, input.id) {
            (true, Some(j)) => Tensor {
                value: input.value.clone(),
                node: Some(NodeRef {
                    graph: graph.clone(),
                    id: j,
                }),
            },
            _ => Tensor::constant_shared(input.value.clone()),
        };
        let inputs: Vec<Tensor> = node.inputs.iter().map(attach).collect();
        let output = if create_graph {
            Tensor {
                value: node.output.clone(),
                node: Some(NodeRef {
                    graph: graph.clone(),
                    id,
                }),
            }
        } else {
            Tensor::constant_shared(node.output.clone())
        };
        let upstream = if create_graph {
            upstream
        } else {
            upstream.detach()
        };
        let input_grads = node.op.vjp(&inputs, &output, &upstream);
        for (input, g) in node.inputs.iter().zip(input_grads) {
            let (Some(j), Some(g)) = (input.id, g) else {
                continue;
            };
            if !needed[j] {
                continue;
            }
            grads[j] = Some(match grads[j].take() {
                Some(acc) => acc.add(&g),
                None => g,
            });
        }
    }

    targets
        .iter()
        .zip(&target_ids)
        .map(|(t, id)| {
            let g = id.and_then(|id| found[id].clone()).unwrap_or_else(|| zeros(t));
            if create_graph && g.node.is_none() {
                graph.leaf_shared(g.value)
            } else {
                g
            }
        })
        .collect()
}

/// Shorthand for [`backward`].
pub fn grad(root: &Tensor, targets: &[&Tensor], create_graph: bool) -> Vec<Tensor> {
    backward(GradRequest {
        root,
        targets,
        create_graph,
    })
}
