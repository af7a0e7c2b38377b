//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] either records operations (training, gradient checks) or runs
//! them eagerly without retaining anything (inference). In inference mode
//! intermediate values are freed as soon as the last [`Var`] referencing them
//! is dropped, which keeps large-image forward passes within memory.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::tensor::Tensor;

/// Computes input gradients from the output gradient. The slice flags which
/// inputs need a gradient; entries for the others may be `None`.
pub type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn>,
}

/// A value participating in a computation, optionally tracked on a tape.
#[derive(Clone)]
pub struct Var {
    value: Rc<Tensor>,
    node: Option<usize>,
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shared_value(&self) -> Rc<Tensor> {
        self.value.clone()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        self.value.dims4()
    }

    pub fn item(&self) -> f64 {
        self.value.item()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var {
        Var { value: self.value.clone(), node: None }
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node
    }
}

pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
}

impl Graph {
    /// A graph that records operations for a later [`Graph::backward`].
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), recording: true }
    }

    /// A graph that evaluates eagerly and keeps no tape.
    pub fn inference() -> Self {
        Self { nodes: RefCell::new(Vec::new()), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// A differentiable leaf (parameter or input under test).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.leaf_rc(Rc::new(value))
    }

    pub fn leaf_rc(&self, value: Rc<Tensor>) -> Var {
        if !self.recording {
            return Var { value, node: None };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { inputs: Vec::new(), backward: None });
        Var { value, node: Some(nodes.len() - 1) }
    }

    /// A value that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var {
        Var { value: Rc::new(value), node: None }
    }

    pub fn constant_rc(&self, value: Rc<Tensor>) -> Var {
        Var { value, node: None }
    }

    /// Records a custom operation. `backward` is only invoked when at least
    /// one input is tracked; it is dropped immediately otherwise.
    pub fn custom(&self, inputs: &[&Var], output: Tensor, backward: BackwardFn) -> Var {
        self.custom_shared(inputs, Rc::new(output), backward)
    }

    /// Like [`Graph::custom`] for an output the backward closure also holds.
    pub fn custom_shared(&self, inputs: &[&Var], output: Rc<Tensor>, backward: BackwardFn) -> Var {
        if !self.tracks(inputs) {
            return Var { value: output, node: None };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { inputs: inputs.iter().map(|v| v.node).collect(), backward: Some(backward) });
        Var { value: output, node: Some(nodes.len() - 1) }
    }

    /// Whether any of `inputs` would make a new op tracked. Ops use this to
    /// avoid capturing tensors for backward when no tape is kept.
    pub fn tracks(&self, inputs: &[&Var]) -> bool {
        self.recording && inputs.iter().any(|v| v.node.is_some())
    }

    /// Back-propagates from a scalar `loss`, returning gradients of leaves.
    pub fn backward(&self, loss: &Var) -> Gradients {
        assert_eq!(loss.value.numel(), 1, "backward requires a scalar loss");
        let Some(root) = loss.node else {
            return Gradients { grads: HashMap::new() };
        };
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::full(loss.value.shape(), 1.0));
        let mut leaves = HashMap::new();
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                leaves.insert(id, g);
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&g, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(i), Some(ig)) = (input, ig) else { continue };
                match &mut grads[*i] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Gradients { grads: leaves }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of leaf vars after a backward pass.
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        var.node.and_then(|id| self.grads.get(&id))
    }

    /// Gradient of `var`, or zeros of its shape when it did not influence the loss.
    pub fn get_or_zeros(&self, var: &Var) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}
