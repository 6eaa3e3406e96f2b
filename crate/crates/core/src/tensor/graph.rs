use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamRef, Tensor};

/// What a backward closure sees: the upstream gradient, the forward inputs
/// and output, and which inputs actually need a gradient.
pub struct BackwardCtx<'a, S> {
    pub grad: &'a Tensor<S>,
    pub inputs: &'a [Rc<Tensor<S>>],
    pub output: &'a Tensor<S>,
    pub needs: &'a [bool],
}

type BackwardFn<S> = Box<dyn Fn(&BackwardCtx<'_, S>) -> Vec<Option<Tensor<S>>>>;

struct Node<S> {
    value: Rc<Tensor<S>>,
    requires_grad: bool,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<S>>,
    param: Option<ParamRef<S>>,
}

/// Append-only record of a forward computation.
///
/// Nodes are pushed in evaluation order, which is a topological order, so the
/// backward sweep is a single reverse scan.
pub struct Graph<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    grads: RefCell<Vec<Option<Tensor<S>>>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, S: Scalar> {
    pub(crate) graph: &'g Graph<S>,
    pub(crate) id: usize,
}

impl<S: Scalar> std::fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::new()), grads: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node<S>) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        self.grads.borrow_mut().push(None);
        Var { graph: self, id: nodes.len() - 1 }
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push_node(Node {
            value: Rc::new(value),
            requires_grad: false,
            inputs: Vec::new(),
            backward: None,
            param: None,
        })
    }

    /// Leaf that receives a gradient.
    pub fn input(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push_node(Node {
            value: Rc::new(value),
            requires_grad: true,
            inputs: Vec::new(),
            backward: None,
            param: None,
        })
    }

    /// Leaf bound to a persistent parameter; its gradient is forwarded to the
    /// parameter's accumulator during [`Graph::backward`].
    pub fn param(&self, p: &ParamRef<S>) -> Var<'_, S> {
        self.push_node(Node {
            value: Rc::new(p.snapshot()),
            requires_grad: p.is_trainable(),
            inputs: Vec::new(),
            backward: None,
            param: Some(p.clone()),
        })
    }

    pub(crate) fn record<F>(&self, value: Tensor<S>, inputs: &[Var<'_, S>], backward: F) -> Var<'_, S>
    where
        F: Fn(&BackwardCtx<'_, S>) -> Vec<Option<Tensor<S>>> + 'static,
    {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push_node(Node {
            value: Rc::new(value),
            requires_grad,
            inputs: ids,
            backward: if requires_grad { Some(Box::new(backward)) } else { None },
            param: None,
        })
    }

    pub fn value(&self, v: Var<'_, S>) -> Rc<Tensor<S>> {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn requires_grad(&self, v: Var<'_, S>) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    /// Accumulated gradient of a node, if backward has reached it.
    pub fn grad(&self, v: Var<'_, S>) -> Option<Tensor<S>> {
        self.grads.borrow()[v.id].clone()
    }

    pub fn zero_grads(&self) {
        self.grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }

    /// Reverse sweep from a single-element root.
    ///
    /// Gradients accumulate into both the graph's per-node buffers and the
    /// bound parameters; call again to add another root's contribution.
    pub fn backward(&self, root: Var<'_, S>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root.id];
        if root_node.value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward root must be scalar, got shape {:?}",
                root_node.value.shape()
            )));
        }
        if !root_node.requires_grad {
            return Ok(());
        }
        let mut local: Vec<Option<Tensor<S>>> = vec![None; root.id + 1];
        local[root.id] = Some(Tensor::ones(root_node.value.shape()));
        let mut grads = self.grads.borrow_mut();
        for id in (0..=root.id).rev() {
            let Some(g) = local[id].take() else { continue };
            let node = &nodes[id];
            if let Some(bw) = &node.backward {
                let inputs: Vec<Rc<Tensor<S>>> =
                    node.inputs.iter().map(|&i| nodes[i].value.clone()).collect();
                let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
                let ctx = BackwardCtx { grad: &g, inputs: &inputs, output: &node.value, needs: &needs };
                let input_grads = bw(&ctx);
                for ((&inp, gi), &need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                    let (Some(gi), true) = (gi, need) else { continue };
                    debug_assert_eq!(gi.shape(), nodes[inp].value.shape(), "grad shape for node {inp}");
                    match &mut local[inp] {
                        Some(acc) => acc.add_assign(&gi),
                        slot => *slot = Some(gi),
                    }
                }
            }
            if let Some(p) = &node.param {
                p.accumulate_grad(&g);
            }
            match &mut grads[id] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }
}

impl<'g, S: Scalar> Var<'g, S> {
    pub fn value(&self) -> Rc<Tensor<S>> {
        self.graph.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn graph(&self) -> &'g Graph<S> {
        self.graph
    }

    pub fn grad(&self) -> Option<Tensor<S>> {
        self.graph.grad(*self)
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub(crate) fn check_same_graph(&self, other: &Var<'_, S>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "vars from different graphs cannot be combined"
        );
    }
}
