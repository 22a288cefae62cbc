use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use super::param::{ParamId, ParamStore};
use super::value::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Vector-Jacobian product of one recorded operation.
///
/// Receives the gradient of the output and, per input, whether that input
/// wants a gradient. Returns one optional gradient per input.
pub(crate) type GradFn<S> = Box<dyn FnOnce(&[S], &[bool]) -> Vec<Option<Vec<S>>>>;

struct Node<S: Scalar> {
    value: Tensor<S>,
    requires_grad: bool,
    inputs: Vec<usize>,
    backward: Option<GradFn<S>>,
    param: Option<ParamId>,
}

/// Whether normalization layers use batch statistics or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Define-by-run recording of one forward pass.
///
/// Operations are appended in execution order, so the node list is always
/// topologically sorted. A tape is built per training step and consumed by
/// [`Tape::backward`].
pub struct Tape<S: Scalar = f64> {
    nodes: RefCell<Vec<Node<S>>>,
    param_nodes: RefCell<HashMap<ParamId, usize>>,
    stat_updates: RefCell<Vec<(ParamId, Tensor<S>)>>,
    mode: Mode,
    grad_enabled: bool,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S: Scalar = f64> {
    pub(crate) tape: &'t Tape<S>,
    pub(crate) id: usize,
}

impl<S: Scalar> Tape<S> {
    /// A recording tape.
    pub fn new(mode: Mode) -> Self {
        Self::build(mode, true)
    }

    /// A tape that records nothing for backward; used for evaluation.
    pub fn inference() -> Self {
        Self::build(Mode::Eval, false)
    }

    fn build(mode: Mode, grad_enabled: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            param_nodes: RefCell::new(HashMap::new()),
            stat_updates: RefCell::new(Vec::new()),
            mode,
            grad_enabled,
            consumed: Cell::new(false),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<S>) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(Node { value, requires_grad: false, inputs: vec![], backward: None, param: None })
    }

    /// A free input that receives a gradient (when the tape records).
    pub fn leaf(&self, value: Tensor<S>) -> Var<'_, S> {
        let requires_grad = self.grad_enabled;
        self.push(Node { value, requires_grad, inputs: vec![], backward: None, param: None })
    }

    /// Registers a stored parameter. Repeated calls return the same node so
    /// that every use accumulates into one gradient.
    pub fn param(&self, store: &ParamStore<S>, id: ParamId) -> Var<'_, S> {
        if let Some(&node) = self.param_nodes.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let p = store.get(id);
        let requires_grad = self.grad_enabled && p.trainable;
        let var = self.push(Node { value: p.value.clone(), requires_grad, inputs: vec![], backward: None, param: Some(id) });
        self.param_nodes.borrow_mut().insert(id, var.id);
        var
    }

    pub(crate) fn value_of(&self, id: usize) -> Tensor<S> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Appends an operation output. `backward` is dropped unless some input
    /// requires a gradient.
    pub(crate) fn record<'t, F>(&'t self, value: Tensor<S>, inputs: &[Var<'t, S>], backward: F) -> Var<'t, S>
    where
        F: FnOnce(&[S], &[bool]) -> Vec<Option<Vec<S>>> + 'static,
    {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.requires_grad_of(v.id));
        let (ids, grad_fn): (Vec<usize>, Option<GradFn<S>>) =
            if requires_grad { (inputs.iter().map(|v| v.id).collect(), Some(Box::new(backward))) } else { (vec![], None) };
        self.push(Node { value, requires_grad, inputs: ids, backward: grad_fn, param: None })
    }

    /// Queues a new value for a non-trainable buffer (running statistics).
    pub(crate) fn push_stat_update(&self, id: ParamId, value: Tensor<S>) {
        if self.mode == Mode::Train {
            self.stat_updates.borrow_mut().push((id, value));
        }
    }

    /// Buffer updates produced during the forward pass, in order.
    pub fn take_stat_updates(&self) -> Vec<(ParamId, Tensor<S>)> {
        std::mem::take(&mut *self.stat_updates.borrow_mut())
    }

    /// Reverse sweep from a scalar loss.
    ///
    /// Visits every recorded operation at most once, newest first, and sums
    /// gradient contributions across fan-out.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        if !self.grad_enabled {
            return Err(Error::contract("backward", "tape was built without gradient recording"));
        }
        if self.consumed.replace(true) {
            return Err(Error::contract("backward", "tape already consumed by a previous backward"));
        }
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::contract("backward", "loss belongs to another tape"));
        }
        let mut nodes = self.nodes.borrow_mut();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::contract("backward", format!("loss must be scalar, got shape {:?}", root.value.shape())));
        }
        let mut out = Gradients { by_node: HashMap::new(), by_param: HashMap::new() };
        if !root.requires_grad {
            return Ok(out);
        }

        let mut grads: Vec<Option<Vec<S>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(vec![S::one()]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &mut nodes[id];
            let Some(f) = node.backward.take() else {
                if node.requires_grad {
                    let t = Tensor::from_parts(node.value.shape().to_vec(), g);
                    if let Some(p) = node.param {
                        out.by_param.insert(p, t.clone());
                    }
                    out.by_node.insert(id, t);
                }
                continue;
            };
            let inputs = std::mem::take(&mut node.inputs);
            let needs: Vec<bool> = inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let input_grads = f(&g, &needs);
            debug_assert_eq!(input_grads.len(), inputs.len());
            for ((&input, gi), need) in inputs.iter().zip(input_grads).zip(needs) {
                let Some(gi) = gi else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(gi.len(), nodes[input].value.numel(), "gradient size for node {input}");
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(out)
    }
}

/// Gradients of requires-grad leaves after a backward sweep.
#[derive(Debug)]
pub struct Gradients<S: Scalar = f64> {
    by_node: HashMap<usize, Tensor<S>>,
    by_param: HashMap<ParamId, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of a leaf; `None` for constants, non-leaves, and leaves the
    /// loss does not depend on.
    pub fn get(&self, var: Var<'_, S>) -> Option<&Tensor<S>> {
        self.by_node.get(&var.id)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.by_param.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<S>)> {
        self.by_param.iter().map(|(&k, v)| (k, v))
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn value(&self) -> Tensor<S> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.numel()
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        self.tape.nodes.borrow()[self.id].value.dims4()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> Result<S> {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, S> {
        self.tape.constant(self.value())
    }

    pub(crate) fn same_tape(&self, other: &Var<'t, S>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::contract(op, "operands recorded on different tapes"))
        }
    }
}

impl<S: Scalar> std::fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}
