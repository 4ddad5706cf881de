//! Reverse-mode tape. Every op pushes its output value together with a
//! backward rule; `backward` replays the rules in reverse recording order and
//! then clears the tape.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::params::{ParamId, ParamStore};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`]. Handles become stale once the
/// tape is cleared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    session: u64,
}

/// Inputs handed to a backward rule.
pub(crate) struct BackwardCtx<'a, T> {
    pub grad: &'a Tensor<T>,
    pub output: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
    pub needs: Vec<bool>,
}

pub(crate) trait BackwardOp<T: Scalar> {
    /// Gradients w.r.t. each input, `None` where `needs[i]` is false.
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>>;
}

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn BackwardOp<T>>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    session: u64,
    relaxed_spikes: bool,
    spike_regions: Vec<u8>,
    grad_enabled: bool,
}

/// Gradients of plain (non-parameter) leaves, returned by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T> {
    grads: HashMap<Var, Tensor<T>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            session: NEXT_SESSION.fetch_add(1, Ordering::Relaxed),
            relaxed_spikes: false,
            spike_regions: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records no backward information.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and invalidates outstanding handles.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.spike_regions.clear();
        self.session = NEXT_SESSION.fetch_add(1, Ordering::Relaxed);
    }

    /// In relaxed mode spike layers emit the surrogate's antiderivative
    /// instead of the hard step, so that finite differences of the forward
    /// pass see the same derivative the backward pass uses.
    pub fn set_relaxed_spikes(&mut self, on: bool) {
        self.relaxed_spikes = on;
    }

    pub fn relaxed_spikes(&self) -> bool {
        self.relaxed_spikes
    }

    /// Per-neuron surrogate region codes recorded by spike layers since the
    /// last clear. Two forward passes with equal codes never straddle a kink
    /// of the relaxed spike function.
    pub fn spike_regions(&self) -> &[u8] {
        &self.spike_regions
    }

    pub(crate) fn record_spike_regions(&mut self, codes: impl IntoIterator<Item = u8>) {
        self.spike_regions.extend(codes);
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_node(Node {
            value,
            inputs: Vec::new(),
            rule: None,
            requires_grad: requires_grad && self.grad_enabled,
            param: None,
        })
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Records a parameter as a leaf. Trainable parameters receive gradients
    /// in the store on `backward`.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.push_node(Node {
            value: p.value.clone(),
            inputs: Vec::new(),
            rule: None,
            requires_grad: p.trainable && self.grad_enabled,
            param: Some(id),
        })
    }

    fn push_node(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var {
            index: self.nodes.len() - 1,
            session: self.session,
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, inputs: Vec<Var>, rule: impl BackwardOp<T> + 'static) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.index].requires_grad);
        self.push_node(Node {
            value,
            inputs,
            rule: requires_grad.then(|| Box::new(rule) as Box<dyn BackwardOp<T>>),
            requires_grad,
            param: None,
        })
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.session != self.session || v.index >= self.nodes.len() {
            return Err(Error::Contract(
                "variable does not belong to the current tape recording".into(),
            ));
        }
        Ok(())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.check(v).expect("stale tape variable");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    /// Back-propagates from the scalar `loss`. Parameter gradients are added
    /// into the store; gradients of plain leaves are returned. The tape is
    /// cleared afterwards, so a second call without re-recording fails.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        self.check(loss)?;
        if self.nodes[loss.index].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.index].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.index + 1, || None);
        let lv = &self.nodes[loss.index].value;
        grads[loss.index] = Some(Tensor::full(lv.shape(), T::one()));

        let mut leaf_grads = HashMap::new();
        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Some(id) = node.param {
                store.accumulate_grad(id, &g);
                continue;
            }
            let Some(rule) = &node.rule else {
                leaf_grads.insert(
                    Var {
                        index: i,
                        session: self.session,
                    },
                    g,
                );
                continue;
            };
            let ctx = BackwardCtx {
                grad: &g,
                output: &node.value,
                inputs: node.inputs.iter().map(|v| &self.nodes[v.index].value).collect(),
                needs: node.inputs.iter().map(|v| self.nodes[v.index].requires_grad).collect(),
            };
            let input_grads = rule.backward(&ctx)?;
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (v, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[v.index].requires_grad {
                    continue;
                }
                debug_assert_eq!(ig.shape(), self.nodes[v.index].value.shape());
                match &mut grads[v.index] {
                    Some(acc) => acc.add_assign(&ig),
                    slot => *slot = Some(ig),
                }
            }
        }
        self.clear();
        Ok(Gradients { grads: leaf_grads })
    }
}
