//! Wengert tape: every primitive application is appended in execution order,
//! so the record is topologically sorted by construction and can be walked
//! backwards for reverse-mode differentiation.

use std::cell::RefCell;

use super::ops::{self, Primitive};
use super::{AutodiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    prim: Option<Primitive>,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// The computation record. Single-threaded; build one per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of a scalar loss w.r.t. the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Node {
            value,
            prim: None,
            inputs: Vec::new(),
            requires_grad,
        })
    }

    /// A leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf treated as a constant by `backward`.
    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn apply(&self, prim: Primitive, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&Tensor> = inputs.iter().map(|v| &nodes[v.0].value).collect();
            let value = ops::forward(&prim, &vals)?;
            (value, inputs.iter().any(|v| nodes[v.0].requires_grad))
        };
        Ok(self.push(Node {
            value,
            prim: Some(prim),
            inputs: inputs.to_vec(),
            requires_grad,
        }))
    }

    /// Reverse sweep from a scalar `loss`. Leaves that do not require grad,
    /// or are unreachable from `loss`, get no entry.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let nodes = self.nodes.borrow();
        let loss_node = nodes
            .get(loss.0)
            .ok_or_else(|| AutodiffError::Contract(format!("var {} not on this tape", loss.0)))?;
        if !loss_node.value.is_scalar() {
            return Err(AutodiffError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !loss_node.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            let Some(prim) = &node.prim else { continue };
            let Some(g) = grads[idx].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &nodes[v.0].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| nodes[v.0].requires_grad)
                .collect();
            let local = ops::backward(prim, &inputs, &node.value, &g, &needs);
            for (input, dg) in node.inputs.iter().zip(local) {
                let Some(dg) = dg else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(dg),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Re-executes every recorded primitive from the leaf values, returning
    /// the recomputed value of each node.
    pub fn replay(&self) -> Result<Vec<Tensor>, AutodiffError> {
        let nodes = self.nodes.borrow();
        let mut out: Vec<Tensor> = Vec::with_capacity(nodes.len());
        for node in nodes.iter() {
            let value = match &node.prim {
                None => node.value.clone(),
                Some(prim) => {
                    let vals: Vec<&Tensor> = node.inputs.iter().map(|v| &out[v.0]).collect();
                    ops::forward(prim, &vals)?
                }
            };
            out.push(value);
        }
        Ok(out)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(
            Primitive::MatMul {
                trans_a: false,
                trans_b: false,
            },
            &[a, b],
        )
    }

    /// `a * b^T`
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(
            Primitive::MatMul {
                trans_a: false,
                trans_b: true,
            },
            &[a, b],
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Scale(c), &[a])
    }

    pub fn softmax(&self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Softmax, &[a])
    }

    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, AutodiffError> {
        self.apply(Primitive::LayerNorm { eps }, &[x, gain, bias])
    }

    pub fn gelu(&self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Gelu, &[a])
    }

    pub fn embedding(&self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Embedding { ids: ids.to_vec() }, &[table])
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Concat { axis }, parts)
    }

    pub fn slice(
        &self,
        a: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Slice { axis, start, len }, &[a])
    }

    pub fn sum(&self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn mean(&self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Mean, &[a])
    }

    pub fn squared_norm(&self, a: Var) -> Result<Var, AutodiffError> {
        self.apply(Primitive::SquaredNorm, &[a])
    }

    pub fn nll(&self, probs: Var, targets: Vec<(usize, usize)>) -> Result<Var, AutodiffError> {
        self.apply(Primitive::Nll { targets }, &[probs])
    }

    /// Sum of scalar vars.
    pub fn add_all(&self, terms: &[Var]) -> Result<Var, AutodiffError> {
        let (first, rest) = terms
            .split_first()
            .ok_or_else(|| AutodiffError::Contract("add_all of zero terms".into()))?;
        rest.iter().try_fold(*first, |acc, &t| self.add(acc, t))
    }
}
