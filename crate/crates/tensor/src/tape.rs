use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Unary {
    Gelu,
    Sigmoid,
    LogSigmoid,
    Exp,
    Tanh,
}

/// A recorded primitive. Indices refer to earlier nodes on the same tape.
pub(crate) enum Op<E: Element> {
    Leaf,
    Const,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: E },
    Shift { x: usize },
    Unary { x: usize, f: Unary },
    MaskedFill { x: usize, keep: Vec<bool> },
    Reshape { x: usize },
    Permute { x: usize, perm: Vec<usize> },
    Concat { xs: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    Sum { x: usize },
    SumAxis { x: usize, axis: usize },
    MaxAxis { x: usize, argmax: Vec<usize> },
    Softmax { x: usize, axis: usize },
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Conv2d { x: usize, w: usize, stride: (usize, usize), padding: (usize, usize) },
    BatchNorm { x: usize, scale: usize, shift: usize, axis: usize, train: bool, xhat: Vec<E>, inv_std: Vec<E> },
    LayerNorm { x: usize, scale: usize, shift: usize, xhat: Vec<E>, inv_std: Vec<E> },
    MaxPool1d { x: usize, argmax: Vec<u32> },
    Rope { x: usize, base: f64 },
    Attention { q: usize, k: usize, v: usize, scale: E },
}

impl<E: Element> Op<E> {
    pub(crate) fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf | Op::Const => vec![],
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } | Op::MatMul { a, b, .. } => {
                vec![*a, *b]
            }
            Op::Scale { x, .. }
            | Op::Shift { x }
            | Op::Unary { x, .. }
            | Op::MaskedFill { x, .. }
            | Op::Reshape { x }
            | Op::Permute { x, .. }
            | Op::Slice { x, .. }
            | Op::Sum { x }
            | Op::SumAxis { x, .. }
            | Op::MaxAxis { x, .. }
            | Op::Softmax { x, .. }
            | Op::MaxPool1d { x, .. }
            | Op::Rope { x, .. } => vec![*x],
            Op::Concat { xs, .. } => xs.clone(),
            Op::Conv2d { x, w, .. } => vec![*x, *w],
            Op::BatchNorm { x, scale, shift, .. } | Op::LayerNorm { x, scale, shift, .. } => {
                vec![*x, *scale, *shift]
            }
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }
}

pub(crate) struct Node<E: Element> {
    pub(crate) value: Tensor<E>,
    pub(crate) op: Op<E>,
}

/// Adjoint buffers for one backward sweep.
pub(crate) struct Adjoints<'a, E: Element> {
    nodes: &'a [Node<E>],
    bufs: Vec<Option<Vec<E>>>,
}

impl<'a, E: Element> Adjoints<'a, E> {
    /// Mutable adjoint of node `i`, or `None` when it does not need a gradient.
    pub(crate) fn slot(&mut self, i: usize) -> Option<&mut [E]> {
        let node = &self.nodes[i];
        if !node.value.requires_grad() {
            return None;
        }
        let n = node.value.numel();
        Some(self.bufs[i].get_or_insert_with(|| vec![E::zero(); n]))
    }

    pub(crate) fn value(&self, i: usize) -> &'a Tensor<E> {
        &self.nodes[i].value
    }
}

/// Ordered record of executed primitives.
///
/// Nodes are appended in execution order, so every node comes after the
/// nodes producing its inputs. [`Tape::backward`] sweeps that order in
/// reverse and visits each node at most once.
pub struct Tape<E: Element> {
    pub(crate) nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Its `requires_grad` flag is kept.
    pub fn leaf(&mut self, tensor: Tensor<E>) -> Var {
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<E>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Records a copy of a trainable tensor as a gradient-requiring leaf.
    pub fn param(&mut self, tensor: &Tensor<E>) -> Var {
        let copy = Tensor::from_parts(tensor.shape().to_vec(), tensor.data().to_vec());
        self.leaf(copy.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[E] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[E]> {
        self.nodes[v.0].value.grad()
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    /// Whether `v` carries a recorded backward rule (false for leaves and
    /// for results computed only from non-differentiable inputs).
    pub fn is_recorded(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf | Op::Const)
    }

    pub(crate) fn push(&mut self, value: Tensor<E>, op: Op<E>) -> Var {
        let needs_grad = op
            .inputs()
            .iter()
            .any(|&i| self.nodes[i].value.requires_grad());
        let op = if needs_grad { op } else { Op::Const };
        self.nodes.push(Node {
            value: value.with_requires_grad(needs_grad),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Leaf gradients accumulate: calling this twice without
    /// [`Tape::zero_grad`] doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut leaf_grads: Vec<(usize, Vec<E>)> = Vec::new();
        {
            let mut adj = Adjoints {
                nodes: &self.nodes[..n],
                bufs: (0..n).map(|_| None).collect(),
            };
            if adj.slot(loss.0).is_none() {
                return Ok(());
            }
            adj.bufs[loss.0] = Some(vec![E::one()]);
            for i in (0..n).rev() {
                let Some(g) = adj.bufs[i].take() else {
                    continue;
                };
                let node = &self.nodes[i];
                match &node.op {
                    Op::Leaf => leaf_grads.push((i, g)),
                    Op::Const => {}
                    op => ops::backward(op, &node.value, &g, &mut adj),
                }
            }
        }
        for (i, g) in leaf_grads {
            let buf = self.nodes[i].value.grad_buffer();
            buf.iter_mut().zip(&g).for_each(|(b, &d)| *b += d);
        }
        Ok(())
    }
}
