pub(crate) mod attention;
pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod matmul;
pub(crate) mod norm;
pub(crate) mod pool;
pub(crate) mod reduce;
pub(crate) mod rope;
pub(crate) mod shape;

use crate::element::Element;
use crate::tape::{Adjoints, Op};
use crate::tensor::Tensor;

/// Propagates the adjoint `g` of a node with value `out` into its inputs.
pub(crate) fn backward<E: Element>(op: &Op<E>, out: &Tensor<E>, g: &[E], adj: &mut Adjoints<'_, E>) {
    match op {
        Op::Leaf | Op::Const => {}
        Op::Add { .. } | Op::Sub { .. } | Op::Mul { .. } | Op::Scale { .. } | Op::Shift { .. } | Op::Unary { .. } | Op::MaskedFill { .. } => {
            elementwise::backward(op, out, g, adj)
        }
        Op::Reshape { .. } | Op::Permute { .. } | Op::Concat { .. } | Op::Slice { .. } => shape::backward(op, out, g, adj),
        Op::Sum { .. } | Op::SumAxis { .. } | Op::MaxAxis { .. } | Op::Softmax { .. } => reduce::backward(op, out, g, adj),
        Op::MatMul { .. } => matmul::backward(op, g, adj),
        Op::Conv2d { .. } => conv::backward(op, g, adj),
        Op::BatchNorm { .. } | Op::LayerNorm { .. } => norm::backward(op, out, g, adj),
        Op::MaxPool1d { .. } => pool::backward(op, g, adj),
        Op::Rope { .. } => rope::backward(op, out, g, adj),
        Op::Attention { .. } => attention::backward(op, g, adj),
    }
}
