//! Dense n-dimensional tensors and a reverse-mode differentiation tape.
//!
//! Computations are recorded on a [`Tape`] as they execute; [`Tape::backward`]
//! then sweeps the record in reverse and accumulates gradients into every
//! leaf that requires them.
//!
//! ```
//! use beatrack_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap().with_requires_grad(true));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

mod checkpoint;
mod element;
mod error;
mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_many, relative_error, GradCheckConfig, GradCheckReport};
pub use ops::norm::{BatchNormConfig, NormMode, RunningStats, LAYER_NORM_EPS};
pub use ops::rope::ROPE_BASE;
pub use tape::{Tape, Var};
pub use tensor::{broadcast_shapes, numel, Tensor};
