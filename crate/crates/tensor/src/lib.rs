//! Dense tensors with a dynamic reverse-mode tape, an SGD optimizer,
//! multiply-accumulate accounting and raw tensor / checkpoint files.

pub mod check;
mod element;
mod error;
pub mod flops;
pub mod io;
mod ops;
mod optim;
mod param;
mod tape;
mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use flops::{FlopCounter, FlopReport};
pub use ops::conv::{conv_out_len, conv_transpose_out_len, AxisPlan, ResamplePlan};
pub use ops::elementwise::broadcast_shape;
pub use optim::{log_space_lr, Sgd};
pub use param::{ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{flat_index, numel, strides, Tensor};
