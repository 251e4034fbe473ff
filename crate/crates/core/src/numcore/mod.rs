//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod error;
mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::NumError;
pub use gradcheck::{grad_check, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{gelu, Tape, Var};
pub use tensor::Tensor;
