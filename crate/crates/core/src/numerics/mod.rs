//! Dense-tensor computation core: tensors, reverse-mode tape, optimizer,
//! clipping, and the finite-difference verification oracle.

pub mod gradcheck;
pub mod optim;
pub mod sparse;
pub mod tape;
pub mod tensor;

pub use gradcheck::{compare_gradients, fd_gradients, gradient_check, tape_gradients, GradCheckReport};
pub use optim::{adam_step, clip_global_norm, AdamConfig, ParamStore, Parameter};
pub use sparse::CsrMatrix;
pub use tape::{Prim, Tape, TensorId};
pub use tensor::Tensor;
