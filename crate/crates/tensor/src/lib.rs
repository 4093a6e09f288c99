//! Numerical substrate: dense `f64` tensors, a reverse-mode tape, Adam,
//! dropout/batch-norm and a finite-difference gradient checker.

pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod param;
pub mod regularize;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use ops::{masked_softmax, Activation};
pub use optim::{Adam, AdamConfig};
pub use param::{ParamId, ParamStore, Parameter};
pub use regularize::{dropout, BatchNorm, Mode};
pub use tape::{BatchStats, Gradients, Normalize, Tape, Var};
pub use tensor::Tensor;
