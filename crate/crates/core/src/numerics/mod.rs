//! Dense `f64` tensors, a reverse-mode tape, and finite-difference checks.

pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_many};
pub use tape::{cosine_similarity, sigmoid, Tape, Var};
pub use tensor::Tensor;
