//! Minimal reverse-mode differentiation: tensors, the op tape, attention,
//! AdamW and the cosine schedule, and a finite-difference checker.

mod attention;
mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use attention::attention;
pub use gradcheck::{grad_check, grad_check_many, relative_error};
pub use graph::{conv_output_len, Gradients, Graph, NodeId};
pub use optim::{cosine_lr, AdamWConfig, AdamWState};
pub use tensor::Tensor;
