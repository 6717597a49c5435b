//! Cross-modal feature-supervised transfer for action models.
//!
//! A teacher network trained on a labeled source modality (rgb or flow)
//! supervises a student network on a paired target modality (depth or
//! skeleton) at the feature level; the student is then fine-tuned with a few
//! labeled target examples. Everything runs on a small dense-f32 tensor
//! engine with reverse-mode differentiation, over a synthetic paired-modality
//! action dataset.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod nets;
pub mod parallel;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod transfer;

pub use error::{Error, Result};
pub use tensor::{GradGraph, Sgd, Tensor};
