//! Adversarial-robustness laboratory built around logit-margin "super-fitting".
//!
//! The crate trains small image classifiers whose non-target logits are pushed
//! so far below the target logit that the float softmax saturates exactly to a
//! one-hot vector. At that point the cross-entropy gradient is bit-exactly
//! zero and every gradient-sign attack (FGSM, BIM, PGD, APGD, A3) degenerates
//! into noise around its starting point. Everything needed to reproduce and
//! probe that mechanism lives here: a from-scratch reverse-mode tensor engine,
//! the training objectives, the attack suite, binary checkpoints, dataset
//! loaders, and an evaluation harness with a CLI.

pub mod attacks;
pub mod checkpoint;
pub mod data;
pub mod element;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod models;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod training;

pub use element::Element;
pub use error::{Error, Result};
pub use tensor::Tensor;
