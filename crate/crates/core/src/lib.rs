//! Multilingual dual-encoder contrastive training with DINO-style
//! self-distillation, built on a small reverse-mode tensor engine.
//!
//! Modules, bottom-up:
//!
//! - [`autodiff`]: tape, differentiable ops, finite-difference checks
//! - [`encoders`]: vision/text transformers, projections, projector head
//! - [`objectives`]: InfoNCE, self-distillation, teacher dynamics
//! - [`data`]: manifests, caption sampling, multi-crop views, prompts
//! - [`eval`]: retrieval recall, zero-shot classification, splits
//! - [`train`]: AdamW, schedule, training loop, checkpoints

pub mod autodiff;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod exec;
pub mod objectives;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
