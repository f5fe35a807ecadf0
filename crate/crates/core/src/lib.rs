//! Omni-modality video-text learning at desk scale: a synthetic corpus with
//! vision, audio and subtitle tracks, tiny transformer encoders, cross-modal
//! fusion, contrastive/matching/generation objectives over modality groups,
//! retrieval/captioning/QA protocols, and a training harness.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod adaptation;
pub mod audio;
pub mod autograd;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod matrix;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod scalar;

pub use error::{Error, Result};
pub use harness::{Checkpoint, TrainConfig, Trainer};
pub use matrix::Matrix;
pub use model::{ClipInputs, ModelConfig, OmniModel};
pub use scalar::Scalar;

pub type OmniModel32 = OmniModel<f32>;
pub type OmniModel64 = OmniModel<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Checkpoint32 = Checkpoint<f32>;
pub type Checkpoint64 = Checkpoint<f64>;
pub type Trainer32 = Trainer<f32>;
pub type Trainer64 = Trainer<f64>;
