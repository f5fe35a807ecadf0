//! Vision, audio and text encoders and the tokenizer.
//!
//! Each encoder returns an [`EncoderOutput`] whose row 0 is the global
//! ([CLS]-position) feature.

mod audio_encoder;
mod text;
pub mod tokenizer;
mod vision;

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use audio_encoder::{AudioEncoder, AudioEncoderConfig};
pub use text::{TextEncoder, TextMode};
pub use tokenizer::{normalize, split_words, TextTokens, Vocabulary};
pub use vision::{VisionConfig, VisionEncoder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Vision,
    Audio,
    Text,
}

/// Shared transformer hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    /// Patch side for vision and audio; unused by text.
    pub patch: usize,
    /// Longest sequence the position table covers (text includes the leading special).
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: 64,
            layers: 2,
            heads: 4,
            ffn_hidden: 256,
            patch: 8,
            max_len: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self, what: &str) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "{what}: hidden size {} must be a positive multiple of head count {}",
                self.hidden, self.heads
            )));
        }
        if self.ffn_hidden == 0 || self.patch == 0 || self.max_len == 0 {
            return Err(Error::Config(format!("{what}: ffn_hidden, patch and max_len must be positive")));
        }
        Ok(())
    }
}

/// Sequence features of one input; row 0 is the global feature.
#[derive(Clone, Copy)]
pub struct EncoderOutput<'t, F: Scalar> {
    pub sequence: Var<'t, F>,
    pub modality: Modality,
    /// Input was cut to fit the position table.
    pub truncated: bool,
}

impl<'t, F: Scalar> EncoderOutput<'t, F> {
    pub fn global(&self) -> Var<'t, F> {
        self.sequence.row(0)
    }

    pub fn len(&self) -> usize {
        self.sequence.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hidden(&self) -> usize {
        self.sequence.cols()
    }
}
