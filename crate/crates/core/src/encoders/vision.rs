use serde::{Deserialize, Serialize};

use super::{EncoderConfig, EncoderOutput, Modality};
use crate::corpus::FrameStack;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Graph, Init, LayerNorm, Linear, ParamId, TransformerLayer};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisionConfig {
    pub encoder: EncoderConfig,
    /// (H, W, C) every frame must have.
    pub image: (usize, usize, usize),
    pub max_frames: usize,
}

impl Default for VisionConfig {
    fn default() -> Self {
        VisionConfig {
            encoder: EncoderConfig::default(),
            image: (16, 16, 3),
            max_frames: 4,
        }
    }
}

impl VisionConfig {
    pub fn patches_per_frame(&self) -> usize {
        let p = self.encoder.patch;
        (self.image.0 / p) * (self.image.1 / p)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate("vision encoder")?;
        let p = self.encoder.patch;
        if self.image.0 % p != 0 || self.image.1 % p != 0 {
            return Err(Error::Config(format!(
                "vision image {}x{} is not divisible by patch size {p}",
                self.image.0, self.image.1
            )));
        }
        if self.max_frames == 0 || self.image.2 == 0 {
            return Err(Error::Config("vision max_frames and channels must be positive".into()));
        }
        Ok(())
    }
}

/// Patch-embedding transformer over sparsely sampled frames.
#[derive(Clone, Debug)]
pub struct VisionEncoder {
    pub config: VisionConfig,
    patch_embed: Linear,
    cls: ParamId,
    spatial_pos: ParamId,
    temporal_pos: ParamId,
    layers: Vec<TransformerLayer>,
    final_ln: LayerNorm,
}

impl VisionEncoder {
    pub fn new<F: Scalar>(init: &mut Init<'_, F>, config: VisionConfig) -> Self {
        let e = &config.encoder;
        let patch_dim = e.patch * e.patch * config.image.2;
        VisionEncoder {
            patch_embed: Linear::new(init, "vision.patch_embed", patch_dim, e.hidden),
            cls: init.normal("vision.cls", 1, e.hidden),
            spatial_pos: init.normal("vision.spatial_pos", config.patches_per_frame(), e.hidden),
            temporal_pos: init.normal("vision.temporal_pos", config.max_frames, e.hidden),
            layers: (0..e.layers)
                .map(|l| TransformerLayer::new(init, &format!("vision.layer{l}"), e.hidden, e.heads, e.ffn_hidden, None))
                .collect(),
            final_ln: LayerNorm::new(init, "vision.final_ln", e.hidden),
            config,
        }
    }

    /// Rows: frame-major, then patch rows, then patch columns; each row is
    /// the patch's pixels in (dy, dx, channel) order.
    pub fn patchify<F: Scalar>(&self, frames: &FrameStack) -> Result<Matrix<F>> {
        let p = self.config.encoder.patch;
        if frames.h % p != 0 || frames.w % p != 0 {
            return Err(Error::Shape(format!(
                "frame {}x{} is not divisible by patch size {p}",
                frames.h, frames.w
            )));
        }
        if (frames.h, frames.w, frames.c) != self.config.image {
            return Err(Error::Shape(format!(
                "frame shape {:?} differs from configured {:?}",
                (frames.h, frames.w, frames.c),
                self.config.image
            )));
        }
        let (gh, gw) = (frames.h / p, frames.w / p);
        let patch_dim = p * p * frames.c;
        let mut data = Vec::with_capacity(frames.t * gh * gw * patch_dim);
        for t in 0..frames.t {
            let frame = frames.frame(t);
            for py in 0..gh {
                for px in 0..gw {
                    for dy in 0..p {
                        let row = (py * p + dy) * frames.w * frames.c;
                        let start = row + px * p * frames.c;
                        data.extend(frame[start..start + p * frames.c].iter().map(|&v| F::of(f64::from(v))));
                    }
                }
            }
        }
        Ok(Matrix::from_vec(frames.t * gh * gw, patch_dim, data))
    }

    /// Frames beyond `max_frames` are dropped and flagged as truncation.
    pub fn encode<'t, F: Scalar>(&self, g: Graph<'t, F>, frames: &FrameStack) -> Result<EncoderOutput<'t, F>> {
        let truncated = frames.t > self.config.max_frames;
        let frames = if truncated { frames.take(self.config.max_frames) } else { frames.clone() };
        let patches = self.patchify::<F>(&frames)?;
        let n = self.config.patches_per_frame();
        let spatial: Vec<usize> = (0..frames.t).flat_map(|_| 0..n).collect();
        let temporal: Vec<usize> = (0..frames.t).flat_map(|t| std::iter::repeat_n(t, n)).collect();
        let x = self
            .patch_embed
            .forward(g, g.constant(patches))
            .add(g.tape.gather_rows(g.p(self.spatial_pos), &spatial))
            .add(g.tape.gather_rows(g.p(self.temporal_pos), &temporal));
        let mut x = g.tape.concat_rows(&[g.p(self.cls), x]);
        for layer in &self.layers {
            x = layer.forward(g, x, None, None);
        }
        Ok(EncoderOutput {
            sequence: self.final_ln.forward(g, x),
            modality: Modality::Vision,
            truncated,
        })
    }
}
