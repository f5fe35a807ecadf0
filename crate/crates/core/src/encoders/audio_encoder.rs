use serde::{Deserialize, Serialize};

use super::{EncoderConfig, EncoderOutput, Modality};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Graph, Init, LayerNorm, Linear, ParamId, TransformerLayer};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioEncoderConfig {
    pub encoder: EncoderConfig,
    pub n_mels: usize,
    /// Time patches per clip covered by the position table; later ones are dropped.
    pub max_time_patches: usize,
}

impl Default for AudioEncoderConfig {
    fn default() -> Self {
        AudioEncoderConfig {
            encoder: EncoderConfig {
                patch: 16,
                ..EncoderConfig::default()
            },
            n_mels: 64,
            max_time_patches: 8,
        }
    }
}

impl AudioEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate("audio encoder")?;
        if self.n_mels % self.encoder.patch != 0 {
            return Err(Error::Config(format!(
                "n_mels {} is not divisible by audio patch size {}",
                self.n_mels, self.encoder.patch
            )));
        }
        if self.max_time_patches == 0 {
            return Err(Error::Config("max_time_patches must be positive".into()));
        }
        Ok(())
    }

    fn mel_patches(&self) -> usize {
        self.n_mels / self.encoder.patch
    }

    /// Patches one clip of `n_frames` spectrogram frames yields.
    pub fn patches_per_clip(&self, n_frames: usize) -> usize {
        (n_frames / self.encoder.patch).min(self.max_time_patches) * self.mel_patches()
    }
}

/// Encodes each log-Mel clip independently; clip outputs are concatenated
/// and the global token is the mean of the per-clip [CLS] outputs.
#[derive(Clone, Debug)]
pub struct AudioEncoder {
    pub config: AudioEncoderConfig,
    patch_embed: Linear,
    cls: ParamId,
    pos: ParamId,
    layers: Vec<TransformerLayer>,
    final_ln: LayerNorm,
}

impl AudioEncoder {
    pub fn new<F: Scalar>(init: &mut Init<'_, F>, config: AudioEncoderConfig) -> Self {
        let e = &config.encoder;
        let n_pos = config.max_time_patches * config.mel_patches();
        AudioEncoder {
            patch_embed: Linear::new(init, "audio.patch_embed", e.patch * e.patch, e.hidden),
            cls: init.normal("audio.cls", 1, e.hidden),
            pos: init.normal("audio.pos", n_pos, e.hidden),
            layers: (0..e.layers)
                .map(|l| TransformerLayer::new(init, &format!("audio.layer{l}"), e.hidden, e.heads, e.ffn_hidden, None))
                .collect(),
            final_ln: LayerNorm::new(init, "audio.final_ln", e.hidden),
            config,
        }
    }

    /// Standardizes the clip, then cuts it into patch × patch (time × mel)
    /// blocks in time-major order. Trailing frames that do not fill a patch
    /// are dropped.
    pub fn patchify<F: Scalar>(&self, spec: &Matrix<F>) -> Result<(Matrix<F>, bool)> {
        let p = self.config.encoder.patch;
        if spec.cols() != self.config.n_mels {
            return Err(Error::Shape(format!(
                "spectrogram has {} mel bins, encoder expects {}",
                spec.cols(),
                self.config.n_mels
            )));
        }
        let available = spec.rows() / p;
        if available == 0 {
            return Err(Error::Shape(format!("spectrogram of {} frames is shorter than one patch", spec.rows())));
        }
        let time_patches = available.min(self.config.max_time_patches);
        let truncated = available > self.config.max_time_patches;

        let n = F::of(spec.data().len() as f64);
        let mean = spec.data().iter().copied().sum::<F>() / n;
        let var = spec.data().iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / n;
        let scale = F::one() / (var.sqrt() + F::of(1e-5));

        let mel_patches = self.config.mel_patches();
        let mut data = Vec::with_capacity(time_patches * mel_patches * p * p);
        for tp in 0..time_patches {
            for mp in 0..mel_patches {
                for dt in 0..p {
                    let row = spec.row(tp * p + dt);
                    data.extend(row[mp * p..(mp + 1) * p].iter().map(|&x| (x - mean) * scale));
                }
            }
        }
        Ok((Matrix::from_vec(time_patches * mel_patches, p * p, data), truncated))
    }

    pub fn encode<'t, F: Scalar>(&self, g: Graph<'t, F>, clips: &[Matrix<F>]) -> Result<EncoderOutput<'t, F>> {
        if clips.is_empty() {
            return Err(Error::EmptyInput("no audio clips".into()));
        }
        let mut cls_rows = Vec::with_capacity(clips.len());
        let mut bodies = Vec::with_capacity(clips.len());
        let mut truncated = false;
        for clip in clips {
            let (patches, cut) = self.patchify(clip)?;
            truncated |= cut;
            let idx: Vec<usize> = (0..patches.rows()).collect();
            let x = self
                .patch_embed
                .forward(g, g.constant(patches))
                .add(g.tape.gather_rows(g.p(self.pos), &idx));
            let mut x = g.tape.concat_rows(&[g.p(self.cls), x]);
            for layer in &self.layers {
                x = layer.forward(g, x, None, None);
            }
            let x = self.final_ln.forward(g, x);
            cls_rows.push(x.row(0));
            bodies.push(x.slice_rows(1, x.rows()));
        }
        let global = g.tape.concat_rows(&cls_rows).mean_rows();
        let mut parts = vec![global];
        parts.extend(bodies);
        Ok(EncoderOutput {
            sequence: g.tape.concat_rows(&parts),
            modality: Modality::Audio,
            truncated,
        })
    }
}
