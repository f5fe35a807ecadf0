//! Multimodal mode of the text encoder: per-modality adapters, condition
//! features, cross-attention encoding for matching and causal decoding for
//! generation.

use serde::{Deserialize, Serialize};

use crate::autograd::{AttentionMask, Var};
use crate::encoders::{EncoderOutput, TextEncoder, TextMode, TextTokens};
use crate::error::{Error, Result};
use crate::nn::{Graph, Init, LayerNorm, Linear};
use crate::objectives::ModalityGroup;
use crate::scalar::Scalar;

/// Source modality of a condition row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    Subtitle,
    Vision,
    Audio,
}

impl Slot {
    /// Canonical condition order.
    pub const ORDER: [Slot; 3] = [Slot::Subtitle, Slot::Vision, Slot::Audio];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Subtitle => "subtitle",
            Slot::Vision => "vision",
            Slot::Audio => "audio",
        }
    }
}

/// Encoder outputs available for one clip. Absent modalities are `None`.
#[derive(Clone, Copy, Default)]
pub struct ModalityOutputs<'t, F: Scalar> {
    pub subtitle: Option<EncoderOutput<'t, F>>,
    pub vision: Option<EncoderOutput<'t, F>>,
    pub audio: Option<EncoderOutput<'t, F>>,
}

impl<'t, F: Scalar> ModalityOutputs<'t, F> {
    pub fn get(&self, slot: Slot) -> Option<EncoderOutput<'t, F>> {
        match slot {
            Slot::Subtitle => self.subtitle,
            Slot::Vision => self.vision,
            Slot::Audio => self.audio,
        }
    }

    /// The group's outputs in canonical order, or the first missing one.
    pub fn for_group(&self, group: ModalityGroup) -> Result<Vec<(Slot, EncoderOutput<'t, F>)>> {
        group
            .slots()
            .iter()
            .map(|&s| {
                self.get(s).map(|o| (s, o)).ok_or_else(|| Error::MissingModality {
                    group: group.label().into(),
                    modality: s.name().into(),
                })
            })
            .collect()
    }
}

/// One independent linear map per modality into the text hidden size.
#[derive(Clone, Debug)]
pub struct AdapterSet {
    pub subtitle: Linear,
    pub vision: Linear,
    pub audio: Linear,
}

impl AdapterSet {
    pub fn new<F: Scalar>(init: &mut Init<'_, F>, d_sub: usize, d_vis: usize, d_aud: usize, hidden: usize) -> Self {
        AdapterSet {
            subtitle: Linear::new(init, "fusion.adapter.subtitle", d_sub, hidden),
            vision: Linear::new(init, "fusion.adapter.vision", d_vis, hidden),
            audio: Linear::new(init, "fusion.adapter.audio", d_aud, hidden),
        }
    }

    pub fn get(&self, slot: Slot) -> &Linear {
        match slot {
            Slot::Subtitle => &self.subtitle,
            Slot::Vision => &self.vision,
            Slot::Audio => &self.audio,
        }
    }
}

/// Adapted features of the group's modalities concatenated along the
/// sequence, in [subtitle | vision | audio] order.
#[derive(Clone)]
pub struct ConditionFeatures<'t, F: Scalar> {
    pub sequence: Var<'t, F>,
    pub segments: Vec<Slot>,
    pub group: ModalityGroup,
}

impl<'t, F: Scalar> ConditionFeatures<'t, F> {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Modalities outside the group are never read.
pub fn build_condition<'t, F: Scalar>(
    g: Graph<'t, F>,
    outputs: &ModalityOutputs<'t, F>,
    group: ModalityGroup,
    adapters: &AdapterSet,
) -> Result<ConditionFeatures<'t, F>> {
    let parts = outputs.for_group(group)?;
    let mut rows = Vec::with_capacity(parts.len());
    let mut segments = Vec::new();
    for (slot, out) in parts {
        segments.extend(std::iter::repeat_n(slot, out.len()));
        rows.push(adapters.get(slot).forward(g, out.sequence));
    }
    let sequence = if rows.len() == 1 { rows[0] } else { g.tape.concat_rows(&rows) };
    Ok(ConditionFeatures {
        sequence,
        segments,
        group,
    })
}

/// Masked-token prediction layer: dense, GELU, layer norm, vocabulary projection.
#[derive(Clone, Debug)]
pub struct CaptionHead {
    pub transform: Linear,
    pub ln: LayerNorm,
    pub decoder: Linear,
}

impl CaptionHead {
    pub fn new<F: Scalar>(init: &mut Init<'_, F>, hidden: usize, vocab_size: usize) -> Self {
        CaptionHead {
            transform: Linear::new(init, "fusion.caption_head.transform", hidden, hidden),
            ln: LayerNorm::new(init, "fusion.caption_head.ln", hidden),
            decoder: Linear::new(init, "fusion.caption_head.decoder", hidden, vocab_size),
        }
    }

    pub fn forward<'t, F: Scalar>(&self, g: Graph<'t, F>, hidden: Var<'t, F>) -> Var<'t, F> {
        let h = self.ln.forward(g, self.transform.forward(g, hidden).gelu());
        self.decoder.forward(g, h)
    }
}

/// Bidirectional caption encoding with cross-attention to the condition.
/// Row 0 ([CLS]) feeds the match head.
pub fn fuse_encode<'t, F: Scalar>(
    g: Graph<'t, F>,
    text: &TextEncoder,
    caption: &TextTokens,
    cond: &ConditionFeatures<'t, F>,
) -> Result<EncoderOutput<'t, F>> {
    text.encode_with(g, caption, TextMode::Match(cond.sequence))
}

/// Causal decoding: logits (len × vocab) where row `i` sees tokens `0..=i`
/// and the whole condition. `ids` are used as given (they start with [BOS]).
pub fn fuse_decode<'t, F: Scalar>(
    g: Graph<'t, F>,
    text: &TextEncoder,
    head: &CaptionHead,
    ids: &[u32],
    cond: &ConditionFeatures<'t, F>,
) -> Result<Var<'t, F>> {
    let (hidden, _) = text.forward(g, ids, ids.len(), TextMode::Generate(cond.sequence))?;
    Ok(head.forward(g, hidden))
}

/// Mask used by [`fuse_decode`]'s self-attention.
pub fn causal_mask(n: usize) -> AttentionMask {
    AttentionMask::causal(n)
}
