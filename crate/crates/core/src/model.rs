//! The full model: encoders, adapters, heads and temperature over one
//! parameter store, plus per-clip input preparation.

use serde::{Deserialize, Serialize};

use crate::audio::{log_mel, segment_and_pad, MelParams};
use crate::autograd::Tape;
use crate::corpus::{FrameStack, OmniClip};
use crate::encoders::tokenizer::{BOS, EOS, SEP};
use crate::encoders::{
    AudioEncoder, AudioEncoderConfig, EncoderConfig, EncoderOutput, TextEncoder, TextTokens, VisionConfig,
    VisionEncoder, Vocabulary,
};
use crate::error::{Error, Result};
use crate::fusion::{build_condition, AdapterSet, CaptionHead, ConditionFeatures, ModalityOutputs, Slot};
use crate::matrix::Matrix;
use crate::nn::{Graph, Init, ParamStore};
use crate::objectives::{CaptionSource, MatchHead, ModalityGroup, ProjectionHeads, Temperature};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vision: VisionConfig,
    pub audio: AudioEncoderConfig,
    /// Text encoder; its hidden size is the common fusion width.
    pub text: EncoderConfig,
    pub embed_dim: usize,
    pub projection_bias: bool,
    /// Frames kept per video.
    pub frames_per_video: usize,
    /// Audio clips kept per video.
    pub audio_clips: usize,
    pub clip_seconds: f64,
    pub mel_win_s: f64,
    pub mel_hop_s: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vision: VisionConfig::default(),
            audio: AudioEncoderConfig::default(),
            text: EncoderConfig {
                max_len: 48,
                ..EncoderConfig::default()
            },
            embed_dim: 32,
            projection_bias: true,
            frames_per_video: 1,
            audio_clips: 2,
            clip_seconds: 1.0,
            mel_win_s: 0.025,
            mel_hop_s: 0.010,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.vision.validate()?;
        self.audio.validate()?;
        self.text.validate("text encoder")?;
        if self.embed_dim == 0 || self.frames_per_video == 0 || self.audio_clips == 0 {
            return Err(Error::Config(
                "embed_dim, frames_per_video and audio_clips must be positive".into(),
            ));
        }
        if !(self.clip_seconds > 0.0) || !(self.mel_win_s > 0.0) || !(self.mel_hop_s > 0.0) {
            return Err(Error::Config("clip_seconds and mel window/hop must be positive".into()));
        }
        Ok(())
    }

    pub fn mel_params(&self) -> MelParams {
        MelParams {
            n_mels: self.audio.n_mels,
            win_s: self.mel_win_s,
            hop_s: self.mel_hop_s,
            ..MelParams::default()
        }
    }
}

/// A question/answer pair attached to a clip.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QaPair {
    pub question: TextTokens,
    pub answer: TextTokens,
}

impl QaPair {
    /// `[BOS] question [SEP]`, the decoding prefix.
    pub fn prefix(question: &TextTokens) -> Vec<u32> {
        let mut ids = vec![BOS];
        ids.extend_from_slice(question.valid());
        ids.push(SEP);
        ids
    }

    /// `[BOS] question [SEP] answer [EOS]` and the index where the answer starts.
    pub fn sequence(&self) -> (Vec<u32>, usize) {
        let mut ids = Self::prefix(&self.question);
        let start = ids.len();
        ids.extend_from_slice(self.answer.valid());
        ids.push(EOS);
        (ids, start)
    }
}

/// Model-ready inputs of one clip.
#[derive(Clone, Debug)]
pub struct ClipInputs<F: Scalar> {
    pub clip_id: String,
    pub frames: FrameStack,
    /// One log-Mel matrix per audio clip.
    pub audio: Vec<Matrix<F>>,
    pub subtitle: Option<TextTokens>,
    pub vision_captions: Vec<TextTokens>,
    pub audio_captions: Vec<TextTokens>,
    pub omni_caption: Option<TextTokens>,
    pub qa: Option<QaPair>,
}

impl<F: Scalar> ClipInputs<F> {
    pub fn captions(&self, source: CaptionSource) -> Vec<&TextTokens> {
        match source {
            CaptionSource::Vision => self.vision_captions.iter().collect(),
            CaptionSource::Audio => self.audio_captions.iter().collect(),
            CaptionSource::Omni => self.omni_caption.iter().collect(),
        }
    }
}

/// Every caption, subtitle and extra text, for building the vocabulary.
pub fn corpus_texts<'a>(corpus: &'a [OmniClip]) -> impl Iterator<Item = &'a str> + 'a {
    corpus.iter().flat_map(|c| {
        c.captions
            .vision
            .iter()
            .chain(&c.captions.audio)
            .chain(&c.captions.omni)
            .map(String::as_str)
            .chain(std::iter::once(c.subtitle.as_str()))
    })
}

/// Truncates frames, splits and featurizes audio, tokenizes text. An empty
/// subtitle becomes an absent subtitle modality.
pub fn prepare_clip<F: Scalar>(clip: &OmniClip, vocab: &Vocabulary, config: &ModelConfig) -> Result<ClipInputs<F>> {
    let data_err = |e: Error| match e {
        e @ Error::CorruptCorpus { .. } => e,
        e => Error::CorruptCorpus {
            clip_id: clip.clip_id.clone(),
            message: e.to_string(),
        },
    };
    let params = config.mel_params();
    let clips = segment_and_pad(&clip.audio(), config.clip_seconds).map_err(data_err)?;
    let audio = clips
        .iter()
        .take(config.audio_clips)
        .map(|w| log_mel(w, &params).map(|s| s.frames.cast::<F>()))
        .collect::<Result<Vec<_>>>()
        .map_err(data_err)?;
    let subtitle = (!clip.subtitle.trim().is_empty()).then(|| vocab.tokenize(&clip.subtitle));
    Ok(ClipInputs {
        clip_id: clip.clip_id.clone(),
        frames: clip.frames.take(config.frames_per_video.min(clip.frames.t)),
        audio,
        subtitle,
        vision_captions: clip.captions.vision.iter().map(|c| vocab.tokenize(c)).collect(),
        audio_captions: clip.captions.audio.iter().map(|c| vocab.tokenize(c)).collect(),
        omni_caption: clip.captions.omni.as_ref().map(|c| vocab.tokenize(c)),
        qa: None,
    })
}

pub fn prepare_corpus<F: Scalar>(
    corpus: &[OmniClip],
    vocab: &Vocabulary,
    config: &ModelConfig,
) -> Result<Vec<ClipInputs<F>>> {
    corpus.iter().map(|c| prepare_clip(c, vocab, config)).collect()
}

#[derive(Clone, Debug)]
pub struct OmniModel<F: Scalar> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore<F>,
    pub vision: VisionEncoder,
    pub audio: AudioEncoder,
    pub text: TextEncoder,
    pub adapters: AdapterSet,
    pub projection: ProjectionHeads,
    pub match_head: MatchHead,
    pub caption_head: CaptionHead,
    pub tau: Temperature,
}

impl<F: Scalar> OmniModel<F> {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let mut init = Init::new(&mut params, seed);
        let d = config.text.hidden;
        let (dv, da) = (config.vision.encoder.hidden, config.audio.encoder.hidden);
        let vision = VisionEncoder::new(&mut init, config.vision.clone());
        let audio = AudioEncoder::new(&mut init, config.audio.clone());
        let text = TextEncoder::new(&mut init, config.text.clone(), vocab.len());
        let adapters = AdapterSet::new(&mut init, d, dv, da, d);
        let projection = ProjectionHeads::new(&mut init, [d, dv, da], d, config.embed_dim, config.projection_bias);
        let match_head = MatchHead::new(&mut init, d);
        let caption_head = CaptionHead::new(&mut init, d, vocab.len());
        let tau = Temperature::new(&mut init);
        Ok(OmniModel {
            config,
            vocab,
            params,
            vision,
            audio,
            text,
            adapters,
            projection,
            match_head,
            caption_head,
            tau,
        })
    }

    pub fn graph<'t>(&'t self, tape: &'t Tape<F>) -> Graph<'t, F> {
        Graph::new(tape, &self.params)
    }

    /// Runs the encoders for the requested slots. A requested subtitle on a
    /// clip without one is left absent.
    pub fn encode_modalities<'t>(
        &self,
        g: Graph<'t, F>,
        clip: &ClipInputs<F>,
        slots: &[Slot],
    ) -> Result<ModalityOutputs<'t, F>> {
        let mut out = ModalityOutputs::default();
        if slots.contains(&Slot::Vision) {
            out.vision = Some(self.vision.encode(g, &clip.frames)?);
        }
        if slots.contains(&Slot::Audio) {
            out.audio = Some(self.audio.encode(g, &clip.audio)?);
        }
        if slots.contains(&Slot::Subtitle) {
            out.subtitle = match &clip.subtitle {
                Some(s) if !s.is_empty() => Some(self.text.encode(g, s)?),
                _ => None,
            };
        }
        Ok(out)
    }

    pub fn condition<'t>(
        &self,
        g: Graph<'t, F>,
        outputs: &ModalityOutputs<'t, F>,
        group: ModalityGroup,
    ) -> Result<ConditionFeatures<'t, F>> {
        build_condition(g, outputs, group, &self.adapters)
    }

    /// Unit video embedding (1 × embed_dim) from the group's global features.
    pub fn video_embedding<'t>(
        &self,
        g: Graph<'t, F>,
        outputs: &ModalityOutputs<'t, F>,
        group: ModalityGroup,
    ) -> Result<crate::autograd::Var<'t, F>> {
        let globals: Vec<_> = outputs.for_group(group)?.into_iter().map(|(_, o)| o.global()).collect();
        let cat = if globals.len() == 1 { globals[0] } else { g.tape.concat_cols(&globals) };
        self.projection.video(g, group, cat)
    }

    /// Unit caption embedding (1 × embed_dim).
    pub fn caption_embedding<'t>(&self, g: Graph<'t, F>, caption: &TextTokens) -> Result<crate::autograd::Var<'t, F>> {
        let out: EncoderOutput<'t, F> = self.text.encode(g, caption)?;
        Ok(self.projection.caption(g, out.global()))
    }
}
