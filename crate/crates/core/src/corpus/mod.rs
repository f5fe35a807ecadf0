//! Omni-modality clip and caption data model, synthetic corpora, caption
//! assembly and on-disk shards.

mod prompt;
mod shards;
mod stats;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use prompt::{
    assemble_omni_prompt, compose_omni_caption, content_words, CaptionIntegrator, PromptTemplate,
    StubIntegrator, NO_SUBTITLE,
};
pub use shards::{read_shards, write_shards, Manifest, ShardEntry, SCHEMA_VERSION};
pub use stats::{corpus_stats, StatsReport};
pub use synth::{generate_synthetic_corpus, pseudo_word, SynthConfig};

/// Video frames, `t × h × w × c`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameStack {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl FrameStack {
    pub fn new(t: usize, h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if t == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::Shape(format!("frame stack dims must be positive, got {t}x{h}x{w}x{c}")));
        }
        if data.len() != t * h * w * c {
            return Err(Error::Shape(format!(
                "frame stack {t}x{h}x{w}x{c} needs {} values, got {}",
                t * h * w * c,
                data.len()
            )));
        }
        Ok(FrameStack { t, h, w, c, data })
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * self.frame_len()..(i + 1) * self.frame_len()]
    }

    /// First `n` frames (all of them if fewer exist).
    pub fn take(&self, n: usize) -> FrameStack {
        let t = n.clamp(1, self.t);
        FrameStack {
            t,
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data[..t * self.frame_len()].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: u32,
    pub word: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionSet {
    pub vision: Vec<String>,
    pub audio: Vec<String>,
    pub omni: Option<String>,
}

/// One video clip with its raw modalities and caption set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmniClip {
    pub clip_id: String,
    pub duration_s: f64,
    pub frames: FrameStack,
    pub waveform: Vec<f32>,
    pub sample_rate: u32,
    /// Empty string means no subtitle track.
    pub subtitle: String,
    pub captions: CaptionSet,
    pub concept: Option<Concept>,
}

impl OmniClip {
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::CorruptCorpus {
            clip_id: self.clip_id.clone(),
            message,
        };
        if !(self.duration_s > 0.0) {
            return Err(bad(format!("duration {} is not positive", self.duration_s)));
        }
        if self.frames.t == 0 {
            return Err(bad("no frames".into()));
        }
        let caps = self.captions.vision.iter().chain(&self.captions.audio).chain(&self.captions.omni);
        if caps.into_iter().any(|c| c.trim().is_empty()) {
            return Err(bad("empty caption".into()));
        }
        Ok(())
    }

    pub fn audio(&self) -> crate::audio::Waveform {
        crate::audio::Waveform {
            samples: self.waveform.iter().map(|&s| f64::from(s)).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Fails on duplicate clip ids or invalid clips.
pub fn validate_corpus(corpus: &[OmniClip]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for clip in corpus {
        clip.validate()?;
        if !seen.insert(clip.clip_id.as_str()) {
            return Err(Error::CorruptCorpus {
                clip_id: clip.clip_id.clone(),
                message: "duplicate clip id".into(),
            });
        }
    }
    Ok(())
}

/// Copy of the corpus with every subtitle removed.
pub fn strip_subtitles(corpus: &[OmniClip]) -> Vec<OmniClip> {
    corpus
        .iter()
        .cloned()
        .map(|mut c| {
            c.subtitle.clear();
            c
        })
        .collect()
}
