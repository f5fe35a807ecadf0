//! Concept-injected synthetic corpora.
//!
//! Every clip carries one latent concept. The concept fixes a frame
//! prototype, a tone frequency, a subtitle word and the word that appears in
//! every caption, so each modality independently identifies it.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    assemble_omni_prompt, compose_omni_caption, CaptionSet, Concept, FrameStack, OmniClip, PromptTemplate,
    StubIntegrator,
};
use crate::audio::{hz_to_mel, mel_to_hz};
use crate::error::{Error, Result};

const VISION_TEMPLATES: &[&str] = &[
    "a {c} in view",
    "the {c} on screen",
    "a picture of a {c}",
    "a {c} is visible",
    "the {c} appears",
];

const AUDIO_TEMPLATES: &[&str] = &[
    "the sound of a {c}",
    "a {c} can be heard",
    "noise from the {c}",
    "the {c} is audible",
    "a {c} sound",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_clips: usize,
    pub n_concepts: usize,
    pub seed: u64,
    /// Size of the pseudo-word pool concept and distractor words come from.
    pub vocab_size: usize,
    /// (H, W, C)
    pub frame_shape: (usize, usize, usize),
    pub sample_rate: u32,
    #[serde(default = "default_frames")]
    pub frames_per_clip: usize,
    #[serde(default = "default_duration")]
    pub mean_duration_s: f64,
    #[serde(default = "default_caps")]
    pub vision_captions: usize,
    #[serde(default = "default_caps")]
    pub audio_captions: usize,
    #[serde(default = "default_frame_noise")]
    pub frame_noise: f64,
    #[serde(default = "default_audio_noise")]
    pub audio_noise: f64,
    #[serde(default)]
    pub prompt_template: PromptTemplate,
}

fn default_frames() -> usize {
    2
}
fn default_duration() -> f64 {
    2.0
}
fn default_caps() -> usize {
    5
}
fn default_frame_noise() -> f64 {
    0.05
}
fn default_audio_noise() -> f64 {
    0.02
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_clips: 32,
            n_concepts: 32,
            seed: 7,
            vocab_size: 64,
            frame_shape: (16, 16, 3),
            sample_rate: 16_000,
            frames_per_clip: default_frames(),
            mean_duration_s: default_duration(),
            vision_captions: default_caps(),
            audio_captions: default_caps(),
            frame_noise: default_frame_noise(),
            audio_noise: default_audio_noise(),
            prompt_template: PromptTemplate::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_clips < 1 {
            return fail("n_clips must be at least 1".into());
        }
        if self.n_concepts < 1 || self.n_concepts > self.vocab_size {
            return fail(format!(
                "n_concepts ({}) must be in 1..=vocab_size ({})",
                self.n_concepts, self.vocab_size
            ));
        }
        let (h, w, c) = self.frame_shape;
        if h == 0 || w == 0 || c == 0 || self.frames_per_clip == 0 {
            return fail("frame shape and frames_per_clip must be positive".into());
        }
        if self.sample_rate == 0 || !(self.mean_duration_s > 0.0) {
            return fail("sample_rate and mean_duration_s must be positive".into());
        }
        if self.vision_captions < 3 || self.audio_captions < 3 {
            return fail("at least 3 vision and 3 audio captions are needed for prompt assembly".into());
        }
        if !(self.frame_noise >= 0.0 && self.audio_noise >= 0.0) {
            return fail("noise levels must be non-negative".into());
        }
        Ok(())
    }
}

/// The `i`-th word of the pseudo-word pool: consonant-vowel syllables,
/// injective in `i`.
pub fn pseudo_word(i: usize) -> String {
    const CONS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let n_syl = CONS.len() * VOWELS.len();
    let syl = |k: usize| {
        let k = k % n_syl;
        [CONS[k / VOWELS.len()] as char, VOWELS[k % VOWELS.len()] as char]
    };
    let mut w = String::new();
    w.extend(syl(i));
    w.extend(syl(i / n_syl));
    let mut rest = i / (n_syl * n_syl);
    while rest > 0 {
        rest -= 1;
        w.extend(syl(rest));
        rest /= n_syl;
    }
    w
}

/// Tone frequency assigned to a concept, spaced evenly on the Mel scale.
fn concept_tone(concept: usize, n_concepts: usize, sample_rate: u32) -> f64 {
    let lo = hz_to_mel(200.0);
    let hi = hz_to_mel(0.4 * f64::from(sample_rate));
    let frac = (concept as f64 + 0.5) / n_concepts as f64;
    mel_to_hz(lo + frac * (hi - lo))
}

fn concept_rng(seed: u64, concept: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1u64 << 40) + concept as u64);
    rng
}

pub fn generate_synthetic_corpus(config: &SynthConfig) -> Result<Vec<OmniClip>> {
    config.validate()?;
    let (h, w, c) = config.frame_shape;
    let prototypes: Vec<Vec<f64>> = (0..config.n_concepts)
        .map(|k| {
            let mut rng = concept_rng(config.seed, k);
            (0..h * w * c).map(|_| rng.random::<f64>()).collect()
        })
        .collect();
    let integrator = StubIntegrator::new(config.prompt_template.clone());
    (0..config.n_clips)
        .map(|i| generate_clip(config, i, &prototypes, &integrator))
        .collect()
}

fn fill(templates: &[&str], n: usize, word: &str) -> Vec<String> {
    (0..n).map(|k| templates[k % templates.len()].replace("{c}", word)).collect()
}

fn generate_clip(
    config: &SynthConfig,
    index: usize,
    prototypes: &[Vec<f64>],
    integrator: &StubIntegrator,
) -> Result<OmniClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let concept = index % config.n_concepts;
    let word = pseudo_word(concept);
    let (h, w, c) = config.frame_shape;

    let frame_noise = Normal::new(0.0, config.frame_noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut frames = Vec::with_capacity(config.frames_per_clip * h * w * c);
    for _ in 0..config.frames_per_clip {
        for &p in &prototypes[concept] {
            let v = if config.frame_noise > 0.0 { p + frame_noise.sample(&mut rng) } else { p };
            frames.push(v.clamp(0.0, 1.0) as f32);
        }
    }

    let sr = f64::from(config.sample_rate);
    let duration_target = config.mean_duration_s * rng.random_range(0.75..1.25);
    let n_samples = ((duration_target * sr).round() as usize).max(1);
    let duration_s = n_samples as f64 / sr;
    let tone = concept_tone(concept, config.n_concepts, config.sample_rate);
    let phase = rng.random::<f64>() * 2.0 * PI;
    let audio_noise = Normal::new(0.0, config.audio_noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let waveform = (0..n_samples)
        .map(|t| {
            let s = 0.5 * (2.0 * PI * tone * t as f64 / sr + phase).sin();
            let n = if config.audio_noise > 0.0 { audio_noise.sample(&mut rng) } else { 0.0 };
            (s + n) as f32
        })
        .collect();

    let distractor = if config.vocab_size > config.n_concepts {
        pseudo_word(rng.random_range(config.n_concepts..config.vocab_size))
    } else {
        "hello".to_string()
    };
    let subtitle = format!("look {word} {distractor}");

    let mut captions = CaptionSet {
        vision: fill(VISION_TEMPLATES, config.vision_captions, &word),
        audio: fill(AUDIO_TEMPLATES, config.audio_captions, &word),
        omni: None,
    };
    let prompt = assemble_omni_prompt(&captions, &subtitle, &config.prompt_template, &mut rng)?;
    captions.omni = Some(compose_omni_caption(&prompt, integrator)?);

    Ok(OmniClip {
        clip_id: format!("clip{index:05}"),
        duration_s,
        frames: FrameStack::new(config.frames_per_clip, h, w, c, frames)?,
        waveform,
        sample_rate: config.sample_rate,
        subtitle,
        captions,
        concept: Some(Concept {
            id: concept as u32,
            word,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(n_clips: usize, n_concepts: usize) -> SynthConfig {
        SynthConfig {
            n_clips,
            n_concepts,
            frame_shape: (8, 8, 3),
            sample_rate: 8000,
            mean_duration_s: 0.5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn count_and_unique_ids() {
        let corpus = generate_synthetic_corpus(&small(32, 8)).unwrap();
        assert_eq!(corpus.len(), 32);
        let ids: HashSet<_> = corpus.iter().map(|c| &c.clip_id).collect();
        assert_eq!(ids.len(), 32);
        super::super::validate_corpus(&corpus).unwrap();
    }

    #[test]
    fn deterministic() {
        let cfg = small(6, 3);
        assert_eq!(generate_synthetic_corpus(&cfg).unwrap(), generate_synthetic_corpus(&cfg).unwrap());
        let other = SynthConfig { seed: 8, ..cfg.clone() };
        assert_ne!(generate_synthetic_corpus(&cfg).unwrap(), generate_synthetic_corpus(&other).unwrap());
    }

    #[test]
    fn concept_word_shared_only_within_concept() {
        let corpus = generate_synthetic_corpus(&small(12, 4)).unwrap();
        for a in &corpus {
            for b in &corpus {
                let (ca, cb) = (a.concept.as_ref().unwrap(), b.concept.as_ref().unwrap());
                let omni_b: Vec<String> = crate::encoders::split_words(b.captions.omni.as_ref().unwrap());
                let shares = omni_b.contains(&ca.word);
                assert_eq!(shares, ca.id == cb.id, "{} vs {}", a.clip_id, b.clip_id);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(matches!(generate_synthetic_corpus(&small(0, 1)), Err(Error::Config(_))));
        let too_many = SynthConfig { n_concepts: 100, vocab_size: 10, ..small(4, 4) };
        assert!(matches!(generate_synthetic_corpus(&too_many), Err(Error::Config(_))));
    }

    #[test]
    fn pseudo_words_are_distinct() {
        let words: HashSet<_> = (0..20_000).map(pseudo_word).collect();
        assert_eq!(words.len(), 20_000);
    }
}
