use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::OmniClip;
use crate::encoders::split_words;
use crate::error::{Error, Result};

/// Summary statistics of a corpus. Caption lengths are in tokenizer tokens.
///
/// For scale: the web-sourced omni-modality corpus this data model mirrors
/// publishes mean vision, audio and omni caption lengths of 12.5, 7.2 and
/// 32.4 words and a mean clip duration of 10.0 s. Those values document the
/// schema only; nothing here asserts them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_clips: usize,
    pub mean_duration_s: f64,
    pub mean_vision_caption_len: f64,
    pub mean_audio_caption_len: f64,
    pub mean_omni_caption_len: f64,
    pub concept_histogram: Option<BTreeMap<u32, usize>>,
}

fn mean_len<'a>(caps: impl Iterator<Item = &'a String>) -> f64 {
    let (total, n) = caps.fold((0usize, 0usize), |(t, n), c| (t + split_words(c).len(), n + 1));
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

pub fn corpus_stats(corpus: &[OmniClip]) -> Result<StatsReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = corpus.len();
    let concept_histogram = if corpus.iter().all(|c| c.concept.is_some()) {
        let mut h = BTreeMap::new();
        for c in corpus {
            *h.entry(c.concept.as_ref().unwrap().id).or_insert(0) += 1;
        }
        Some(h)
    } else {
        None
    };
    Ok(StatsReport {
        n_clips: n,
        mean_duration_s: corpus.iter().map(|c| c.duration_s).sum::<f64>() / n as f64,
        mean_vision_caption_len: mean_len(corpus.iter().flat_map(|c| &c.captions.vision)),
        mean_audio_caption_len: mean_len(corpus.iter().flat_map(|c| &c.captions.audio)),
        mean_omni_caption_len: mean_len(corpus.iter().filter_map(|c| c.captions.omni.as_ref())),
        concept_histogram,
    })
}
