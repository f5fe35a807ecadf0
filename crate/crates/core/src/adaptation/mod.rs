//! Downstream protocols: two-stage retrieval, beam-search captioning,
//! prefix-conditioned question answering and their metrics.

mod beam;
mod retrieval;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::corpus::OmniClip;
use crate::encoders::tokenizer::{BOS, EOS, MASK};
use crate::encoders::TextTokens;
use crate::error::{Error, Result};
use crate::fusion::{fuse_decode, fuse_encode, ConditionFeatures, Slot};
use crate::matrix::Matrix;
use crate::model::{ClipInputs, OmniModel, QaPair};
use crate::objectives::ModalityGroup;
use crate::scalar::Scalar;

pub use beam::{beam_search, greedy_decode, BeamHypothesis, StepScorer, DEFAULT_BEAM};
pub use retrieval::{rank_vcc, recall_at_k, rerank_vcm, RankStage, RankedList};

/// Rerank depth used when a benchmark does not set one.
pub const DEFAULT_RERANK_K: usize = 50;

/// Condition features computed once and reused across many text queries.
#[derive(Clone, Debug)]
pub struct CachedCondition<F: Scalar> {
    pub sequence: Matrix<F>,
    pub segments: Vec<Slot>,
    pub group: ModalityGroup,
}

impl<F: Scalar> CachedCondition<F> {
    pub fn compute(model: &OmniModel<F>, clip: &ClipInputs<F>, group: ModalityGroup) -> Result<Self> {
        let tape = Tape::inference();
        let g = model.graph(&tape);
        let outputs = model.encode_modalities(g, clip, group.slots())?;
        let c = model.condition(g, &outputs, group)?;
        Ok(CachedCondition {
            sequence: c.sequence.value(),
            segments: c.segments,
            group,
        })
    }

    pub fn on<'t>(&self, tape: &'t Tape<F>) -> ConditionFeatures<'t, F> {
        ConditionFeatures {
            sequence: tape.constant(self.sequence.clone()),
            segments: self.segments.clone(),
            group: self.group,
        }
    }
}

/// Unit video embeddings (one row per clip) under `group`.
pub fn embed_videos<F: Scalar>(model: &OmniModel<F>, clips: &[ClipInputs<F>], group: ModalityGroup) -> Result<Matrix<F>> {
    let rows = clips
        .par_iter()
        .map(|clip| {
            let tape = Tape::inference();
            let g = model.graph(&tape);
            let outputs = model.encode_modalities(g, clip, group.slots())?;
            Ok(model.video_embedding(g, &outputs, group)?.value().into_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_rows(&rows))
}

/// Unit caption embeddings (one row per caption).
pub fn embed_captions<F: Scalar>(model: &OmniModel<F>, captions: &[TextTokens]) -> Result<Matrix<F>> {
    let rows = captions
        .par_iter()
        .map(|c| {
            let tape = Tape::inference();
            Ok(model.caption_embedding(model.graph(&tape), c)?.value().into_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_rows(&rows))
}

/// Match probability of one caption against one cached condition.
pub fn match_probability<F: Scalar>(model: &OmniModel<F>, caption: &TextTokens, cond: &CachedCondition<F>) -> Result<f64> {
    let tape = Tape::inference();
    let g = model.graph(&tape);
    let cls = fuse_encode(g, &model.text, caption, &cond.on(&tape))?.global();
    Ok(model.match_head.probability(g, cls).item().f64())
}

/// Text→video retrieval: rank every clip for every query by embedding
/// similarity, then rerank the top `k` by match probability. Query `i`'s
/// ground truth is clip `truth[i]`.
pub fn retrieve<F: Scalar>(
    model: &OmniModel<F>,
    clips: &[ClipInputs<F>],
    queries: &[TextTokens],
    group: ModalityGroup,
    k: usize,
) -> Result<Vec<RankedList>> {
    if clips.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let gallery = embed_videos(model, clips, group)?;
    let texts = embed_captions(model, queries)?;
    let conds = if k > 0 {
        clips
            .par_iter()
            .map(|c| CachedCondition::compute(model, c, group))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    queries
        .par_iter()
        .enumerate()
        .map(|(q, caption)| {
            let first = rank_vcc(texts.row(q), &gallery)?;
            rerank_vcm(&first, k, |id| match_probability(model, caption, &conds[id]))
        })
        .collect()
}

/// Causal decoding from a fixed prefix: each step feeds
/// `prefix ++ generated ++ [MASK]` and reads the last row's distribution.
pub struct Decoder<'m, F: Scalar> {
    pub model: &'m OmniModel<F>,
    pub cond: &'m CachedCondition<F>,
    pub prefix: Vec<u32>,
}

impl<F: Scalar> StepScorer for Decoder<'_, F> {
    fn log_probs(&mut self, generated: &[u32]) -> Result<Vec<f64>> {
        let mut ids = self.prefix.clone();
        ids.extend_from_slice(generated);
        ids.push(MASK);
        if ids.len() > self.model.text.config.max_len {
            return Err(Error::Config(format!(
                "decoding needs {} positions, text max_len is {}",
                ids.len(),
                self.model.text.config.max_len
            )));
        }
        let tape = Tape::inference();
        let g = self.model.graph(&tape);
        let logits = fuse_decode(g, &self.model.text, &self.model.caption_head, &ids, &self.cond.on(&tape))?;
        let last = logits.row(ids.len() - 1).value();
        let row: Vec<f64> = last.data().iter().map(|v| v.f64()).collect();
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        Ok(row.iter().map(|v| v - lse).collect())
    }
}

/// Longest generation the decoder's position table allows after `prefix_len`.
pub fn max_generation<F: Scalar>(model: &OmniModel<F>, prefix_len: usize) -> usize {
    model.text.config.max_len.saturating_sub(prefix_len + 1)
}

/// Caption token ids (no [BOS]/[EOS]) by beam search; `beam = 1` is greedy.
pub fn generate_caption<F: Scalar>(
    model: &OmniModel<F>,
    cond: &CachedCondition<F>,
    beam: usize,
    max_len: usize,
) -> Result<Vec<u32>> {
    let mut dec = Decoder {
        model,
        cond,
        prefix: vec![BOS],
    };
    Ok(beam_search(&mut dec, beam, max_len, EOS)?.content().to_vec())
}

/// Plain argmax decoding, for comparison with `beam = 1`.
pub fn generate_caption_greedy<F: Scalar>(model: &OmniModel<F>, cond: &CachedCondition<F>, max_len: usize) -> Result<Vec<u32>> {
    let mut dec = Decoder {
        model,
        cond,
        prefix: vec![BOS],
    };
    Ok(greedy_decode(&mut dec, max_len, EOS)?.content().to_vec())
}

/// A question fixed as decoding prefix and the generated answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaInstance {
    pub question: String,
    pub answer: String,
    pub answer_ids: Vec<u32>,
    pub max_answer_len: usize,
}

/// Feeds `[BOS] question [SEP]` as a fixed prefix and decodes the answer;
/// the returned text holds only generated tokens.
pub fn answer_question<F: Scalar>(
    model: &OmniModel<F>,
    question: &str,
    cond: &CachedCondition<F>,
    max_answer_len: usize,
    beam: usize,
) -> Result<QaInstance> {
    let tokens = model.vocab.tokenize(question);
    if tokens.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    let prefix = QaPair::prefix(&tokens);
    let mut dec = Decoder {
        model,
        cond,
        prefix,
    };
    let hyp = beam_search(&mut dec, beam, max_answer_len, EOS)?;
    let answer_ids = hyp.content().to_vec();
    Ok(QaInstance {
        question: question.to_string(),
        answer: model.vocab.detokenize(&answer_ids)?,
        answer_ids,
        max_answer_len,
    })
}

const QA_TEMPLATES: [&str; 2] = ["what is shown in the video ?", "what can be heard ?"];

/// Words the toy question templates use, for vocabulary building.
pub fn qa_template_texts() -> &'static [&'static str] {
    &QA_TEMPLATES
}

/// Question/answer pair derived from a clip's concept word.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub clip_id: String,
    pub question: String,
    pub answer: String,
}

/// One example per clip: questions alternate between templates, the
/// answer is the concept word.
pub fn toy_qa_set(corpus: &[OmniClip]) -> Result<Vec<QaExample>> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let concept = c.concept.as_ref().ok_or_else(|| Error::CorruptCorpus {
                clip_id: c.clip_id.clone(),
                message: "clip has no concept to derive a question from".into(),
            })?;
            Ok(QaExample {
                clip_id: c.clip_id.clone(),
                question: QA_TEMPLATES[i % QA_TEMPLATES.len()].to_string(),
                answer: concept.word.clone(),
            })
        })
        .collect()
}

/// Exact match and position-wise token accuracy. Token accuracy counts
/// positions where both sequences agree over the longer length.
pub fn caption_scores(hyps: &[Vec<u32>], refs: &[Vec<u32>]) -> (f64, f64) {
    if hyps.is_empty() {
        return (0.0, 0.0);
    }
    let mut exact = 0usize;
    let mut acc = 0.0;
    for (h, r) in hyps.iter().zip(refs) {
        exact += usize::from(h == r);
        let n = h.len().max(r.len());
        if n == 0 {
            acc += 1.0;
        } else {
            acc += h.iter().zip(r).filter(|(a, b)| a == b).count() as f64 / n as f64;
        }
    }
    (exact as f64 / hyps.len() as f64, acc / hyps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SynthConfig};
    use crate::encoders::Vocabulary;
    use crate::model::{corpus_texts, prepare_corpus, ModelConfig};

    fn tiny() -> (OmniModel<f64>, Vec<ClipInputs<f64>>) {
        let corpus = generate_synthetic_corpus(&SynthConfig {
            n_clips: 3,
            n_concepts: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let vocab = Vocabulary::build(corpus_texts(&corpus).chain(qa_template_texts().iter().copied()));
        let mut config = ModelConfig::default();
        config.text.layers = 1;
        config.vision.encoder.layers = 1;
        config.audio.encoder.layers = 1;
        let clips = prepare_corpus(&corpus, &vocab, &config).unwrap();
        (OmniModel::new(config, vocab, 1).unwrap(), clips)
    }

    #[test]
    fn qa_contracts() {
        let (model, clips) = tiny();
        let cond = CachedCondition::compute(&model, &clips[0], ModalityGroup::Vast).unwrap();
        assert!(matches!(answer_question(&model, "  ", &cond, 3, 1), Err(Error::EmptyQuestion)));
        for (q, max) in [("what can be heard ?", 1), ("what is shown in the video ?", 4)] {
            let a = answer_question(&model, q, &cond, max, 2).unwrap();
            assert!(a.answer_ids.len() <= max);
        }
    }

    #[test]
    fn greedy_equals_beam_one_on_model() {
        let (model, clips) = tiny();
        let cond = CachedCondition::compute(&model, &clips[1], ModalityGroup::Vat).unwrap();
        let a = generate_caption(&model, &cond, 1, 6).unwrap();
        let b = generate_caption_greedy(&model, &cond, 6).unwrap();
        assert_eq!(a, b);
        assert_eq!(generate_caption(&model, &cond, 3, 6).unwrap(), generate_caption(&model, &cond, 3, 6).unwrap());
    }

    #[test]
    fn retrieval_shapes() {
        let (model, clips) = tiny();
        let queries: Vec<TextTokens> = clips.iter().map(|c| c.omni_caption.clone().unwrap()).collect();
        let lists = retrieve(&model, &clips, &queries, ModalityGroup::Vast, 2).unwrap();
        assert_eq!(lists.len(), 3);
        assert!(lists.iter().all(|l| l.len() == 3 && l.stage == RankStage::VcmReranked));
        let plain = retrieve(&model, &clips, &queries, ModalityGroup::Vast, 0).unwrap();
        assert!(plain.iter().all(|l| l.stage == RankStage::Vcc));
    }

    #[test]
    fn scores() {
        let (em, acc) = caption_scores(&[vec![1, 2, 3], vec![1, 2]], &[vec![1, 2, 3], vec![1, 3, 4]]);
        assert_eq!(em, 0.5);
        assert!((acc - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-12);
    }
}
