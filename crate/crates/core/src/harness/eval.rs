use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{
    answer_question, caption_scores, generate_caption, generate_caption_greedy, max_generation, recall_at_k,
    retrieve, toy_qa_set, CachedCondition, DEFAULT_BEAM, DEFAULT_RERANK_K,
};
use crate::corpus::{read_shards, strip_subtitles, OmniClip};
use crate::encoders::TextTokens;
use crate::error::{Error, Result};
use crate::model::{prepare_corpus, ClipInputs, OmniModel};
use crate::objectives::ModalityGroup;
use crate::scalar::Scalar;

use super::checkpoint::Checkpoint;
use super::config::{parse_toml, resolve};

/// Longest answer decoded when a benchmark does not set `max_len`.
pub const DEFAULT_MAX_ANSWER: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Retrieval,
    Caption,
    Qa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub task: Task,
    pub corpus: PathBuf,
    /// Group tag or label (`vast`, `VA-T`, ...).
    pub group: String,
    /// `all`, `train` (same as `all`) or a clip index range `a..b`.
    #[serde(default = "default_split")]
    pub split: String,
    #[serde(default)]
    pub strip_subtitles: bool,
    /// Rerank depth; 0 ranks by embedding similarity only.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_beam")]
    pub beam: usize,
    /// Decode by stepwise argmax instead of beam search.
    #[serde(default)]
    pub greedy: bool,
    /// Also decode with beam 1 and greedily and report whether they agree.
    #[serde(default)]
    pub compare_greedy: bool,
    pub max_len: Option<usize>,
    /// Report path; defaults to `<benchmark>.report.json` beside the spec.
    pub out: Option<PathBuf>,
}

fn default_split() -> String {
    "all".into()
}

fn default_k() -> usize {
    DEFAULT_RERANK_K
}

fn default_beam() -> usize {
    DEFAULT_BEAM
}

impl BenchmarkSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: BenchmarkSpec = parse_toml(text, "benchmark spec")?;
        spec.group()?;
        spec.split_range(usize::MAX)?;
        if spec.beam < 1 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        Ok(spec)
    }

    /// Loads a spec; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read benchmark {}: {e}", path.display())))?;
        let mut spec = Self::from_toml(&text)?;
        let base = path.parent();
        spec.corpus = resolve(base, &spec.corpus);
        spec.out = Some(match spec.out.take() {
            Some(p) => resolve(base, &p),
            None => path.with_extension("report.json"),
        });
        Ok(spec)
    }

    pub fn group(&self) -> Result<ModalityGroup> {
        self.group.parse()
    }

    pub fn split_range(&self, n: usize) -> Result<Range<usize>> {
        let bad = || Error::Config(format!("split {:?} is not `all`, `train` or `a..b`", self.split));
        match self.split.as_str() {
            "all" | "train" => Ok(0..n),
            s => {
                let (a, b) = s.split_once("..").ok_or_else(bad)?;
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if a >= b || (n != usize::MAX && b > n) {
                    return Err(Error::Config(format!("split {a}..{b} is empty or exceeds {n} clips")));
                }
                Ok(a..b)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallMetrics {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionMetrics {
    pub exact_match: f64,
    pub token_accuracy: f64,
    pub beam: usize,
    pub greedy: bool,
    /// Whether beam-1 and greedy decoding agreed on every clip.
    pub beam1_equals_greedy: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaMetrics {
    pub exact_match: f64,
    /// Answers containing any token of their question.
    pub prefix_leaks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub clip_id: String,
    pub reference: String,
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub group: String,
    pub split: String,
    pub n: usize,
    pub retrieval: Option<RecallMetrics>,
    pub caption: Option<CaptionMetrics>,
    pub qa: Option<QaMetrics>,
    pub samples: Vec<EvalSample>,
    pub seed: u64,
    pub config_digest: String,
    pub wall_clock_s: f64,
}

/// Query tokens for each clip: the first caption of the group's source.
fn reference_captions<F: Scalar>(clips: &[ClipInputs<F>], group: ModalityGroup) -> Result<Vec<TextTokens>> {
    clips
        .iter()
        .map(|c| {
            c.captions(group.caption_source()).first().map(|t| (*t).clone()).ok_or_else(|| Error::MissingCaption {
                group: group.label().into(),
                variant: group.caption_source().name().into(),
            })
        })
        .collect()
}

/// Text→video R@1 on prepared clips with full-gallery rerank.
pub fn training_recall_at_1<F: Scalar>(model: &OmniModel<F>, clips: &[ClipInputs<F>], group: ModalityGroup) -> Result<f64> {
    let queries = reference_captions(clips, group)?;
    let lists = retrieve(model, clips, &queries, group, clips.len())?;
    let truth: Vec<usize> = (0..clips.len()).collect();
    Ok(recall_at_k(&lists, &truth, &[1])?[&1])
}

fn load_benchmark_corpus(spec: &BenchmarkSpec) -> Result<Vec<OmniClip>> {
    if !spec.corpus.is_dir() {
        return Err(Error::Config(format!("benchmark corpus {} does not exist", spec.corpus.display())));
    }
    let corpus = read_shards(&spec.corpus)?;
    let corpus = if spec.strip_subtitles { strip_subtitles(&corpus) } else { corpus };
    let range = spec.split_range(corpus.len())?;
    Ok(corpus[range].to_vec())
}

/// Runs one benchmark and writes its report when `spec.out` is set.
pub fn run_eval<F: Scalar>(ckpt: &Checkpoint<F>, spec: &BenchmarkSpec) -> Result<EvalReport> {
    let start = Instant::now();
    let group = spec.group()?;
    let corpus = load_benchmark_corpus(spec)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let model = &ckpt.model;
    let clips = prepare_corpus::<F>(&corpus, &model.vocab, &model.config)?;
    let detok = |ids: &[u32]| model.vocab.detokenize(ids);
    let mut report = EvalReport {
        task: spec.task,
        group: group.label().into(),
        split: spec.split.clone(),
        n: clips.len(),
        retrieval: None,
        caption: None,
        qa: None,
        samples: Vec::new(),
        seed: ckpt.seed,
        config_digest: ckpt.config_digest.clone(),
        wall_clock_s: 0.0,
    };
    match spec.task {
        Task::Retrieval => {
            let queries = reference_captions(&clips, group)?;
            let lists = retrieve(model, &clips, &queries, group, spec.k)?;
            let truth: Vec<usize> = (0..clips.len()).collect();
            let r = recall_at_k(&lists, &truth, &[1, 5, 10])?;
            report.retrieval = Some(RecallMetrics {
                r1: r[&1],
                r5: r[&5],
                r10: r[&10],
            });
            for (clip, list) in clips.iter().zip(&lists) {
                report.samples.push(EvalSample {
                    clip_id: clip.clip_id.clone(),
                    reference: clip.clip_id.clone(),
                    output: clips[list.ids[0]].clip_id.clone(),
                });
            }
        }
        Task::Caption => {
            let refs = reference_captions(&clips, group)?;
            let max_len = spec.max_len.unwrap_or_else(|| max_generation(model, 1));
            let outs = clips
                .par_iter()
                .map(|clip| {
                    let cond = CachedCondition::compute(model, clip, group)?;
                    let hyp = if spec.greedy {
                        generate_caption_greedy(model, &cond, max_len)?
                    } else {
                        generate_caption(model, &cond, spec.beam, max_len)?
                    };
                    let agree = if spec.compare_greedy {
                        Some(generate_caption(model, &cond, 1, max_len)? == generate_caption_greedy(model, &cond, max_len)?)
                    } else {
                        None
                    };
                    Ok((hyp, agree))
                })
                .collect::<Result<Vec<_>>>()?;
            let hyps: Vec<Vec<u32>> = outs.iter().map(|(h, _)| h.clone()).collect();
            let ref_ids: Vec<Vec<u32>> = refs.iter().map(|r| r.valid().to_vec()).collect();
            let (exact_match, token_accuracy) = caption_scores(&hyps, &ref_ids);
            report.caption = Some(CaptionMetrics {
                exact_match,
                token_accuracy,
                beam: spec.beam,
                greedy: spec.greedy,
                beam1_equals_greedy: spec.compare_greedy.then(|| outs.iter().all(|(_, a)| *a == Some(true))),
            });
            for ((clip, h), r) in clips.iter().zip(&hyps).zip(&ref_ids) {
                report.samples.push(EvalSample {
                    clip_id: clip.clip_id.clone(),
                    reference: detok(r)?,
                    output: detok(h)?,
                });
            }
        }
        Task::Qa => {
            let examples = toy_qa_set(&corpus)?;
            let max_len = spec.max_len.unwrap_or(DEFAULT_MAX_ANSWER);
            let beam = if spec.greedy { 1 } else { spec.beam };
            let answers = clips
                .par_iter()
                .zip(&examples)
                .map(|(clip, ex)| {
                    let cond = CachedCondition::compute(model, clip, group)?;
                    answer_question(model, &ex.question, &cond, max_len, beam)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut correct = 0usize;
            let mut leaks = 0usize;
            for (ex, ans) in examples.iter().zip(&answers) {
                let q = model.vocab.tokenize(&ex.question);
                let target = model.vocab.tokenize(&ex.answer);
                correct += usize::from(ans.answer_ids == target.valid());
                leaks += usize::from(ans.answer_ids.iter().any(|t| q.valid().contains(t)));
                report.samples.push(EvalSample {
                    clip_id: ex.clip_id.clone(),
                    reference: ex.answer.clone(),
                    output: ans.answer.clone(),
                });
            }
            report.qa = Some(QaMetrics {
                exact_match: correct as f64 / examples.len() as f64,
                prefix_leaks: leaks,
            });
        }
    }
    report.wall_clock_s = start.elapsed().as_secs_f64();
    if let Some(out) = &spec.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(out, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(out, e))?;
    }
    Ok(report)
}
