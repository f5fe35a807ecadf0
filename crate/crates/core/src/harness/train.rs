use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation::{qa_template_texts, toy_qa_set};
use crate::autograd::Tape;
use crate::corpus::{read_shards, OmniClip};
use crate::encoders::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{corpus_texts, prepare_corpus, ClipInputs, OmniModel, QaPair};
use crate::objectives::{grouped_loss, GroupPlan, LossBundle, ObjectiveKind};
use crate::scalar::Scalar;

use super::checkpoint::{Checkpoint, RngState};
use super::config::{GroupMode, TrainConfig};
use super::eval::training_recall_at_1;
use super::optim::{linear_decay, AdamW};

/// Offset separating the sampling stream from parameter initialization.
const SAMPLER_SEED_OFFSET: u64 = 0x5eed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    /// Temperature after the update.
    pub tau: f64,
    /// Group trained this step in `sample` mode.
    pub group: Option<String>,
    pub corpus: usize,
    pub losses: LossBundle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub recall_at_1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub config_digest: String,
    pub steps: Vec<StepLog>,
    pub evals: Vec<EvalPoint>,
    pub wall_clock_s: f64,
}

impl MetricsReport {
    /// Total loss per step, in order.
    pub fn loss_trace(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.losses.total).collect()
    }
}

/// Reads every configured corpus; a missing directory is a config error.
pub fn load_corpora(config: &TrainConfig) -> Result<Vec<Vec<OmniClip>>> {
    config
        .corpora
        .iter()
        .map(|src| {
            if !src.path.is_dir() {
                return Err(Error::Config(format!("corpus directory {} does not exist", src.path.display())));
            }
            read_shards(&src.path)
        })
        .collect()
}

/// Vocabulary over every corpus text plus the question templates.
pub fn build_vocabulary(corpora: &[Vec<OmniClip>]) -> Vocabulary {
    Vocabulary::build(
        corpora
            .iter()
            .flat_map(|c| corpus_texts(c))
            .chain(qa_template_texts().iter().copied()),
    )
}

/// Training state: model, optimizer, sampler and prepared corpora.
pub struct Trainer<F: Scalar> {
    pub config: TrainConfig,
    pub model: OmniModel<F>,
    pub optimizer: AdamW<F>,
    /// Optimizer steps taken so far.
    pub step: usize,
    rng: ChaCha8Rng,
    corpora: Vec<Vec<ClipInputs<F>>>,
    plans: Vec<GroupPlan>,
    corpus_pick: Option<WeightedIndex<f64>>,
}

impl<F: Scalar> Trainer<F> {
    /// Fresh model initialized from `config.seed`.
    pub fn new(config: TrainConfig, corpora: &[Vec<OmniClip>]) -> Result<Self> {
        config.validate()?;
        let vocab = build_vocabulary(corpora);
        let model = OmniModel::new(config.model.clone(), vocab, config.seed)?;
        let optimizer = AdamW::new(&model.params, config.weight_decay);
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(SAMPLER_SEED_OFFSET));
        Self::assemble(config, model, optimizer, 0, rng, corpora)
    }

    /// Continues from a checkpoint; model shape and vocabulary come from it.
    pub fn resume(config: TrainConfig, ckpt: Checkpoint<F>, corpora: &[Vec<OmniClip>]) -> Result<Self> {
        config.validate()?;
        if ckpt.model.config != config.model {
            return Err(Error::Config("model settings differ from the checkpoint being resumed".into()));
        }
        if ckpt.step >= config.steps {
            return Err(Error::Config(format!(
                "checkpoint is at step {}, schedule ends at {}",
                ckpt.step, config.steps
            )));
        }
        let optimizer = match ckpt.optimizer {
            Some(mut o) => {
                o.weight_decay = config.weight_decay;
                o
            }
            None => AdamW::new(&ckpt.model.params, config.weight_decay),
        };
        let rng = ckpt.rng.restore()?;
        Self::assemble(config, ckpt.model, optimizer, ckpt.step, rng, corpora)
    }

    /// Builds from the config alone: reads corpora and resumes if asked.
    pub fn from_config(config: TrainConfig) -> Result<Self> {
        let corpora = load_corpora(&config)?;
        match &config.resume {
            Some(path) => {
                let ckpt = Checkpoint::load(path)?;
                Self::resume(config, ckpt, &corpora)
            }
            None => Self::new(config, &corpora),
        }
    }

    fn assemble(
        config: TrainConfig,
        model: OmniModel<F>,
        optimizer: AdamW<F>,
        step: usize,
        rng: ChaCha8Rng,
        corpora: &[Vec<OmniClip>],
    ) -> Result<Self> {
        let spec = config.objective_spec()?;
        let plans = config.plans()?;
        let with_qa = spec.uses(ObjectiveKind::Qa);
        let mut prepared = Vec::with_capacity(corpora.len());
        for corpus in corpora {
            if corpus.is_empty() {
                return Err(Error::EmptyCorpus);
            }
            let mut clips = prepare_corpus::<F>(corpus, &model.vocab, &model.config)?;
            if with_qa {
                for (clip, ex) in clips.iter_mut().zip(toy_qa_set(corpus)?) {
                    clip.qa = Some(QaPair {
                        question: model.vocab.tokenize(&ex.question),
                        answer: model.vocab.tokenize(&ex.answer),
                    });
                }
            }
            prepared.push(clips);
        }
        let corpus_pick = if prepared.len() > 1 {
            let ratios = config.corpora.iter().map(|c| c.ratio);
            Some(WeightedIndex::new(ratios).map_err(|e| Error::Config(format!("corpus ratios: {e}")))?)
        } else {
            None
        };
        Ok(Trainer {
            config,
            model,
            optimizer,
            step,
            rng,
            corpora: prepared,
            plans,
            corpus_pick,
        })
    }

    pub fn corpus(&self, i: usize) -> &[ClipInputs<F>] {
        &self.corpora[i]
    }

    /// Global step at which [`Trainer::run`] stops.
    pub fn end_step(&self) -> usize {
        self.config.stop_at.unwrap_or(self.config.steps)
    }

    /// One optimizer step.
    pub fn step_once(&mut self) -> Result<StepLog> {
        let t = self.step;
        let lr = linear_decay(self.config.lr, t, self.config.steps);
        let ci = match &self.corpus_pick {
            Some(w) => w.sample(&mut self.rng),
            None => 0,
        };
        let n = self.corpora[ci].len();
        let idx = rand::seq::index::sample(&mut self.rng, n, self.config.batch_size.min(n)).into_vec();
        let batch: Vec<ClipInputs<F>> = idx.iter().map(|&i| self.corpora[ci][i].clone()).collect();
        let (plans, group) = match self.config.group_mode {
            GroupMode::Sum => (self.plans.clone(), None),
            GroupMode::Sample => {
                let p = self.plans[self.rng.random_range(0..self.plans.len())].clone();
                let tag = p.group.tag().to_string();
                (vec![p], Some(tag))
            }
        };
        let abort = |e: Error| match e {
            Error::NonFinite { component } => Error::NumericalAbort { step: t, component },
            e => e,
        };
        let opts = self.config.loss_options();
        let (grads, losses): (HashMap<_, _>, LossBundle) = {
            let tape = Tape::new();
            let g = self.model.graph(&tape);
            let (total, losses) = grouped_loss(g, &self.model, &batch, &plans, &opts, &mut self.rng).map_err(abort)?;
            (tape.backward(total).into_params(), losses)
        };
        self.optimizer.step(&mut self.model.params, &grads, lr).map_err(abort)?;
        self.model.tau.clamp(&mut self.model.params);
        self.step += 1;
        Ok(StepLog {
            step: t,
            lr,
            tau: self.model.tau.value(&self.model.params).f64(),
            group,
            corpus: ci,
            losses,
        })
    }

    /// Trains up to [`Trainer::end_step`], with periodic retrieval checks.
    pub fn run(&mut self) -> Result<MetricsReport> {
        let start = Instant::now();
        let mut report = MetricsReport {
            seed: self.config.seed,
            config_digest: self.config.digest(),
            steps: Vec::new(),
            evals: Vec::new(),
            wall_clock_s: 0.0,
        };
        while self.step < self.end_step() {
            report.steps.push(self.step_once()?);
            let every = self.config.eval_every;
            if every > 0 && self.step % every == 0 {
                report.evals.push(EvalPoint {
                    step: self.step,
                    recall_at_1: self.training_recall()?,
                });
            }
        }
        report.wall_clock_s = start.elapsed().as_secs_f64();
        Ok(report)
    }

    /// R@1 on the first corpus under the first retrieval group.
    pub fn training_recall(&self) -> Result<f64> {
        let group = self
            .plans
            .iter()
            .find(|p| p.ret)
            .unwrap_or(&self.plans[0])
            .group;
        training_recall_at_1(&self.model, &self.corpora[0], group)
    }

    pub fn checkpoint(&self) -> Checkpoint<F> {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.optimizer.clone()),
            step: self.step,
            seed: self.config.seed,
            rng: RngState::capture(&self.rng),
            config_digest: self.config.digest(),
        }
    }

    /// Writes `checkpoint.bin`, `vocab.txt` and `metrics.json` into `dir`.
    pub fn write_outputs(&self, dir: &Path, report: &MetricsReport) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.checkpoint().save(&dir.join("checkpoint.bin"))?;
        self.model.vocab.save(&dir.join("vocab.txt"))?;
        let path = dir.join("metrics.json");
        fs::write(&path, serde_json::to_vec_pretty(report)?).map_err(|e| Error::io(&path, e))
    }
}

/// Trains per `config`, writing outputs when `out_dir` is set.
pub fn train<F: Scalar>(config: TrainConfig) -> Result<(Checkpoint<F>, MetricsReport)> {
    let mut trainer = Trainer::<F>::from_config(config)?;
    let report = trainer.run()?;
    if let Some(dir) = &trainer.config.out_dir {
        trainer.write_outputs(dir, &report)?;
    }
    Ok((trainer.checkpoint(), report))
}
