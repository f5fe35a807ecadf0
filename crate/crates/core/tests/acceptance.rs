//! Acceptance suite. Runs every criterion at its stated tolerance, prints
//! one PASS/FAIL line per criterion and exits nonzero if any fails.
//!
//! Pass criterion numbers as arguments to run a subset.

use std::path::{Path, PathBuf};
use std::time::Instant;

use omnivl::adaptation::CachedCondition;
use omnivl::audio::{hamming_window, log_mel, MelFilterbank, MelParams, Waveform};
use omnivl::autograd::{Tape, Var};
use omnivl::corpus::{generate_synthetic_corpus, write_shards, OmniClip, SynthConfig};
use omnivl::encoders::tokenizer::{BOS, EOS, MASK, RESERVED};
use omnivl::encoders::{EncoderConfig, Vocabulary};
use omnivl::fusion::fuse_decode;
use omnivl::harness::{
    build_vocabulary, run_eval, BenchmarkSpec, Checkpoint, CorpusSource, Task, TrainConfig, Trainer,
};
use omnivl::model::{corpus_texts, prepare_corpus, ClipInputs};
use omnivl::objectives::{
    bce_loss, encode_modalities, group_terms, match_probabilities, mine_hard_negatives, vcc_loss, vcg_mask,
    vcg_nll, GroupPlan, LossOptions, MiningMode, ModalityGroup, VCG_MASK_RATIO,
};
use omnivl::{Error, Matrix, ModelConfig, OmniModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect(),
    )
}

fn unit_rows(m: &Matrix<f64>) -> Matrix<f64> {
    let rows: Vec<Vec<f64>> = (0..m.rows())
        .map(|r| {
            let n = m.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            m.row(r).iter().map(|x| x / n).collect()
        })
        .collect();
    Matrix::from_rows(&rows)
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    mx + xs.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

// Loop oracles.

fn vcc_oracle(v: &Matrix<f64>, c: &Matrix<f64>, tau: f64) -> f64 {
    let b = v.rows();
    let sim = |i: usize, j: usize| tau * (0..v.cols()).map(|k| v.get(i, k) * c.get(j, k)).sum::<f64>();
    let mut v2c = 0.0;
    let mut c2v = 0.0;
    for i in 0..b {
        v2c += logsumexp((0..b).map(|j| sim(i, j))) - sim(i, i);
        c2v += logsumexp((0..b).map(|j| sim(j, i))) - sim(i, i);
    }
    0.5 * (v2c / b as f64 + c2v / b as f64)
}

fn vcm_oracle(logits: &Matrix<f64>, labels: &[bool]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let p = 1.0 / (1.0 + (logits.get(i, 0) - logits.get(i, 1)).exp());
        let p = p.clamp(1e-7, 1.0 - 1e-7);
        total -= if y { p.ln() } else { (1.0 - p).ln() };
    }
    total / labels.len() as f64
}

fn vcg_oracle(logits: &Matrix<f64>, positions: &[usize], targets: &[u32]) -> f64 {
    let mut total = 0.0;
    for (&p, &t) in positions.iter().zip(targets) {
        let row = logits.row(p);
        total += logsumexp(row.iter().copied()) - row[t as usize];
    }
    total / positions.len() as f64
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let b = rng.random_range(2..=8);
        let d = rng.random_range(2..=16);
        let v = unit_rows(&randn(&mut rng, b, d, 1.0));
        let c = unit_rows(&randn(&mut rng, b, d, 1.0));
        let tau = rng.random_range(0.5..20.0);
        let tape = Tape::<f64>::new();
        let got = vcc_loss(tape.constant(v.clone()), tape.constant(c.clone()), tape.scalar(tau))
            .unwrap()
            .item();
        worst = worst.max((got - vcc_oracle(&v, &c, tau)).abs());

        let n = 3 * b;
        let logits = randn(&mut rng, n, 2, 3.0);
        let labels: Vec<bool> = (0..n).map(|i| i < b || rng.random_bool(0.1)).collect();
        let got = bce_loss(match_probabilities(tape.constant(logits.clone())), &labels)
            .unwrap()
            .item();
        worst = worst.max((got - vcm_oracle(&logits, &labels)).abs());

        let len = rng.random_range(2..=20);
        let vocab = rng.random_range(10..=40);
        let ids: Vec<u32> = (0..len)
            .map(|_| rng.random_range(RESERVED.len() as u32..vocab as u32))
            .collect();
        let masked = vcg_mask(&ids, VCG_MASK_RATIO, &mut rng).unwrap();
        let logits = randn(&mut rng, len, vocab, 2.0);
        let got = vcg_nll(tape.constant(logits.clone()), &masked.positions, &masked.targets)
            .unwrap()
            .item();
        worst = worst.max((got - vcg_oracle(&logits, &masked.positions, &masked.targets)).abs());
    }
    outcome(worst <= 1e-6, format!("max |loss - oracle| = {worst:.2e} over 20 trials x 3 losses (tol 1e-6)"))
}

// Gradient check.

const FD_STEP: f64 = 1e-5;
/// Denominator floor. Central differences at h = 1e-5 carry roundoff of
/// about eps·|L|/h ≈ 1e-10 here, so entries below this scale compare noise.
const REL_FLOOR: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Worst relative error of `f`'s tape gradient against central differences,
/// over every entry of every input.
fn check_inputs(inputs: &[Matrix<f64>], f: impl for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>) -> f64 {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out);
    let eval = |xs: &[Matrix<f64>]| {
        let t = Tape::inference();
        let vs: Vec<_> = xs.iter().map(|m| t.constant(m.clone())).collect();
        f(&t, &vs).item()
    };
    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.of(*var).cloned().unwrap_or_else(|| Matrix::zeros(var.rows(), var.cols()));
        for k in 0..inputs[i].data().len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[k] += FD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[k] -= 2.0 * FD_STEP;
            let down = eval(&xs);
            worst = worst.max(rel_err(analytic.data()[k], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

fn grad_config() -> (ModelConfig, SynthConfig) {
    let enc = |hidden, patch, max_len| EncoderConfig {
        hidden,
        layers: 1,
        heads: 2,
        ffn_hidden: 8,
        patch,
        max_len,
    };
    let mut model = ModelConfig::default();
    model.vision.encoder = enc(4, 4, 8);
    model.vision.image = (8, 8, 1);
    model.vision.max_frames = 1;
    model.audio.encoder = enc(4, 4, 8);
    model.audio.n_mels = 8;
    model.audio.max_time_patches = 2;
    model.text = enc(4, 1, 40);
    model.embed_dim = 4;
    model.audio_clips = 1;
    model.clip_seconds = 0.1;
    let synth = SynthConfig {
        n_clips: 3,
        n_concepts: 3,
        vocab_size: 4,
        frame_shape: (8, 8, 1),
        frames_per_clip: 1,
        mean_duration_s: 0.2,
        vision_captions: 3,
        audio_captions: 3,
        ..SynthConfig::default()
    };
    (model, synth)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut lines = Vec::new();
    let mut ok = true;

    // Losses against their direct inputs.
    let v = randn(&mut rng, 4, 5, 1.0);
    let c = randn(&mut rng, 4, 5, 1.0);
    let vcc = check_inputs(&[v, c, Matrix::scalar(3.0)], |_, x| {
        vcc_loss(x[0].l2_normalize_rows(), x[1].l2_normalize_rows(), x[2]).unwrap()
    });
    let labels = [true, true, false, false, true, false];
    let vcm = check_inputs(&[randn(&mut rng, 6, 2, 1.0)], |_, x| {
        bce_loss(match_probabilities(x[0]), &labels).unwrap()
    });
    let vcg = check_inputs(&[randn(&mut rng, 7, 9, 1.0)], |_, x| vcg_nll(x[0], &[1, 3, 4, 6], &[2, 8, 0, 5]).unwrap());
    for (name, e) in [("vcc/inputs", vcc), ("vcm/inputs", vcm), ("vcg/inputs", vcg)] {
        ok &= e < 1e-4;
        lines.push(format!("{name} {e:.1e}"));
    }

    // Every model parameter through one group's terms and their sum.
    let (config, synth) = grad_config();
    let corpus = generate_synthetic_corpus(&synth).unwrap();
    let vocab = Vocabulary::build(corpus_texts(&corpus));
    let clips: Vec<ClipInputs<f64>> = prepare_corpus(&corpus, &vocab, &config).unwrap();
    let mut model = OmniModel::<f64>::new(config, vocab, 5).unwrap();
    let n_params = model.params.num_scalars();
    let plan = GroupPlan::full(ModalityGroup::Vast);
    let opts = LossOptions {
        mining: MiningMode::Deterministic,
        mask_ratio: VCG_MASK_RATIO,
    };
    let terms_of = |model: &OmniModel<f64>, tape: &Tape<f64>| -> [f64; 4] {
        let g = model.graph(tape);
        let mut r = ChaCha8Rng::seed_from_u64(99);
        let outs = encode_modalities(g, model, &clips, ModalityGroup::Vast.slots()).unwrap();
        let t = group_terms(g, model, &clips, &outs, &plan, &opts, &mut r).unwrap();
        [t.vcc.unwrap().item(), t.vcm.unwrap().item(), t.vcg.unwrap().item(), t.total(g).item()]
    };
    let analytic: Vec<_> = (0..4)
        .map(|which| {
            let tape = Tape::new();
            let g = model.graph(&tape);
            let mut r = ChaCha8Rng::seed_from_u64(99);
            let outs = encode_modalities(g, &model, &clips, ModalityGroup::Vast.slots()).unwrap();
            let t = group_terms(g, &model, &clips, &outs, &plan, &opts, &mut r).unwrap();
            let out = [t.vcc.unwrap(), t.vcm.unwrap(), t.vcg.unwrap(), t.total(g)][which];
            tape.backward(out).into_params()
        })
        .collect();
    let ids: Vec<_> = model.params.ids().collect();
    let mut worst = [0.0f64; 4];
    for &id in &ids {
        for k in 0..model.params.value(id).data().len() {
            let x0 = model.params.value(id).data()[k];
            model.params.value_mut(id).data_mut()[k] = x0 + FD_STEP;
            let up = terms_of(&model, &Tape::inference());
            model.params.value_mut(id).data_mut()[k] = x0 - FD_STEP;
            let down = terms_of(&model, &Tape::inference());
            model.params.value_mut(id).data_mut()[k] = x0;
            for w in 0..4 {
                let a = analytic[w].get(&id).map_or(0.0, |g| g.data()[k]);
                worst[w] = worst[w].max(rel_err(a, (up[w] - down[w]) / (2.0 * FD_STEP)));
            }
        }
    }
    for (name, e) in ["vcc", "vcm", "vcg", "grouped"].iter().zip(worst) {
        ok &= e < 1e-4;
        lines.push(format!("{name}/params {e:.1e}"));
    }
    ok &= n_params <= 5000;
    outcome(
        ok,
        format!("{n_params} params (<= 5000), max rel err: {} (tol 1e-4)", lines.join(", ")),
    )
}

fn small_model(seed: u64) -> (OmniModel<f64>, Vec<ClipInputs<f64>>) {
    let corpus = generate_synthetic_corpus(&SynthConfig {
        n_clips: 4,
        n_concepts: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut config = ModelConfig::default();
    config.text.hidden = 16;
    config.text.ffn_hidden = 32;
    let vocab = build_vocabulary(std::slice::from_ref(&corpus));
    let clips = prepare_corpus(&corpus, &vocab, &config).unwrap();
    (OmniModel::new(config, vocab, seed).unwrap(), clips)
}

fn criterion_3() -> Outcome {
    let (model, clips) = small_model(3);
    let conds: Vec<_> = clips
        .iter()
        .map(|c| CachedCondition::compute(&model, c, ModalityGroup::Vast).unwrap())
        .collect();
    let v = model.vocab.len() as u32;
    let max_len = model.text.config.max_len;
    let mut failures = 0;
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let len = rng.random_range(2..=max_len);
        let mut ids: Vec<u32> = (0..len).map(|_| rng.random_range(RESERVED.len() as u32..v)).collect();
        ids[0] = BOS;
        let cut = rng.random_range(1..len);
        let mut changed = ids.clone();
        for t in &mut changed[cut..] {
            *t = if *t == MASK { EOS } else { MASK };
        }
        let cond = &conds[case as usize % conds.len()];
        let run = |ids: &[u32]| {
            let tape = Tape::inference();
            let g = model.graph(&tape);
            fuse_decode(g, &model.text, &model.caption_head, ids, &cond.on(&tape)).unwrap().value()
        };
        let (a, b) = (run(&ids), run(&changed));
        if (0..cut).any(|r| a.row(r) != b.row(r)) || (cut..len).all(|r| a.row(r) == b.row(r)) {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("{failures}/50 cases changed logits before the perturbed position"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ids: Vec<u32> = (0..10_000).map(|_| rng.random_range(RESERVED.len() as u32..500)).collect();
    let long = vcg_mask(&ids, VCG_MASK_RATIO, &mut rng).unwrap();
    let frac_long = long.positions.len() as f64 / ids.len() as f64;

    // Many caption-length sequences totalling at least 10k tokens.
    let (mut masked, mut total) = (0usize, 0usize);
    while total < 10_000 {
        let len = rng.random_range(5..=30);
        let seq: Vec<u32> = (0..len).map(|_| rng.random_range(RESERVED.len() as u32..500)).collect();
        masked += vcg_mask(&seq, VCG_MASK_RATIO, &mut rng).unwrap().positions.len();
        total += len;
    }
    let frac_many = masked as f64 / total as f64;
    let ten = vcg_mask(&ids[..10], VCG_MASK_RATIO, &mut rng).unwrap();
    let in_range = |f: f64| (0.58..=0.62).contains(&f);
    outcome(
        in_range(frac_long) && in_range(frac_many) && ten.positions.len() == 6,
        format!(
            "masked fraction {frac_long:.4} (one 10k sequence), {frac_many:.4} ({total} tokens in short sequences); length 10 masks {}",
            ten.positions.len()
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut self_picks = 0;
    for b in 2..=64 {
        for _ in 0..5 {
            let sims = randn(&mut rng, b, b, 3.0);
            for mode in [MiningMode::Stochastic, MiningMode::Deterministic] {
                let neg = mine_hard_negatives(&sims, &mut rng, mode).unwrap();
                self_picks += neg.iter().enumerate().filter(|(i, j)| i == *j).count();
            }
        }
    }
    let b = 6;
    let sims = randn(&mut rng, b, b, 1.5);
    let draws = 10_000;
    let mut counts = vec![vec![0usize; b]; b];
    for _ in 0..draws {
        for (i, j) in mine_hard_negatives(&sims, &mut rng, MiningMode::Stochastic)
            .unwrap()
            .into_iter()
            .enumerate()
        {
            counts[i][j] += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..b {
        let z: f64 = (0..b).filter(|&j| j != i).map(|j| sims.get(i, j).exp()).sum();
        for j in (0..b).filter(|&j| j != i) {
            let expected = sims.get(i, j).exp() / z;
            worst = worst.max((counts[i][j] as f64 / draws as f64 - expected).abs());
        }
    }
    outcome(
        self_picks == 0 && worst <= 0.02,
        format!("{self_picks} positive picks for B in 2..=64; max |freq - softmax| = {worst:.4} over 10k draws (tol 0.02)"),
    )
}

// Overfit runs.

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Workspace { _dir: dir, root }
    }

    fn corpus(&self, name: &str, clips: &[OmniClip]) -> PathBuf {
        let path = self.root.join(name);
        write_shards(clips, &path, 8).unwrap();
        path
    }
}

fn synth(n: usize) -> Vec<OmniClip> {
    generate_synthetic_corpus(&SynthConfig {
        n_clips: n,
        n_concepts: n,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn train_config(corpus: &Path, objective: &str, steps: usize) -> TrainConfig {
    TrainConfig {
        corpora: vec![CorpusSource {
            path: corpus.to_path_buf(),
            ratio: 1.0,
        }],
        objective: objective.into(),
        steps,
        ..TrainConfig::default()
    }
}

fn spec(task: Task, corpus: &Path, group: &str) -> BenchmarkSpec {
    BenchmarkSpec {
        task,
        corpus: corpus.to_path_buf(),
        group: group.into(),
        split: "train".into(),
        strip_subtitles: false,
        k: 32,
        beam: 3,
        greedy: false,
        compare_greedy: false,
        max_len: None,
        out: None,
    }
}

struct OverfitRun {
    ws: Workspace,
    corpus: PathBuf,
    config: TrainConfig,
    ckpt: PathBuf,
}

fn criterion_6() -> (Outcome, Option<OverfitRun>) {
    let ws = Workspace::new();
    let corpus = ws.corpus("c32", &synth(32));
    let config = train_config(&corpus, "ret%vast + cap%vast", 500);
    let start = Instant::now();
    let mut trainer = Trainer::<f32>::from_config(config.clone()).unwrap();
    let report = trainer.run().unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ckpt_path = ws.root.join("run6/checkpoint.bin");
    trainer.write_outputs(&ws.root.join("run6"), &report).unwrap();
    let ckpt = Checkpoint::<f32>::load(&ckpt_path).unwrap();
    let eval = run_eval(&ckpt, &spec(Task::Retrieval, &corpus, "vast")).unwrap();
    let r1 = eval.retrieval.unwrap().r1;
    let trace = report.loss_trace();
    let (first, last) = (trace[0], *trace.last().unwrap());
    let pass = r1 >= 0.95 && secs < 600.0 && last < 0.2 * first;
    (
        outcome(
            pass,
            format!("R@1 {r1:.3} (>= 0.95) after VCC + VCM rerank k=32; loss {first:.3} -> {last:.3}; {secs:.0}s (< 600s)"),
        ),
        Some(OverfitRun {
            ws,
            corpus,
            config,
            ckpt: ckpt_path,
        }),
    )
}

fn criterion_7() -> Outcome {
    let ws = Workspace::new();
    let corpus = ws.corpus("c32", &synth(32));
    let mut trainer =
        Trainer::<f32>::from_config(train_config(&corpus, "ret%vat%vst%vast + cap%vast", 500)).unwrap();
    trainer.run().unwrap();
    let ckpt = trainer.checkpoint();
    let mut vat = spec(Task::Retrieval, &corpus, "VA-T");
    vat.strip_subtitles = true;
    let r1 = match run_eval(&ckpt, &vat) {
        Ok(r) => r.retrieval.unwrap().r1,
        Err(e) => return outcome(false, format!("VA-T evaluation failed: {e}")),
    };
    // Subtitle groups evaluate on the full corpus and refuse the stripped one.
    let mut problems = Vec::new();
    for g in ["VS-T", "VAS-T"] {
        if let Err(e) = run_eval(&ckpt, &spec(Task::Retrieval, &corpus, g)) {
            problems.push(format!("{g}: {e}"));
        }
        let mut s = spec(Task::Retrieval, &corpus, g);
        s.strip_subtitles = true;
        if !matches!(run_eval(&ckpt, &s), Err(Error::MissingModality { .. })) {
            problems.push(format!("{g}: stripped corpus did not report the missing subtitle"));
        }
    }
    outcome(
        r1 >= 0.9 && problems.is_empty(),
        format!(
            "VA-T R@1 {r1:.3} (>= 0.9) with subtitles stripped; VS-T/VAS-T: {}",
            if problems.is_empty() { "evaluate on full corpus, missing-modality error when stripped".into() } else { problems.join("; ") }
        ),
    )
}

fn criterion_8(run: &OverfitRun) -> Outcome {
    let config = TrainConfig {
        steps: 1500,
        resume: Some(run.ckpt.clone()),
        ..run.config.clone()
    };
    let mut trainer = Trainer::<f32>::from_config(config).unwrap();
    trainer.run().unwrap();
    let path = run.ws.root.join("run8/checkpoint.bin");
    trainer.checkpoint().save(&path).unwrap();
    let ckpt = Checkpoint::<f32>::load(&path).unwrap();
    let mut s = spec(Task::Caption, &run.corpus, "vast");
    s.compare_greedy = true;
    let eval = run_eval(&ckpt, &s).unwrap().caption.unwrap();
    let agree = eval.beam1_equals_greedy == Some(true);
    outcome(
        eval.exact_match >= 0.9 && agree,
        format!(
            "beam-3 exact match {:.3} (>= 0.9) at step {}; beam=1 equals greedy on every clip: {agree}",
            eval.exact_match, trainer.step
        ),
    )
}

fn criterion_9() -> Outcome {
    let ws = Workspace::new();
    let corpus = ws.corpus("c16", &synth(16));
    let mut trainer = Trainer::<f32>::from_config(train_config(&corpus, "qa%vast", 300)).unwrap();
    trainer.run().unwrap();
    let eval = run_eval(&trainer.checkpoint(), &spec(Task::Qa, &corpus, "vast")).unwrap();
    let qa = eval.qa.unwrap();
    outcome(
        qa.exact_match == 1.0 && qa.prefix_leaks == 0,
        format!(
            "exact match {:.3} (== 1.0) on {} toy questions; {} answers contain question tokens",
            qa.exact_match, eval.n, qa.prefix_leaks
        ),
    )
}

fn criterion_10() -> Outcome {
    let ws = Workspace::new();
    let corpus = ws.corpus("c16", &synth(16));
    let config = TrainConfig {
        batch_size: 4,
        ..train_config(&corpus, "ret%vast + cap%vast", 200)
    };
    let full = |c: &TrainConfig| Trainer::<f32>::from_config(c.clone()).unwrap().run().unwrap().loss_trace();
    let a = full(&config);
    let b = full(&config);

    let mut first = Trainer::<f32>::from_config(TrainConfig {
        stop_at: Some(100),
        ..config.clone()
    })
    .unwrap();
    let mut resumed = first.run().unwrap().loss_trace();
    let path = ws.root.join("half/checkpoint.bin");
    first.checkpoint().save(&path).unwrap();
    drop(first);
    let mut second = Trainer::<f32>::from_config(TrainConfig {
        resume: Some(path),
        ..config
    })
    .unwrap();
    resumed.extend(second.run().unwrap().loss_trace());
    let same_seed = a == b;
    let resume_eq = a == resumed;
    outcome(
        same_seed && resume_eq && a.len() == 200,
        format!("identical traces for the same seed: {same_seed}; train-100/save/load/train-100 == train-200: {resume_eq}"),
    )
}

fn criterion_11() -> Outcome {
    let params = MelParams::default();
    let sr = 16_000u32;
    let ten_s = Waveform::new(vec![0.0; 10 * sr as usize], sr).unwrap();
    let silence = log_mel(&ten_s, &params).unwrap();
    let shape = silence.frames.shape();
    let floor = 1e-10f64.ln();
    let constant = silence.frames.data().iter().all(|&x| x == floor);
    let w = hamming_window(params.window_len(sr)).unwrap();
    let endpoints = (w[0] - 0.08).abs() < 1e-12 && (w[w.len() - 1] - 0.08).abs() < 1e-12;

    let bank = MelFilterbank::new(params.n_mels, params.window_len(sr), sr);
    let centers = bank.center_frequencies();
    let mut misses = Vec::new();
    for m in [4, 10, 20, 32, 45, 60] {
        let f = centers[m];
        let samples: Vec<f64> = (0..sr as usize)
            .map(|n| (2.0 * std::f64::consts::PI * f * n as f64 / sr as f64).sin())
            .collect();
        let spec = log_mel(&Waveform::new(samples, sr).unwrap(), &params).unwrap();
        let row = spec.frames.row(spec.n_frames() / 2);
        let arg = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
        if arg != m {
            misses.push(format!("band {m} -> {arg}"));
        }
    }
    outcome(
        shape == (998, 64) && constant && endpoints && misses.is_empty(),
        format!(
            "shape {shape:?}; silence constant log(1e-10): {constant}; Hamming endpoints 0.08: {endpoints}; sine band argmax misses: {}",
            if misses.is_empty() { "none".into() } else { misses.join(", ") }
        ),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut timed = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if want(n) {
            let start = Instant::now();
            let o = f();
            let secs = start.elapsed().as_secs_f64();
            println!(
                "criterion {n:>2} {} {name}: {} [{secs:.1}s]",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail
            );
            results.push((n, name, o, secs));
        }
    };
    timed(1, "loss-oracle equivalence", &mut criterion_1);
    timed(2, "gradient check", &mut criterion_2);
    timed(3, "causality", &mut criterion_3);
    timed(4, "masking statistics", &mut criterion_4);
    timed(5, "hard-negative law", &mut criterion_5);
    let mut overfit = None;
    if want(6) || want(8) {
        timed(6, "overfit retrieval", &mut || {
            let (o, run) = criterion_6();
            overfit = run;
            o
        });
    }
    timed(7, "modality-grouping robustness", &mut criterion_7);
    if let Some(run) = &overfit {
        timed(8, "caption overfit", &mut || criterion_8(run));
    }
    timed(9, "QA prefix contract", &mut criterion_9);
    timed(10, "determinism and resume", &mut criterion_10);
    timed(11, "audio frontend", &mut criterion_11);

    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
    println!(
        "acceptance: {}/{} passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
