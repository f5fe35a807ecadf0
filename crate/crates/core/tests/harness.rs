use std::fs;
use std::path::{Path, PathBuf};

use omnivl::adaptation::CachedCondition;
use omnivl::autograd::Tape;
use omnivl::corpus::{generate_synthetic_corpus, write_shards, SynthConfig};
use omnivl::encoders::EncoderConfig;
use omnivl::fusion::fuse_decode;
use omnivl::harness::{
    linear_decay, run_eval, BenchmarkSpec, Checkpoint, CorpusSource, EvalReport, GroupMode, Task, TrainConfig, Trainer,
};
use omnivl::objectives::ModalityGroup;
use omnivl::{Error, ModelConfig};

fn tiny_model() -> ModelConfig {
    let enc = |patch, max_len| EncoderConfig {
        hidden: 8,
        layers: 1,
        heads: 2,
        ffn_hidden: 16,
        patch,
        max_len,
    };
    let mut m = ModelConfig::default();
    m.vision.encoder = enc(8, 32);
    m.audio.encoder = enc(16, 32);
    m.text = enc(8, 48);
    m.embed_dim = 8;
    m
}

fn corpus_dir(root: &Path, n: usize) -> PathBuf {
    let corpus = generate_synthetic_corpus(&SynthConfig {
        n_clips: n,
        n_concepts: n,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = root.join("corpus");
    write_shards(&corpus, &dir, 4).unwrap();
    dir
}

fn config(corpus: &Path, steps: usize) -> TrainConfig {
    TrainConfig {
        corpora: vec![CorpusSource {
            path: corpus.to_path_buf(),
            ratio: 1.0,
        }],
        batch_size: 3,
        steps,
        model: tiny_model(),
        ..TrainConfig::default()
    }
}

fn bench(task: Task, corpus: &Path) -> BenchmarkSpec {
    let task = format!("{task:?}").to_lowercase();
    BenchmarkSpec::from_toml(&format!("task = \"{task}\"\ncorpus = {corpus:?}\ngroup = \"vast\"\nk = 4\nmax_len = 6")).unwrap()
}

fn without_clock(mut r: EvalReport) -> EvalReport {
    r.wall_clock_s = 0.0;
    r
}

#[test]
fn one_step_uses_initial_rate() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_dir(dir.path(), 4);
    let mut t = Trainer::<f64>::from_config(config(&corpus, 1)).unwrap();
    let report = t.run().unwrap();
    assert_eq!(report.steps.len(), 1);
    assert_eq!(report.steps[0].lr, 1e-3);
    assert_eq!(t.optimizer.t, 1);
    assert_eq!(linear_decay(1e-3, 1, 1), 0.0);
    assert!(report.steps[0].losses.total.is_finite());
}

#[test]
fn same_seed_same_trace_and_digest() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_dir(dir.path(), 5);
    let c = TrainConfig {
        objective: "ret%vat%vast + cap%vast".into(),
        group_mode: GroupMode::Sample,
        ..config(&corpus, 4)
    };
    let a = Trainer::<f32>::from_config(c.clone()).unwrap().run().unwrap();
    let b = Trainer::<f32>::from_config(c.clone()).unwrap().run().unwrap();
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.config_digest, b.config_digest);
    let other = Trainer::<f32>::from_config(TrainConfig { seed: 8, ..c }).unwrap().run().unwrap();
    assert_ne!(a.loss_trace(), other.loss_trace());
}

#[test]
fn checkpoint_roundtrip_preserves_forwards_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_dir(dir.path(), 4);
    let mut t = Trainer::<f32>::from_config(config(&corpus, 2)).unwrap();
    let report = t.run().unwrap();
    t.write_outputs(&dir.path().join("out"), &report).unwrap();
    let loaded = Checkpoint::<f32>::load(&dir.path().join("out/checkpoint.bin")).unwrap();
    assert!(dir.path().join("out/vocab.txt").is_file());
    assert!(dir.path().join("out/metrics.json").is_file());

    let clip = &t.corpus(0)[0];
    let ids = [5, 7, 8, 3];
    let logits = |m: &omnivl::OmniModel<f32>| {
        let cond = CachedCondition::compute(m, clip, ModalityGroup::Vast).unwrap();
        let tape = Tape::inference();
        fuse_decode(m.graph(&tape), &m.text, &m.caption_head, &ids, &cond.on(&tape)).unwrap().value()
    };
    assert_eq!(logits(&t.model), logits(&loaded.model));

    let original = t.checkpoint();
    for task in [Task::Retrieval, Task::Caption, Task::Qa] {
        let spec = bench(task, &corpus);
        let a = without_clock(run_eval(&original, &spec).unwrap());
        let b = without_clock(run_eval(&loaded, &spec).unwrap());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

#[test]
fn resume_continues_the_same_trace() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_dir(dir.path(), 4);
    let full = Trainer::<f64>::from_config(config(&corpus, 6)).unwrap().run().unwrap().loss_trace();
    let mut first = Trainer::<f64>::from_config(TrainConfig {
        stop_at: Some(3),
        ..config(&corpus, 6)
    })
    .unwrap();
    let mut trace = first.run().unwrap().loss_trace();
    let path = dir.path().join("half.bin");
    first.checkpoint().save(&path).unwrap();
    let mut second = Trainer::<f64>::from_config(TrainConfig {
        resume: Some(path),
        ..config(&corpus, 6)
    })
    .unwrap();
    trace.extend(second.run().unwrap().loss_trace());
    assert_eq!(trace, full);
}

#[test]
fn non_finite_loss_aborts_with_step_and_component() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_dir(dir.path(), 4);
    let mut t = Trainer::<f64>::from_config(config(&corpus, 5)).unwrap();
    t.step_once().unwrap();
    let id = t.model.params.id_of("proj.caption.weight").unwrap();
    t.model.params.value_mut(id).data_mut()[0] = f64::NAN;
    match t.step_once() {
        Err(e @ Error::NumericalAbort { step: 1, .. }) => assert_eq!(e.exit_code(), 4),
        other => panic!("expected numerical abort at step 1, got {other:?}"),
    }
}

#[test]
fn contract_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let e = Trainer::<f32>::from_config(config(&missing, 2)).err().unwrap();
    assert!(matches!(e, Error::Config(_)), "{e}");

    let corpus = corpus_dir(dir.path(), 4);
    let unknown_task = format!("task = \"translate\"\ncorpus = {corpus:?}\ngroup = \"vast\"");
    assert!(matches!(BenchmarkSpec::from_toml(&unknown_task), Err(Error::Config(_))));
    let unknown_key = format!("task = \"qa\"\ncorpus = {corpus:?}\ngroup = \"vast\"\nbeam_size = 2");
    assert!(matches!(BenchmarkSpec::from_toml(&unknown_key), Err(Error::Config(_))));

    let t = Trainer::<f32>::from_config(config(&corpus, 2)).unwrap();
    let e = run_eval(&t.checkpoint(), &bench(Task::Retrieval, &missing)).unwrap_err();
    assert!(matches!(e, Error::Config(_)), "{e}");

    let path = dir.path().join("ck.bin");
    t.checkpoint().save(&path).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    let e = Checkpoint::<f32>::load(&path).unwrap_err();
    assert!(matches!(e, Error::Format(_)));
    assert_eq!(e.exit_code(), 3);

    let bad_batch = TrainConfig {
        batch_size: 1,
        ..config(&corpus, 2)
    };
    assert!(matches!(Trainer::<f32>::from_config(bad_batch), Err(Error::Config(_))));
}

#[test]
fn benchmark_splits_and_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_dir(dir.path(), 6);
    let t = Trainer::<f32>::from_config(config(&corpus, 1)).unwrap();
    let spec_path = dir.path().join("bench.toml");
    fs::write(&spec_path, "task = \"caption\"\ncorpus = \"corpus\"\ngroup = \"VAS-T\"\nsplit = \"2..5\"\nbeam = 1\ncompare_greedy = true\nmax_len = 5\n").unwrap();
    let spec = BenchmarkSpec::load(&spec_path).unwrap();
    let report = run_eval(&t.checkpoint(), &spec).unwrap();
    assert_eq!(report.n, 3);
    assert_eq!(report.caption.unwrap().beam1_equals_greedy, Some(true));
    let written: EvalReport = serde_json::from_slice(&fs::read(dir.path().join("bench.report.json")).unwrap()).unwrap();
    assert_eq!(written.n, 3);

    let bad = BenchmarkSpec {
        split: "4..9".into(),
        ..spec
    };
    assert!(matches!(run_eval(&t.checkpoint(), &bad), Err(Error::Config(_))));
}
