use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use omnivl::corpus::{corpus_stats, generate_synthetic_corpus, read_shards, write_shards};
use omnivl::harness::{checkpoint_scalar, run_eval, train, BenchmarkSpec, Checkpoint, GenConfig, Task, TrainConfig};
use omnivl::{Error, Result, Scalar};

#[derive(Parser)]
#[command(name = "omnivl", version, about = "Omni-modality video-text training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and write it as shards.
    GenCorpus {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print corpus statistics as JSON.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding the config's `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "f32")]
        precision: Precision,
    },
    /// Text-to-video retrieval benchmark.
    EvalRetrieval(EvalArgs),
    /// Captioning benchmark.
    EvalCaption(EvalArgs),
    /// Question answering benchmark.
    EvalQa(EvalArgs),
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    benchmark: PathBuf,
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run_train<F: Scalar>(config: TrainConfig) -> Result<()> {
    let out = config.out_dir.clone();
    let (ckpt, report) = train::<F>(config)?;
    let trace = report.loss_trace();
    println!(
        "trained to step {} in {:.1}s: loss {:.4} -> {:.4}, tau {:.3}",
        ckpt.step,
        report.wall_clock_s,
        trace.first().copied().unwrap_or(f64::NAN),
        trace.last().copied().unwrap_or(f64::NAN),
        report.steps.last().map_or(f64::NAN, |s| s.tau),
    );
    if let Some(dir) = out {
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn run_benchmark<F: Scalar>(ckpt: &Path, spec: &BenchmarkSpec) -> Result<()> {
    let ckpt = Checkpoint::<F>::load(ckpt)?;
    let report = run_eval(&ckpt, spec)?;
    if let Some(out) = &spec.out {
        eprintln!("report written to {}", out.display());
    }
    print_json(&serde_json::json!({
        "task": report.task,
        "group": report.group,
        "n": report.n,
        "retrieval": report.retrieval,
        "caption": report.caption,
        "qa": report.qa,
    }))
}

fn eval(task: Task, args: &EvalArgs) -> Result<()> {
    let spec = BenchmarkSpec::load(&args.benchmark)?;
    if spec.task != task {
        return Err(Error::Config(format!(
            "benchmark describes a {:?} task, command expects {task:?}",
            spec.task
        )));
    }
    match checkpoint_scalar(&args.ckpt)?.as_str() {
        "f64" => run_benchmark::<f64>(&args.ckpt, &spec),
        _ => run_benchmark::<f32>(&args.ckpt, &spec),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus { config, out } => {
            let config = GenConfig::load(&config)?;
            let corpus = generate_synthetic_corpus(&config.synth)?;
            let manifest = write_shards(&corpus, &out, config.shard_size)?;
            println!(
                "wrote {} clips in {} shards to {}",
                manifest.total_clips,
                manifest.shards.len(),
                out.display()
            );
            Ok(())
        }
        Command::Stats { corpus } => print_json(&corpus_stats(&read_shards(&corpus)?)?),
        Command::Train { config, out, precision } => {
            let mut config = TrainConfig::load(&config)?;
            if out.is_some() {
                config.out_dir = out;
            }
            match precision {
                Precision::F32 => run_train::<f32>(config),
                Precision::F64 => run_train::<f64>(config),
            }
        }
        Command::EvalRetrieval(args) => eval(Task::Retrieval, &args),
        Command::EvalCaption(args) => eval(Task::Caption, &args),
        Command::EvalQa(args) => eval(Task::Qa, &args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
