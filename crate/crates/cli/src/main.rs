use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use scfusion::bench::{run_bench, BenchConfig};
use scfusion::complexity::{model_cost, render_ratio_grid};
use scfusion::fusion::parse_alpha;
use scfusion::io::{self, load_cifar10_batch, parse_cifar10, synthetic_cifar10};
use scfusion::model::{preset, substitute_scfusion};
use scfusion::train::{evaluate, train, Dataset, SgdConfig, TrainConfig};
use scfusion::{Ablation, Model, ModelSpec};

/// Sparse complementary convolution toolkit.
///
/// Worker threads default to the number of logical CPUs; set SCFUSE_THREADS
/// to cap them.
#[derive(Parser, Debug)]
#[command(name = "scfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-layer MAC and parameter costs of a model, or the reduction-ratio table.
    Analyze(AnalyzeArgs),
    /// Train a model on CIFAR-10 binary batches (or synthetic stand-in data).
    Train(TrainArgs),
    /// Top-1 accuracy of a saved weight archive.
    Eval(EvalArgs),
    /// Time the dense and zero-skipping convolution paths on one thread.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct ModelSource {
    /// Model spec file in the line-oriented text format.
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    /// Built-in model: tiny-vgg, tiny-resnet, or <base>-scfusion-<alpha>.
    #[arg(long)]
    preset: Option<String>,
    /// Replace every convolution but the first with a fused layer at this ratio (e.g. 4 or 3/2).
    #[arg(long)]
    alpha: Option<String>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    model: ModelSource,
    /// Print the reduction ratio for k=3, alpha in {2,4,8}, C_out/C_in in {1,2}.
    #[arg(long)]
    table2: bool,
    /// Also write the per-layer report as CSV to this path.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CIFAR-10 binary batch (3073-byte records) for training.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// CIFAR-10 binary batch for per-epoch evaluation.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Generate this many synthetic CIFAR-format training samples instead of reading --data.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Synthetic evaluation samples, drawn with seed --data-seed + 1.
    #[arg(long, requires = "synthetic")]
    synthetic_eval: Option<usize>,
    /// Seed of the synthetic generator.
    #[arg(long, default_value_t = 42)]
    data_seed: u64,
    /// Use only the first N training samples.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelSource,
    #[command(flatten)]
    data: DataArgs,
    /// Switch every fused layer to an ablation configuration (A, B, C or D).
    #[arg(long)]
    ablate: Option<Ablation>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Initial learning rate; divided by 10 at 50% and 75% of the epochs.
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Seed for initialization, shuffling and augmentation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable pad-crop-flip augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Write the trained weights here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-epoch CSV log here (it is always printed to stdout).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Weight archive written by `train --out`.
    #[arg(long)]
    archive: PathBuf,
    /// CIFAR-10 binary batch.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Evaluate on this many synthetic samples instead of --data.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 43)]
    data_seed: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 64)]
    c_in: usize,
    #[arg(long, default_value_t = 64)]
    c_out: usize,
    #[arg(long, default_value_t = 32)]
    h: usize,
    #[arg(long, default_value_t = 32)]
    w: usize,
    #[arg(long, default_value_t = 9)]
    repeats: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Bad input (exit 2) vs failure while running (exit 1).
enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn input(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("SCFUSE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("SCFUSE_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn load_spec(src: &ModelSource) -> anyhow::Result<ModelSpec> {
    let spec = match (&src.spec, &src.preset) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading spec {}", path.display()))?;
            ModelSpec::parse(&text).with_context(|| format!("parsing spec {}", path.display()))?
        }
        (None, Some(name)) => preset(name)?,
        (None, None) => bail!("one of --spec or --preset is required"),
        (Some(_), Some(_)) => unreachable!("clap rejects both"),
    };
    let spec = match &src.alpha {
        Some(a) => substitute_scfusion(&spec, parse_alpha(a)?)?,
        None => spec,
    };
    spec.validate()?;
    Ok(spec)
}

fn analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    if a.table2 {
        print!("{}", render_ratio_grid());
        if a.model.spec.is_none() && a.model.preset.is_none() {
            return Ok(());
        }
        println!();
    }
    let spec = load_spec(&a.model).input()?;
    let report = model_cost(&spec).input()?;
    print!("{}", report.to_text());
    if let Some(path) = &a.csv {
        fs::write(path, report.to_csv())
            .with_context(|| format!("writing {}", path.display()))
            .runtime()?;
    }
    Ok(())
}

fn read_batch(path: &Path) -> anyhow::Result<Dataset> {
    load_cifar10_batch(path).with_context(|| format!("loading {}", path.display()))
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let mut spec = load_spec(&a.model).input()?;
    if let Some(label) = a.ablate {
        if !spec.layers.iter().any(|l| l.kind() == "scfusion") {
            return Err(Failure::Input(anyhow!(
                "--ablate needs fused layers; use an scfusion preset or --alpha"
            )));
        }
        spec = spec.with_ablation(label);
    }
    let d = &a.data;
    let (train_set, eval_set) = match (&d.data, d.synthetic) {
        (Some(path), None) => {
            let eval = d.eval_data.as_deref().map(read_batch).transpose().input()?;
            (read_batch(path).input()?, eval)
        }
        (None, Some(n)) => {
            let train = parse_cifar10(&synthetic_cifar10(n, d.data_seed)).input()?;
            let eval = match (d.synthetic_eval, &d.eval_data) {
                (Some(m), _) => {
                    Some(parse_cifar10(&synthetic_cifar10(m, d.data_seed + 1)).input()?)
                }
                (None, Some(p)) => Some(read_batch(p).input()?),
                (None, None) => None,
            };
            (train, eval)
        }
        _ => {
            return Err(Failure::Input(anyhow!(
                "one of --data or --synthetic is required"
            )))
        }
    };
    let train_set = match d.limit {
        Some(n) => train_set.take(n).input()?,
        None => train_set,
    };

    let mut model: Model<f32> = Model::build(&spec, a.seed).input()?;
    let mut sgd = SgdConfig::cifar_step(a.lr, a.epochs);
    sgd.momentum = a.momentum;
    sgd.weight_decay = a.weight_decay;
    let cfg = TrainConfig {
        sgd,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        augment: !a.no_augment,
        normalize: true,
    };
    cfg.sgd.validate().input()?;
    let log = train(&mut model, &train_set, eval_set.as_ref(), &cfg).map_err(|e| match e {
        scfusion::Error::NonFinite(_) => Failure::Runtime(e.into()),
        _ => Failure::Input(e.into()),
    })?;
    let csv = log.to_csv();
    print!("{csv}");
    if let Some(path) = &a.log {
        fs::write(path, &csv)
            .with_context(|| format!("writing {}", path.display()))
            .runtime()?;
    }
    if let Some(path) = &a.out {
        io::save(&model, path)
            .with_context(|| format!("writing {}", path.display()))
            .runtime()?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let model = io::load(&a.archive)
        .with_context(|| format!("loading archive {}", a.archive.display()))
        .input()?;
    let data = match (&a.data, a.synthetic) {
        (Some(p), None) => read_batch(p).input()?,
        (None, Some(n)) => parse_cifar10(&synthetic_cifar10(n, a.data_seed)).input()?,
        _ => {
            return Err(Failure::Input(anyhow!(
                "one of --data or --synthetic is required"
            )))
        }
    };
    let (acc, correct) = evaluate(&model, &data, 100).input()?;
    println!("accuracy {acc:.6} ({correct}/{} samples)", data.len());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), Failure> {
    let cfg = BenchConfig {
        k: a.k,
        c_in: a.c_in,
        c_out: a.c_out,
        h: a.h,
        w: a.w,
        repeats: a.repeats,
        warmup: a.warmup,
        seed: a.seed,
    };
    let report = run_bench(&cfg).input()?;
    print!("{report}");
    if !report.macs_match() {
        return Err(Failure::Runtime(anyhow!(
            "measured MACs differ from the analytic count"
        )));
    }
    Ok(())
}
