use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use semicl_core::annotate::{Kappa, SamplerVariant, ThresholdMode};
use semicl_core::backend::BackendKind;
use semicl_core::config::RunConfig;
use semicl_core::fixture::FixtureSpec;
use semicl_core::{runner, ScorerKind, TaskFamily};

#[derive(Parser)]
#[command(name = "semicl", version, about = "Pseudo-demonstration generation and many-shot inference")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `sim` or `remote`.
    #[arg(long, global = true)]
    backend: Option<String>,
    #[arg(long, global = true)]
    max_inflight: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Annotate the unlabeled split in one pass with the ground-truth demos.
    Generate(AnnotateArgs),
    /// Annotate iteratively, feeding confident pseudo-demos back into prompts.
    Iterpsd(IterArgs),
    /// Run inference on the test split for one or more n_psd values.
    Infer(InferArgs),
    /// Score results files.
    Eval(EvalArgs),
    /// Write a synthetic dataset for the simulator.
    Simfixture(FixtureArgs),
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    keep_fraction: Option<f64>,
    /// Ground-truth demonstrations taken from the train split.
    #[arg(long)]
    n_gt: Option<usize>,
}

#[derive(Args)]
struct IterArgs {
    #[command(flatten)]
    common: AnnotateArgs,
    /// Chunk size K.
    #[arg(long = "chunk-size", short = 'k')]
    chunk_size: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Kept-set cap; an integer or `inf`.
    #[arg(long)]
    kappa: Option<String>,
    /// `per-chunk` or `fixed:<lambda>`.
    #[arg(long)]
    threshold: Option<String>,
    /// Use the literal sampler variant (most dissimilar first).
    #[arg(long)]
    literal_sampler: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory of a generate or iterpsd run.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_gt: Option<usize>,
    /// Comma-separated list, e.g. `0,8,128`.
    #[arg(long, value_delimiter = ',')]
    n_psd: Vec<usize>,
    #[arg(long)]
    resample_per_query: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    results: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureKind {
    Classification,
    Translation,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, value_enum, default_value = "classification")]
    kind: FixtureKind,
    /// Unlabeled examples.
    #[arg(long, default_value_t = 200)]
    size: usize,
    #[arg(long, default_value_t = 16)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    test: usize,
    #[arg(long, default_value_t = 4)]
    labels: usize,
    /// Write clustered embeddings with this many centroids.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(b) = &cli.backend {
        cfg.backend.kind = b.parse::<BackendKind>()?;
    }
    if let Some(n) = cli.max_inflight {
        cfg.backend.max_inflight = n;
    }
    Ok(cfg)
}

fn apply_annotate(cfg: &mut RunConfig, a: &AnnotateArgs) -> anyhow::Result<()> {
    if let Some(s) = &a.scorer {
        cfg.confidence.scorer = s.parse::<ScorerKind>()?;
    }
    if let Some(f) = a.keep_fraction {
        cfg.confidence.keep_fraction = f;
    }
    if a.n_gt.is_some() {
        cfg.select.n_gt = a.n_gt;
    }
    Ok(())
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn check_dataset(path: &Path) -> anyhow::Result<()> {
    if !path.is_dir() {
        bail!("dataset directory {} does not exist", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Generate(a) => {
            check_dataset(&a.dataset)?;
            apply_annotate(&mut cfg, a)?;
            let report = runner::generate(&cfg, &a.dataset, &a.out).context("generate failed")?;
            print_json(&report)
        }
        Command::Iterpsd(a) => {
            check_dataset(&a.common.dataset)?;
            apply_annotate(&mut cfg, &a.common)?;
            if let Some(k) = a.chunk_size {
                cfg.annotate.chunk_size = k;
            }
            if let Some(e) = a.epsilon {
                cfg.annotate.epsilon = e;
            }
            if let Some(k) = &a.kappa {
                cfg.annotate.kappa = k.parse::<Kappa>()?;
            }
            if let Some(t) = &a.threshold {
                cfg.annotate.threshold = t.parse::<ThresholdMode>()?;
            }
            if a.literal_sampler {
                cfg.annotate.sampler = SamplerVariant::Literal;
            }
            let report = runner::iterpsd(&cfg, &a.common.dataset, &a.common.out).context("iterpsd failed")?;
            print_json(&report)
        }
        Command::Infer(a) => {
            check_dataset(&a.dataset)?;
            if a.n_gt.is_some() {
                cfg.select.n_gt = a.n_gt;
            }
            if !a.n_psd.is_empty() {
                cfg.select.n_psd = a.n_psd.clone();
            }
            if a.resample_per_query {
                cfg.select.resample_per_query = true;
            }
            let report = runner::infer(&cfg, &a.dataset, a.store.as_deref(), &a.out).context("infer failed")?;
            for (n, path) in &report.results {
                println!("n_psd={n}\t{}", path.display());
            }
            println!("metrics\t{}", report.metrics.display());
            Ok(())
        }
        Command::Eval(a) => {
            check_dataset(&a.dataset)?;
            let rows = runner::eval(&a.dataset, &a.results, &a.out).context("eval failed")?;
            for r in rows {
                println!("{}\tk_gt={}\tk_psd={}\t{}\t{:.4}", r.run_id, r.k_gt, r.k_psd, r.metric_name, r.value);
            }
            Ok(())
        }
        Command::Simfixture(a) => {
            let spec = FixtureSpec {
                family: match a.kind {
                    FixtureKind::Classification => TaskFamily::Classification,
                    FixtureKind::Translation => TaskFamily::Translation,
                },
                unlabeled: a.size,
                train: a.train,
                test: a.test,
                labels: a.labels,
                clusters: a.clusters,
                dim: a.dim,
                seed: cfg.seed,
                ..FixtureSpec::default()
            };
            let digest = runner::simfixture(&spec, &a.out).context("simfixture failed")?;
            println!("{digest}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
