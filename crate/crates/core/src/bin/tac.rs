use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tac_core::datagen::generate;
use tac_core::episodes::{sample_episode, Dataset, Split};
use tac_core::harness::config::Mode;
use tac_core::harness::export::{append_jsonl, write_projection_csv, write_sweep_csv, EvalRecord};
use tac_core::harness::{
    distractor_sweep, evaluate_label_splits, export_projection, select_eval_iterations, train, Checkpoint,
    ExperimentConfig,
};
use tac_core::projection::Distance;
use tac_core::tac::Variant;
use tac_core::{Result, TacError};

#[derive(Parser)]
#[command(name = "tac", version, about = "Task-adaptive clustering for few-shot classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-mixture dataset.
    GenData(GenData),
    /// Meta-train a model and write its best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on test episodes.
    Eval(EvalArgs),
    /// Evaluate over a range of distractor fractions.
    SweepDistractors(SweepArgs),
    /// Write projected embeddings of one episode per clustering iteration.
    ExportProjection(ExportArgs),
}

#[derive(Args)]
struct Common {
    /// Configuration file (flat TOML key = value pairs).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct GenData {
    #[command(flatten)]
    common: Common,
    /// Output dataset file (defaults to the configured dataset path).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    center_scale: Option<f64>,
    #[arg(long)]
    within_class_std: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    distance: Option<Distance>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Clustering iterations per training episode.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    validation_period: Option<usize>,
    #[arg(long)]
    validation_episodes: Option<usize>,
}

#[derive(Args)]
struct EvalOptions {
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Evaluation episode seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    label_splits: Option<usize>,
    /// Compute soft labels in the embedding space instead of the projection.
    #[arg(long)]
    cluster_in_embedding_space: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    eval: EvalOptions,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    distractor_fraction: Option<f64>,
    #[arg(long)]
    unlabeled_total: Option<usize>,
    /// Choose the iteration count on validation classes first.
    #[arg(long)]
    select_iterations: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    eval: EvalOptions,
    /// Comma-separated distractor fractions in [0, 1).
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    #[arg(long)]
    unlabeled_total: Option<usize>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Index of the test episode to export.
    #[arg(long)]
    episode: Option<u64>,
    #[arg(long)]
    split: Option<Split>,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &common.dataset {
        cfg.dataset = d.clone();
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_model(cfg: &mut ExperimentConfig, m: &ModelArgs) {
    set(&mut cfg.checkpoint, m.checkpoint.clone());
    set(&mut cfg.metrics, m.metrics.clone());
    set(&mut cfg.variant, m.variant);
    set(&mut cfg.distance, m.distance);
}

fn apply_eval(cfg: &mut ExperimentConfig, e: &EvalOptions) {
    set(&mut cfg.eval_episodes, e.episodes);
    set(&mut cfg.eval_iterations, e.iterations);
    set(&mut cfg.eval_seed, e.seed);
    set(&mut cfg.label_splits, e.label_splits);
    cfg.cluster_in_embedding_space |= e.cluster_in_embedding_space;
}

fn gen_data(a: GenData) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    set(&mut cfg.classes, a.classes);
    set(&mut cfg.samples_per_class, a.samples_per_class);
    set(&mut cfg.input_dim, a.input_dim);
    set(&mut cfg.center_scale, a.center_scale);
    set(&mut cfg.within_class_std, a.within_class_std);
    set(&mut cfg.data_seed, a.seed);
    let out = a.out.unwrap_or(cfg.dataset.clone());
    let ds = generate(&cfg.synthetic_spec())?;
    ds.save(&out)?;
    println!("wrote {} samples of {} classes to {}", ds.len(), ds.class_count(), out.display());
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    apply_model(&mut cfg, &a.model);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.train_episodes, a.episodes);
    set(&mut cfg.learning_rate, a.learning_rate);
    set(&mut cfg.train_iterations, a.iterations);
    set(&mut cfg.validation_period, a.validation_period);
    set(&mut cfg.validation_episodes, a.validation_episodes);

    let ds = Dataset::load(&cfg.dataset)?;
    let split = cfg.label_split(&ds)?;
    let tc = cfg.train_config(ds.input_dim())?;
    let (_, log) = train(&ds, &split, &tc)?;
    for v in &log.validations {
        append_jsonl(&cfg.metrics, &json!({"kind": "validation", "variant": cfg.variant, "episode": v.episode,
            "mean_accuracy": v.accuracy, "ci95": v.ci95}))?;
    }
    let final_loss = log.steps.last().map(|s| s.loss);
    append_jsonl(&cfg.metrics, &json!({"kind": "train", "variant": cfg.variant, "episodes": log.steps.len(),
        "optimizer_steps": log.optimizer_steps, "final_loss": final_loss, "best": log.best}))?;
    match &log.best {
        Some(b) => println!(
            "trained {} episodes; best validation accuracy {:.4} ± {:.4} at episode {}; checkpoint {}",
            log.steps.len(),
            b.accuracy,
            b.ci95,
            b.episode,
            cfg.checkpoint.display()
        ),
        None => println!("trained {} episodes", log.steps.len()),
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    apply_model(&mut cfg, &a.model);
    apply_eval(&mut cfg, &a.eval);
    set(&mut cfg.mode, a.mode);
    set(&mut cfg.unlabeled_total, a.unlabeled_total);
    if let Some(f) = a.distractor_fraction {
        cfg.distractor_fraction = f;
        if a.mode.is_none() {
            cfg.mode = Mode::Uneven;
        }
    }
    cfg.select_iterations |= a.select_iterations;

    let ds = Dataset::load(&cfg.dataset)?;
    let model = Checkpoint::load(&cfg.checkpoint)?.model;
    let tac = cfg.tac_config();
    let split_name = a.eval.split.unwrap_or(Split::Test);
    let mut iterations = cfg.eval_iterations;
    if cfg.select_iterations {
        let val = cfg.eval_spec(Split::Validation)?;
        let (best, reports) = select_eval_iterations(
            &model,
            &ds,
            &cfg.label_split(&ds)?,
            &val,
            &tac,
            cfg.max_iterations,
            cfg.validation_episodes,
        )?;
        for r in &reports {
            append_jsonl(&cfg.metrics, &EvalRecord { kind: "iteration_selection", split: "validation", distractor_fraction: None, report: r })?;
        }
        iterations = best;
        println!("selected {best} iterations on validation classes");
    }
    let splits = cfg.eval_label_splits(&ds)?;
    let spec = cfg.eval_spec(split_name)?;
    let report = evaluate_label_splits(&model, &ds, &splits, &spec, &tac, iterations, cfg.eval_episodes)?;
    let fraction = (cfg.mode == Mode::Uneven).then_some(cfg.distractor_fraction);
    append_jsonl(
        &cfg.metrics,
        &EvalRecord { kind: "eval", split: split_str(split_name), distractor_fraction: fraction, report: &report },
    )?;
    println!(
        "{} ({} iterations, {} episodes): accuracy {:.4} ± {:.4}",
        report.variant, report.iterations, report.episodes, report.mean_accuracy, report.ci95
    );
    Ok(())
}

fn split_str(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Validation => "validation",
        Split::Test => "test",
    }
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    apply_model(&mut cfg, &a.model);
    apply_eval(&mut cfg, &a.eval);
    set(&mut cfg.sweep_fractions, a.fractions);
    set(&mut cfg.unlabeled_total, a.unlabeled_total);
    set(&mut cfg.sweep_csv, a.csv);

    let ds = Dataset::load(&cfg.dataset)?;
    let model = Checkpoint::load(&cfg.checkpoint)?.model;
    let split_name = a.eval.split.unwrap_or(Split::Test);
    let split = cfg.label_split(&ds)?;
    let base = cfg.eval_spec(split_name)?;
    let points = distractor_sweep(
        &model,
        &ds,
        &split,
        &base,
        &cfg.tac_config(),
        cfg.eval_iterations,
        cfg.eval_episodes,
        cfg.unlabeled_total,
        &cfg.sweep_fractions,
    )?;
    for p in &points {
        append_jsonl(
            &cfg.metrics,
            &EvalRecord {
                kind: "distractor_sweep",
                split: split_str(split_name),
                distractor_fraction: Some(p.distractor_fraction),
                report: &p.report,
            },
        )?;
        println!("fraction {:.2}: accuracy {:.4} ± {:.4}", p.distractor_fraction, p.report.mean_accuracy, p.report.ci95);
    }
    write_sweep_csv(BufWriter::new(File::create(&cfg.sweep_csv)?), &points)?;
    Ok(())
}

fn run_export(a: ExportArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    apply_model(&mut cfg, &a.model);
    set(&mut cfg.eval_iterations, a.iterations);
    set(&mut cfg.export_episode, a.episode);
    set(&mut cfg.projection_csv, a.out);

    let ds = Dataset::load(&cfg.dataset)?;
    let model = Checkpoint::load(&cfg.checkpoint)?.model;
    let split = cfg.label_split(&ds)?;
    let spec = cfg.eval_spec(a.split.unwrap_or(Split::Test))?.for_episode(cfg.export_episode);
    let episode = sample_episode(&ds, &split, &spec)?;
    let rows = export_projection(&model, &episode, &cfg.tac_config(), cfg.eval_iterations)?;
    write_projection_csv(BufWriter::new(File::create(&cfg.projection_csv)?), &rows)?;
    println!("wrote {} rows to {}", rows.len(), cfg.projection_csv.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::SweepDistractors(a) => run_sweep(a),
        Command::ExportProjection(a) => run_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &TacError) -> u8 {
    u8::try_from(e.exit_code()).unwrap_or(1)
}
