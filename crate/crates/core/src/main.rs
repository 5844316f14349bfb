use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trifit::embedding::{read_store, write_store, SiteGeometry, DYNAMICS_SEED, NEIGHBORS, STRUCTURE_SEED};
use trifit::eval::{reliability_svg, Aggregate, QUANTILE_BINS};
use trifit::gnm::{CrossCorrelation, DEFAULT_CUTOFF, DEFAULT_MODES};
use trifit::nn::{read_checkpoint, Ablation};
use trifit::pipeline::{self, Built, DynamicsOptions, RunConfig, SplitName, StructureOptions};
use trifit::synth::{generate, write_dataset, FoldScheme, SynthConfig};
use trifit::{Error, Result};

#[derive(Parser)]
#[command(name = "trifit", version, about = "Trimodal variant-fitness pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (structures/ and variants/).
    Synth(SynthArgs),
    /// GNM dynamics embeddings (256-d) for every variant.
    EmbedDyn(EmbedDynArgs),
    /// Cα-geometry structure embeddings (512-d) for every variant.
    EmbedStruct(EmbedStructArgs),
    /// Masked-marginal sequence embeddings (1280-d) for every variant.
    ComposeSeq(ComposeSeqArgs),
    /// Train the fusion model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split.
    Eval(EvalArgs),
    /// Mean router weights per protein from predictions.csv.
    RouterReport(ReportArgs),
    /// ECE, reliability bins and the confidence table from predictions.csv.
    CalibrationReport(CalibrationArgs),
    /// Per-position accuracy from predictions.csv.
    PositionReport(PositionArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    proteins: usize,
    #[arg(long, default_value_t = 500)]
    variants: usize,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, value_parser = parse_serde::<FoldScheme>, default_value = "by-position")]
    folds: FoldScheme,
    #[arg(long, env = "TRIFIT_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Inputs {
    /// Variant CSV file or directory of `<protein_id>.csv` files.
    #[arg(long)]
    variants: PathBuf,
    /// Output store file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedDynArgs {
    #[command(flatten)]
    io: Inputs,
    /// Directory of `<protein_id>.pdb` files.
    #[arg(long)]
    structures: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    cutoff: f64,
    #[arg(long, default_value_t = DEFAULT_MODES)]
    modes: usize,
    #[arg(long, value_parser = parse_serde::<CrossCorrelation>, default_value = "mean-projection")]
    cross_correlation: CrossCorrelation,
    #[arg(long, default_value_t = DYNAMICS_SEED)]
    projection_seed: u64,
}

#[derive(Args)]
struct EmbedStructArgs {
    #[command(flatten)]
    io: Inputs,
    #[arg(long)]
    structures: PathBuf,
    #[arg(long, default_value_t = NEIGHBORS)]
    neighbors: usize,
    #[arg(long, default_value_t = STRUCTURE_SEED)]
    projection_seed: u64,
    #[arg(long, value_parser = parse_serde::<SiteGeometry>, default_value = "centroid-direction")]
    site_geometry: SiteGeometry,
}

#[derive(Args)]
struct ComposeSeqArgs {
    #[command(flatten)]
    io: Inputs,
    /// Use the built-in mock encoder over the structures' sequences.
    #[arg(long, requires = "structures", conflicts_with_all = ["context", "tokens"])]
    mock: bool,
    #[arg(long)]
    structures: Option<PathBuf>,
    /// Mock encoder seed.
    #[arg(long, env = "TRIFIT_SEED", default_value_t = 0)]
    seed: u64,
    /// Context-vector store (modality tag 4).
    #[arg(long, requires = "tokens", required_unless_present = "mock")]
    context: Option<PathBuf>,
    /// Token-table store (modality tag 5).
    #[arg(long, requires = "context")]
    tokens: Option<PathBuf>,
}

#[derive(Args)]
struct Stores {
    #[arg(long)]
    variants: PathBuf,
    #[arg(long)]
    seq: PathBuf,
    #[arg(long = "str")]
    structure: PathBuf,
    #[arg(long = "dyn")]
    dynamics: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    stores: Stores,
    #[arg(long)]
    out: PathBuf,
    /// JSON configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// full, seq, struct, dyn, seq+struct, seq+dyn, struct+dyn, no-moe or no-ctr.
    #[arg(long)]
    ablate: Option<Ablation>,
    #[arg(long, env = "TRIFIT_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    quantile: Option<f64>,
    #[arg(long, value_parser = parse_serde::<Aggregate>)]
    aggregate: Option<Aggregate>,
    /// Continue from a checkpoint with optimizer state (e.g. last.tfck).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    stores: Stores,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_serde::<SplitName>, default_value = "test")]
    split: SplitName,
    #[arg(long, value_parser = parse_serde::<Aggregate>, default_value = "per-assay")]
    aggregate: Aggregate,
    #[arg(long, default_value_t = trifit::data::DEFAULT_QUANTILE)]
    quantile: f64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrationArgs {
    #[command(flatten)]
    report: ReportArgs,
    #[arg(long, default_value_t = QUANTILE_BINS)]
    bins: usize,
}

#[derive(Args)]
struct PositionArgs {
    #[command(flatten)]
    report: ReportArgs,
    /// Structures giving protein lengths; the largest evaluated position otherwise.
    #[arg(long)]
    structures: Option<PathBuf>,
}

/// Parses a kebab-case unit variant through serde.
fn parse_serde<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Writes the store and reports per-item failures; `Ok(false)` if any.
fn finish_store(built: Built, out: &Path) -> Result<bool> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_store(out, &built.store)?;
    eprintln!("wrote {} entries to {}", built.store.entries.len(), out.display());
    if built.errors.is_empty() {
        return Ok(true);
    }
    eprintln!("{} item(s) failed:", built.errors.len());
    for e in &built.errors {
        eprintln!("  {}: {}", e.item, e.error);
    }
    Ok(false)
}

fn load_stores(s: &Stores) -> Result<(Vec<trifit::data::VariantRecord>, [trifit::embedding::EmbeddingStore; 3])> {
    let variants = pipeline::read_variants(&s.variants)?;
    let stores = [read_store(&s.seq)?, read_store(&s.structure)?, read_store(&s.dynamics)?];
    Ok((variants, stores))
}

fn train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::from_json_file(path)?,
        None => RunConfig::default(),
    };
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.lr_max = v;
    }
    if let Some(v) = a.weight_decay {
        t.weight_decay = v;
    }
    if let Some(v) = a.lambda {
        t.lambda = v;
    }
    if let Some(v) = a.tau {
        t.tau = v;
    }
    if let Some(v) = a.ablate {
        t.ablation = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.aggregate {
        t.aggregate = v;
    }
    if let Some(v) = a.quantile {
        cfg.quantile = v;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth(a) => {
            let defaults = SynthConfig::default();
            let cfg = SynthConfig {
                proteins: a.proteins,
                variants_per_protein: a.variants,
                min_len: a.min_len.unwrap_or(defaults.min_len),
                max_len: a.max_len.unwrap_or(defaults.max_len),
                seed: a.seed,
                folds: a.folds,
                ..defaults
            };
            let proteins = generate(&cfg)?;
            write_dataset(&a.out, &proteins)?;
            eprintln!("wrote {} proteins to {}", proteins.len(), a.out.display());
            Ok(true)
        }
        Command::EmbedDyn(a) => {
            let variants = pipeline::read_variants(&a.io.variants)?;
            let opts = DynamicsOptions {
                cutoff: a.cutoff,
                modes: a.modes,
                cross_correlation: a.cross_correlation,
                projection_seed: a.projection_seed,
            };
            finish_store(pipeline::embed_dynamics(&a.structures, &variants, &opts), &a.io.out)
        }
        Command::EmbedStruct(a) => {
            let variants = pipeline::read_variants(&a.io.variants)?;
            let opts = StructureOptions {
                neighbors: a.neighbors,
                projection_seed: a.projection_seed,
                site_geometry: a.site_geometry,
            };
            finish_store(pipeline::embed_structure(&a.structures, &variants, &opts), &a.io.out)
        }
        Command::ComposeSeq(a) => {
            let variants = pipeline::read_variants(&a.io.variants)?;
            let built = match (&a.structures, &a.context, &a.tokens) {
                (Some(structures), _, _) if a.mock => pipeline::compose_mock(structures, &variants, a.seed),
                (_, Some(context), Some(tokens)) => {
                    pipeline::compose_from_stores(&read_store(context)?, &read_store(tokens)?, &variants)?
                }
                _ => {
                    return Err(Error::Config(
                        "give --mock --structures DIR or --context and --tokens".into(),
                    ))
                }
            };
            finish_store(built, &a.io.out)
        }
        Command::Train(a) => {
            let cfg = train_config(&a)?;
            let (variants, stores) = load_stores(&a.stores)?;
            let resume = a.resume.as_deref().map(pipeline::load_resume).transpose()?;
            let outcome = pipeline::run_train(&variants, [&stores[0], &stores[1], &stores[2]], &cfg, &a.out, resume)?;
            let best = outcome.history.best_epoch;
            let score = outcome
                .history
                .epochs
                .iter()
                .find(|e| e.epoch == best)
                .map(|e| e.val_auroc);
            match score {
                Some(s) => eprintln!("best epoch {best}, validation AUROC {s:.4}"),
                None => eprintln!("best epoch {best}"),
            }
            Ok(true)
        }
        Command::Eval(a) => {
            let (variants, stores) = load_stores(&a.stores)?;
            let checkpoint = read_checkpoint(&a.checkpoint)?;
            let eval = pipeline::run_eval(
                &checkpoint,
                &variants,
                [&stores[0], &stores[1], &stores[2]],
                a.split,
                a.quantile,
                a.aggregate,
            )?;
            pipeline::write_eval(&a.out, &eval)?;
            let m = &eval.report.metrics.overall;
            eprintln!(
                "n={} auroc={:.4} auprc={:.4} acc={:.4} macro_f1={:.4}",
                m.n, m.auroc, m.auprc, m.acc, m.macro_f1
            );
            Ok(true)
        }
        Command::RouterReport(a) => {
            let rows = pipeline::read_predictions(&a.predictions)?;
            create_dir(&a.out)?;
            pipeline::write_router_report(&a.out.join(pipeline::ROUTER_FILE), &pipeline::router_report(&rows))?;
            Ok(true)
        }
        Command::CalibrationReport(a) => {
            let rows = pipeline::read_predictions(&a.report.predictions)?;
            create_dir(&a.report.out)?;
            let report = pipeline::calibration_report(&rows, a.bins);
            let mut json = serde_json::to_string_pretty(&report)?;
            json.push('\n');
            write_text(&a.report.out.join(pipeline::CALIBRATION_FILE), &json)?;
            write_text(
                &a.report.out.join(pipeline::RELIABILITY_FILE),
                &reliability_svg(&report),
            )?;
            eprintln!("ece={:.4}", report.ece);
            Ok(true)
        }
        Command::PositionReport(a) => {
            let rows = pipeline::read_predictions(&a.report.predictions)?;
            let lengths = match &a.structures {
                Some(dir) => {
                    let ids: std::collections::BTreeSet<String> = rows.iter().map(|r| r.protein_id.clone()).collect();
                    pipeline::structure_lengths(dir, ids)?
                }
                None => BTreeMap::new(),
            };
            create_dir(&a.report.out)?;
            let table = pipeline::position_report(&rows, &lengths);
            pipeline::write_position_report(&a.report.out.join(pipeline::POSITION_FILE), &table)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
