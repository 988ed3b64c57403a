//! `crossview` command line: correspondence generation, vocabulary expansion,
//! training, gradient checks, evaluation and reporting.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crossview_core::align::{AlignError, LossKind};
use crossview_core::corrgen::CorrgenError;
use crossview_core::eval::EvalError;
use crossview_core::io::FormatError;
use crossview_core::vocab::VocabError;

pub use config::RunConfig;
use config::{GeneratorKind, OutputFormat, ProviderKind};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or malformed input; exit code 1.
    #[error("{0}")]
    Validation(String),
    /// Missing files, numerical failure, failed checks; exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io { .. } => CliError::Runtime(e.to_string()),
            FormatError::Parse { .. } => CliError::Validation(e.to_string()),
        }
    }
}

impl From<CorrgenError> for CliError {
    fn from(e: CorrgenError) -> Self {
        match e {
            CorrgenError::Format(f) => f.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<VocabError> for CliError {
    fn from(e: VocabError) -> Self {
        match e {
            VocabError::Format(f) => f.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<AlignError> for CliError {
    fn from(e: AlignError) -> Self {
        match e {
            AlignError::Format(f) => f.into(),
            AlignError::NonFiniteLoss { .. } => CliError::Runtime(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Format(f) => f.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "crossview", version, about = "Cross-view contrastive alignment toolkit")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, env = "CROSSVIEW_CONFIG")]
    pub config: Option<PathBuf>,
    /// Top-level seed every random stream derives from.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the aerial-ground correspondence dataset.
    Corrgen(CorrgenArgs),
    /// Expand category names into text bags.
    Vocab(VocabArgs),
    /// Train the aerial encoder; writes a checkpoint and a loss trace.
    Train(TrainArgs),
    /// Compare analytic loss gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// COCO-style evaluation of a detections file.
    Eval(EvalArgs),
    /// Re-render one or more CSV reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CorrgenArgs {
    #[arg(long)]
    pub aerial: Option<PathBuf>,
    #[arg(long)]
    pub ground: Option<PathBuf>,
    #[arg(long)]
    pub detector: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Pairs per category, 0 for no cap.
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub confidence: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub augment: bool,
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    /// Annotation file whose category table is expanded.
    #[arg(long)]
    pub categories: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_variants: Option<usize>,
    #[arg(long, value_enum)]
    pub generator: Option<GeneratorKind>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub aligned: Option<PathBuf>,
    #[arg(long)]
    pub text_bags: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub provider: Option<ProviderKind>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Continue from the checkpoint file when it exists.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Finite-difference steps, e.g. `--h 1e-4,1e-5,1e-6`.
    #[arg(long, value_delimiter = ',')]
    pub h: Vec<f64>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Test hook: perturb one loss's analytic gradient.
    #[arg(long, hide = true, value_parser = parse_loss_kind)]
    pub corrupt: Option<LossKind>,
}

fn parse_loss_kind(s: &str) -> Result<LossKind, String> {
    LossKind::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("unknown loss {s:?}"))
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Ground-truth annotation file.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Novel category ids, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub novel: Vec<u32>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Also write the report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub map_base: Option<f64>,
    #[arg(long)]
    pub map_novel: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// CSV reports written by `eval --format csv`.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: OutputFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

/// Loads the config file (if any) and applies flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    let p = &mut cfg.paths;
    match &cli.command {
        Command::Corrgen(a) => {
            set_path(&mut p.aerial_annotations, &a.aerial);
            set_path(&mut p.ground_annotations, &a.ground);
            set_path(&mut p.detector_script, &a.detector);
            set_path(&mut p.aligned, &a.out);
            set(&mut cfg.corrgen.cap, a.cap);
            set(&mut cfg.corrgen.confidence, a.confidence);
            set(&mut cfg.corrgen.nms_iou, a.nms_iou);
            cfg.corrgen.augment |= a.augment;
        }
        Command::Vocab(a) => {
            set_path(&mut p.categories, &a.categories);
            set_path(&mut p.text_bags, &a.out);
            set(&mut cfg.vocab.max_variants, a.max_variants);
            set(&mut cfg.vocab.generator, a.generator);
        }
        Command::Train(a) => {
            set_path(&mut p.aligned, &a.aligned);
            set_path(&mut p.text_bags, &a.text_bags);
            set_path(&mut p.features, &a.features);
            set_path(&mut p.checkpoint, &a.checkpoint);
            set_path(&mut p.trace, &a.trace);
            let t = &mut cfg.train;
            set(&mut t.provider, a.provider);
            set(&mut t.epochs, a.epochs);
            set(&mut t.batch_size, a.batch_size);
            set(&mut t.lr, a.lr);
            set(&mut t.rho, a.rho);
            set(&mut t.sigma, a.sigma);
            set(&mut t.embed_dim, a.embed_dim);
            t.resume |= a.resume;
        }
        Command::Gradcheck(a) => {
            if !a.h.is_empty() {
                cfg.gradcheck.h.clone_from(&a.h);
            }
            set(&mut cfg.gradcheck.instances, a.instances);
            set(&mut cfg.gradcheck.tolerance, a.tolerance);
        }
        Command::Eval(a) => {
            set_path(&mut p.detections, &a.detections);
            set_path(&mut p.targets, &a.targets);
            set_path(&mut p.report, &a.report);
            if !a.novel.is_empty() {
                cfg.eval.novel.clone_from(&a.novel);
            }
            set(&mut cfg.eval.format, a.format);
            set(&mut cfg.eval.name, a.name.clone());
            if a.map_base.is_some() {
                cfg.eval.map_base = a.map_base;
            }
            if a.map_novel.is_some() {
                cfg.eval.map_novel = a.map_novel;
            }
        }
        Command::Report(_) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one subcommand, writing its human-readable summary to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Corrgen(_) => commands::cmd_corrgen(&cfg, out),
        Command::Vocab(_) => commands::cmd_vocab(&cfg, out),
        Command::Train(_) => commands::cmd_train(&cfg, out),
        Command::Gradcheck(a) => commands::cmd_gradcheck(&cfg, a.corrupt, out),
        Command::Eval(_) => commands::cmd_eval(&cfg, out),
        Command::Report(a) => commands::cmd_report(&a.inputs, a.format, a.out.as_deref(), out),
    }
}
