//! Command-line front end: dataset generation, training, evaluation,
//! plot-data studies and hyperparameter sweeps.

pub mod studies;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dvga_core::graphdata::{self, SplitName};
use dvga_core::model::LatentLayout;
use dvga_core::synthgen::{self, GenConfig};
use dvga_core::trainer::{self, run, RunConfig, Variant};

use crate::studies::{Study, StudyConfig};

#[derive(Debug, Parser)]
#[command(name = "dvga", version, about = "Disentangled variational graph autoencoder for networked treatment effects")]
pub struct Cli {
    /// Worker threads for commands that train several models.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset directory, or the full scenario grid.
    Generate(GenerateArgs),
    /// Train one model and write a run directory.
    Train(TrainArgs),
    /// Score a trained run on one split and update its report.
    Evaluate(EvaluateArgs),
    /// Emit plot data for one study as a tidy CSV.
    Figure(FigureArgs),
    /// Train over an (alpha_1, alpha_2) grid on one dataset.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator settings as JSON; flags override individual fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "DVGA_SEED")]
    pub seed: Option<u64>,
    /// Emit every scenario and replicate under `out/<dims>/seed<r>`.
    #[arg(long)]
    pub grid: bool,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Block sizes `t,c,y,o`.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
}

/// Overrides applied on top of a run configuration file.
#[derive(Debug, Default, Args)]
pub struct RunOverrides {
    #[arg(long, env = "DVGA_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub alpha_1: Option<f64>,
    #[arg(long)]
    pub alpha_2: Option<f64>,
    /// Epochs without validation improvement before stopping; 0 disables
    /// early stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub eval_samples: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Same dimension for all four latent channels.
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub gcn_layers: Option<usize>,
    /// Training nodes per epoch for the set-level regularizers; 0 uses all.
    #[arg(long)]
    pub reg_sample: Option<usize>,
}

impl RunOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        if let Some(s) = self.seed {
            t.seed = s;
            cfg.model.seed = s;
        }
        if let Some(v) = self.variant {
            t.variant = v;
        }
        if let Some(e) = self.epochs {
            t.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            t.learning_rate = lr;
        }
        if let Some(a) = self.alpha_1 {
            t.alpha_1 = a;
        }
        if let Some(a) = self.alpha_2 {
            t.alpha_2 = a;
        }
        if let Some(p) = self.patience {
            t.patience = (p > 0).then_some(p);
        }
        if let Some(l) = self.eval_samples {
            t.eval_samples = l;
        }
        if let Some(r) = self.reg_sample {
            t.reg_sample = (r > 0).then_some(r);
        }
        if let Some(h) = self.hidden_dim {
            cfg.model.hidden_dim = h;
            cfg.model.head_hidden_dim = h;
        }
        if let Some(d) = self.latent_dim {
            cfg.model.layout = LatentLayout::uniform(d);
        }
        if let Some(l) = self.gcn_layers {
            cfg.model.gcn_layers = l;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Run configuration (`{"model": {...}, "train": {...}}`) as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: RunOverrides,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
    /// Posterior draws per node; defaults to the run's setting.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FigureArgs {
    #[arg(long, value_enum)]
    pub study: Study,
    #[arg(long)]
    pub out: PathBuf,
    /// Study settings as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub zetas: Option<Vec<f64>>,
    #[command(flatten)]
    pub overrides: RunOverrides,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Values tried for each of alpha_1 and alpha_2.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[command(flatten)]
    pub overrides: RunOverrides,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn load_dataset(dir: &Path) -> Result<graphdata::Dataset> {
    graphdata::load(dir).with_context(|| format!("cannot load dataset from {}", dir.display()))
}

fn seed_or_default(seed: Option<u64>) -> u64 {
    seed.unwrap_or(0)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let mut cfg: GenConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => GenConfig::default(),
    };
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(z) = args.zeta {
        cfg.zeta = z;
    }
    if let Some(d) = &args.dims {
        let dims: [usize; 4] = d.as_slice().try_into().context("--dims takes four block sizes t,c,y,o")?;
        cfg = cfg.with_dims(dims);
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.grid {
        for (i, c) in synthgen::scenario_grid(cfg.seed, &cfg).iter().enumerate() {
            let dir = args.out.join(c.dims_label()).join(format!("seed{}", i % synthgen::SEEDS_PER_SCENARIO));
            graphdata::save(&synthgen::generate(c)?, &dir)?;
        }
    } else {
        graphdata::save(&synthgen::generate(&cfg)?, &args.out)?;
    }
    Ok(())
}

fn run_config(config: Option<&Path>, overrides: &RunOverrides) -> Result<RunConfig> {
    let mut cfg: RunConfig = match config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = run_config(args.config.as_deref(), &args.overrides)?;
    let ds = load_dataset(&args.data)?;
    let split = ds.splits.clone().context("dataset has no splits.json")?;
    let (outcome, report) = run(&ds, &split, &cfg, &SplitName::ALL)?;
    trainer::write_run(&args.out, &cfg, &outcome, &report)?;
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let (cfg, model) = trainer::load_model(&args.run)?;
    let ds = load_dataset(&args.data)?;
    let split = ds.splits.clone().context("dataset has no splits.json")?;
    if split.get(args.split).is_empty() {
        bail!("split '{}' is empty", args.split);
    }
    let mut options = cfg.predict_options();
    if let Some(l) = args.samples {
        if l == 0 {
            bail!("--samples must be at least 1");
        }
        options.samples = l;
    }
    let metrics = trainer::run::evaluate_splits(&model, &ds, &split, &options, &[args.split])?;
    let mut report = trainer::run::read_report(&args.run)?;
    report.metrics.extend(metrics);
    trainer::run::write_json(&args.run.join(trainer::run::REPORT_FILE), &report)?;
    println!("{}", serde_json::to_string(&report.metrics[&args.split])?);
    Ok(())
}

pub fn study_config(args: &FigureArgs) -> Result<StudyConfig> {
    let mut cfg: StudyConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => StudyConfig::default(),
    };
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(n) = args.n {
        cfg.generator.n = n;
    }
    if let Some(z) = &args.zetas {
        cfg.zetas = z.clone();
    }
    args.overrides.apply(&mut cfg.run);
    studies::validate(&cfg, args.study)?;
    Ok(cfg)
}

pub fn cmd_figure(args: &FigureArgs, jobs: usize) -> Result<()> {
    let cfg = study_config(args)?;
    let base = seed_or_default(args.overrides.seed);
    let cells = studies::cells(args.study, &cfg);
    let rows = studies::execute(&cells, &cfg, base, jobs)?;
    studies::write_rows(&args.out, &rows)
}

pub fn cmd_sweep(args: &SweepArgs, jobs: usize) -> Result<()> {
    let cfg = run_config(args.config.as_deref(), &args.overrides)?;
    let ds = load_dataset(&args.data)?;
    let split = ds.splits.clone().context("dataset has no splits.json")?;
    let values = args.values.clone().unwrap_or_else(|| trainer::SWEEP_VALUES.to_vec());
    if values.is_empty() {
        bail!("--values must not be empty");
    }
    let grid: Vec<(f64, f64)> = values.iter().flat_map(|&a| values.iter().map(move |&b| (a, b))).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let rows = pool.install(|| trainer::sweep(&ds, &split, &cfg, &grid))?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(&args.out)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Figure(a) => cmd_figure(a, cli.jobs),
        Command::Sweep(a) => cmd_sweep(a, cli.jobs),
    }
}

/// 1 for numerical failures, 2 for everything else (bad input or config).
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| e.downcast_ref::<dvga_core::Error>().is_some_and(dvga_core::Error::is_numerical));
    if numerical {
        1
    } else {
        2
    }
}

pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
