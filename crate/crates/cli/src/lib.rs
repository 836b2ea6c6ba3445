//! `mtriage`: every pipeline stage as a subcommand writing to its own run
//! directory.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub mod analysis;
pub mod config;
pub mod data;
pub mod pipeline;
pub mod report;
pub mod rundir;
pub mod serve;

use config::Config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing dependency: {0}")]
    Missing(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Failed(String),
}

/// Exit status for an unknown command or malformed arguments.
pub const USAGE_EXIT: i32 = 64;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Missing(_) => 3,
            Self::Numeric(_) => 4,
            Self::Failed(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Failed(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Failed(e.to_string())
    }
}

impl From<mtriage_core::cvae::CvaeError> for CliError {
    fn from(e: mtriage_core::cvae::CvaeError) -> Self {
        use mtriage_core::cvae::CvaeError as E;
        match e {
            E::NonFiniteLoss { .. } | E::NonFinite(_) => Self::Numeric(e.to_string()),
            E::Config(_) => Self::Config(e.to_string()),
            _ => Self::Failed(e.to_string()),
        }
    }
}

impl From<mtriage_core::scoring::ScoringError> for CliError {
    fn from(e: mtriage_core::scoring::ScoringError) -> Self {
        use mtriage_core::scoring::ScoringError as E;
        match e {
            E::NonFinite { .. } => Self::Numeric(e.to_string()),
            E::Model(m) => m.into(),
            E::Fraction(_) => Self::Config(e.to_string()),
            _ => Self::Failed(e.to_string()),
        }
    }
}

impl From<mtriage_core::eval::EvalError> for CliError {
    fn from(e: mtriage_core::eval::EvalError) -> Self {
        use mtriage_core::eval::EvalError as E;
        match e {
            E::NonFinite(_) => Self::Numeric(e.to_string()),
            E::Fraction(_) | E::Grid => Self::Config(e.to_string()),
            _ => Self::Failed(e.to_string()),
        }
    }
}

impl From<mtriage_core::synth::SynthError> for CliError {
    fn from(e: mtriage_core::synth::SynthError) -> Self {
        use mtriage_core::synth::SynthError as E;
        match e {
            E::Spec(_) => Self::Config(e.to_string()),
            _ => Self::Failed(e.to_string()),
        }
    }
}

impl From<mtriage_core::imgproc::ImageError> for CliError {
    fn from(e: mtriage_core::imgproc::ImageError) -> Self {
        Self::Failed(e.to_string())
    }
}

impl From<mtriage_core::triage::TriageError> for CliError {
    fn from(e: mtriage_core::triage::TriageError) -> Self {
        Self::Failed(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mtriage", version, about = "Technical-outlier triage for mammogram-like images")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Root under which run directories are created.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives a fully sequential run.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridKind {
    Erosion,
    Muscle,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted outliers.
    Synth {
        #[arg(long)]
        n_images: Option<usize>,
        #[arg(long)]
        outlier_rate: Option<f64>,
    },
    /// Segment, crop, pad, mirror and resize a corpus to 512×256.
    Preprocess {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train the CVAE on the training split.
    Train {
        #[arg(long)]
        preprocessed: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Exclusion CSV from a finished triage round.
        #[arg(long)]
        exclude: Option<PathBuf>,
    },
    /// Compute the fifteen outlier scores and both ensembles.
    Score {
        #[arg(long)]
        preprocessed: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        exclude: Option<PathBuf>,
    },
    /// Erosion pixel counts.
    Erode {
        #[arg(long)]
        preprocessed: Option<PathBuf>,
    },
    /// Pectoral-muscle line counts.
    Muscle {
        #[arg(long)]
        preprocessed: Option<PathBuf>,
    },
    /// Bootstrap metrics of every score column against truth labels.
    Eval {
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Recall of the CVAE ∪ erosion ∪ muscle selection cascade.
    Cascade {
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        erosion: Option<PathBuf>,
        #[arg(long)]
        muscle: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Recall of every erosion or muscle configuration.
    Grid {
        kind: GridKind,
        #[arg(long)]
        preprocessed: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// HTTP triage service.
    Serve {
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        session: Option<PathBuf>,
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        top_n: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Synth { .. } => "synth",
            Self::Preprocess { .. } => "preprocess",
            Self::Train { .. } => "train",
            Self::Score { .. } => "score",
            Self::Erode { .. } => "erode",
            Self::Muscle { .. } => "muscle",
            Self::Eval { .. } => "eval",
            Self::Cascade { .. } => "cascade",
            Self::Grid { .. } => "grid",
            Self::Serve { .. } => "serve",
        }
    }

    /// Flags as `key=value` overrides, applied last.
    fn overrides(&self) -> Vec<String> {
        fn p(out: &mut Vec<String>, key: &str, v: &Option<PathBuf>) {
            if let Some(v) = v {
                out.push(format!("{key}={}", v.display()));
            }
        }
        fn s<T: ToString>(out: &mut Vec<String>, key: &str, v: &Option<T>) {
            if let Some(v) = v {
                out.push(format!("{key}={}", v.to_string()));
            }
        }
        let mut o = Vec::new();
        match self {
            Self::Synth { n_images, outlier_rate } => {
                s(&mut o, "synth.n_images", n_images);
                s(&mut o, "synth.outlier_rate", outlier_rate);
            }
            Self::Preprocess { corpus } => p(&mut o, "corpus", corpus),
            Self::Train { preprocessed, epochs, exclude } => {
                p(&mut o, "preprocessed", preprocessed);
                s(&mut o, "cvae.epochs", epochs);
                p(&mut o, "exclude", exclude);
            }
            Self::Score { preprocessed, model, exclude } => {
                p(&mut o, "preprocessed", preprocessed);
                p(&mut o, "model", model);
                p(&mut o, "exclude", exclude);
            }
            Self::Erode { preprocessed } | Self::Muscle { preprocessed } => p(&mut o, "preprocessed", preprocessed),
            Self::Eval { scores, truth } => {
                p(&mut o, "scores", scores);
                p(&mut o, "truth", truth);
            }
            Self::Cascade { scores, erosion, muscle, truth } => {
                p(&mut o, "scores", scores);
                p(&mut o, "erosion", erosion);
                p(&mut o, "muscle", muscle);
                p(&mut o, "truth", truth);
            }
            Self::Grid { preprocessed, truth, .. } => {
                p(&mut o, "preprocessed", preprocessed);
                p(&mut o, "truth", truth);
            }
            Self::Serve { scores, corpus, session, addr, top_n } => {
                p(&mut o, "scores", scores);
                p(&mut o, "corpus", corpus);
                p(&mut o, "session", session);
                s(&mut o, "serve.addr", addr);
                s(&mut o, "serve.top_n", top_n);
            }
        }
        o
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { USAGE_EXIT } else { 0 };
        }
    };
    match run(&cli) {
        Ok(dir) => {
            if let Some(dir) = dir {
                println!("{}", dir.display());
            }
            0
        }
        Err(e) => {
            eprintln!("mtriage {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}

pub fn resolve_config(cli: &Cli) -> Result<Config, CliError> {
    let mut overrides = cli.common.set.clone();
    if let Some(out) = &cli.common.out {
        overrides.push(format!("out={}", out.display()));
    }
    if let Some(seed) = cli.common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(t) = cli.common.threads {
        overrides.push(format!("threads={t}"));
    }
    overrides.extend(cli.command.overrides());
    Config::resolve(cli.common.config.as_deref(), std::env::vars(), &overrides)
}

/// Runs one command; returns the run directory it wrote, if any.
pub fn run(cli: &Cli) -> Result<Option<PathBuf>, CliError> {
    let cfg = resolve_config(cli)?;
    let threads: usize = cfg.get("threads")?;
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
    let dir = match &cli.command {
        Command::Synth { .. } => pipeline::synth(&cfg)?,
        Command::Preprocess { .. } => pipeline::preprocess(&cfg)?,
        Command::Train { .. } => pipeline::train(&cfg)?,
        Command::Score { .. } => pipeline::score(&cfg)?,
        Command::Erode { .. } => analysis::erode(&cfg)?,
        Command::Muscle { .. } => analysis::muscle(&cfg)?,
        Command::Grid { kind, .. } => analysis::grid(&cfg, *kind)?,
        Command::Eval { .. } => report::eval(&cfg)?,
        Command::Cascade { .. } => report::cascade(&cfg)?,
        Command::Serve { .. } => return serve::serve(&cfg).map(|()| None),
    };
    Ok(Some(dir))
}
