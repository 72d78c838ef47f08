//! `esteer`: one verb per pipeline stage. Config comes from a TOML file
//! (`--config`), flags override file values, and every run writes a
//! manifest into its output directory that can itself be fed back as the
//! config to reproduce the run.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod manifest;

use commands::Overrides;
use config::{parse_f64, parse_grid, parse_u64, parse_usize, parse_vad};

/// Failure carrying its exit class: config problems exit 2, failures
/// while doing the work exit 1. Messages render as one line.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn config(msg: String) -> Self {
        CliError::Config(msg)
    }

    pub fn runtime(msg: String) -> Self {
        CliError::Runtime(msg)
    }

    pub fn config_from(err: impl fmt::Display) -> Self {
        CliError::Config(err.to_string())
    }

    pub fn runtime_from(err: impl fmt::Display) -> Self {
        CliError::Runtime(err.to_string())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config-error",
            CliError::Runtime(_) => "runtime-error",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn one_line(&self) -> String {
        let msg = match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        };
        msg.replace('\n', "; ")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind(), self.one_line())
    }
}

#[derive(Parser)]
#[command(
    name = "esteer",
    version,
    about = "Emotion-axis steering for a desk-scale language model"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default)]
struct CommonFlags {
    /// Run-config TOML; built-in defaults apply when omitted
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides paths.out_dir)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Primary seed for this command
    #[arg(long, value_name = "N")]
    seed: Option<String>,
    /// Worker threads for parallel stages; 0 keeps the library default
    #[arg(long, value_name = "N")]
    jobs: Option<String>,
}

#[derive(Args, Default)]
struct SteerFlags {
    /// Steering target as a V,A,D triple in [-10, 10]
    #[arg(long, value_name = "V,A,D")]
    vad: Option<String>,
    /// Global steering strength α
    #[arg(long, value_name = "F")]
    alpha: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the toy LM on the templated emotion corpus
    TrainLm {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Tap block-k hidden states over the training corpus
    DumpActivations {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Train the sparse autoencoder on dumped activations
    TrainSae {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Extract per-axis latent features from contrastive pairs
    ExtractFeatures {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Generate from the raw LM, no steering hook installed
    Generate {
        #[command(flatten)]
        common: CommonFlags,
        /// Prompt text
        #[arg(long, value_name = "TEXT")]
        prompt: Option<String>,
    },
    /// Generate with VAD steering injected at block k
    SteerGenerate {
        #[command(flatten)]
        common: CommonFlags,
        #[command(flatten)]
        steer: SteerFlags,
        /// Prompt text
        #[arg(long, value_name = "TEXT")]
        prompt: Option<String>,
    },
    /// Sweep one VAD axis over the task set and write metrics + charts
    Sweep {
        #[command(flatten)]
        common: CommonFlags,
        #[command(flatten)]
        steer: SteerFlags,
        /// Swept axis: valence, arousal, or dominance
        #[arg(long, value_name = "AXIS")]
        axis: Option<String>,
        /// Grid values on the swept axis, comma-separated
        #[arg(long, value_name = "CSV")]
        grid: Option<String>,
    },
    /// Re-run the sweep under ablated features and report fluctuation
    ValidateLatents {
        #[command(flatten)]
        common: CommonFlags,
        #[command(flatten)]
        steer: SteerFlags,
        /// Swept axis: valence, arousal, or dominance
        #[arg(long, value_name = "AXIS")]
        axis: Option<String>,
        /// Grid values on the swept axis, comma-separated
        #[arg(long, value_name = "CSV")]
        grid: Option<String>,
        /// Feature ablation: original, random, or half-random
        #[arg(long, value_name = "MODE")]
        mode: Option<String>,
    },
    /// Run planner/decider/executor episodes and compute agent metrics
    AgentRun {
        #[command(flatten)]
        common: CommonFlags,
        #[command(flatten)]
        steer: SteerFlags,
        /// Agent backend: scripted, toy, or remote
        #[arg(long, value_name = "NAME")]
        backend: Option<String>,
    },
    /// Rebuild charts and manifest from an existing metrics table
    Report {
        #[command(flatten)]
        common: CommonFlags,
        /// Metrics CSV to re-render (overrides paths.table)
        #[arg(long, value_name = "PATH")]
        table: Option<PathBuf>,
    },
}

fn base_overrides(common: &CommonFlags) -> Result<Overrides, CliError> {
    let mut ov = Overrides {
        out: common.out.clone(),
        ..Overrides::default()
    };
    if let Some(seed) = &common.seed {
        ov.seed = Some(parse_u64("--seed", seed)?);
    }
    if let Some(jobs) = &common.jobs {
        ov.jobs = Some(parse_usize("--jobs", jobs)?);
    }
    Ok(ov)
}

fn steer_overrides(ov: &mut Overrides, steer: &SteerFlags) -> Result<(), CliError> {
    if let Some(vad) = &steer.vad {
        ov.vad = Some(parse_vad(vad)?);
    }
    if let Some(alpha) = &steer.alpha {
        ov.alpha = Some(parse_f64("--alpha", alpha)?);
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::TrainLm { common } => {
            let ov = base_overrides(&common)?;
            commands::train_lm(common.config.as_deref(), ov)
        }
        Cmd::DumpActivations { common } => {
            let ov = base_overrides(&common)?;
            commands::dump_activations(common.config.as_deref(), ov)
        }
        Cmd::TrainSae { common } => {
            let ov = base_overrides(&common)?;
            commands::train_sae(common.config.as_deref(), ov)
        }
        Cmd::ExtractFeatures { common } => {
            let ov = base_overrides(&common)?;
            commands::extract_features(common.config.as_deref(), ov)
        }
        Cmd::Generate { common, prompt } => {
            let mut ov = base_overrides(&common)?;
            ov.prompt = prompt;
            commands::generate(common.config.as_deref(), ov)
        }
        Cmd::SteerGenerate {
            common,
            steer,
            prompt,
        } => {
            let mut ov = base_overrides(&common)?;
            steer_overrides(&mut ov, &steer)?;
            ov.prompt = prompt;
            commands::steer_generate(common.config.as_deref(), ov)
        }
        Cmd::Sweep {
            common,
            steer,
            axis,
            grid,
        } => {
            let mut ov = base_overrides(&common)?;
            steer_overrides(&mut ov, &steer)?;
            ov.axis = axis;
            if let Some(grid) = &grid {
                ov.grid = Some(parse_grid(grid)?);
            }
            commands::sweep(common.config.as_deref(), ov)
        }
        Cmd::ValidateLatents {
            common,
            steer,
            axis,
            grid,
            mode,
        } => {
            let mut ov = base_overrides(&common)?;
            steer_overrides(&mut ov, &steer)?;
            ov.axis = axis;
            ov.mode = mode;
            if let Some(grid) = &grid {
                ov.grid = Some(parse_grid(grid)?);
            }
            commands::validate_latents(common.config.as_deref(), ov)
        }
        Cmd::AgentRun {
            common,
            steer,
            backend,
        } => {
            let mut ov = base_overrides(&common)?;
            steer_overrides(&mut ov, &steer)?;
            ov.backend = backend;
            commands::agent_run(common.config.as_deref(), ov)
        }
        Cmd::Report { common, table } => {
            let mut ov = base_overrides(&common)?;
            ov.table = table;
            commands::report(common.config.as_deref(), ov)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        eprintln!("esteer: {err}");
        std::process::exit(err.exit_code());
    }
}
