//! Run configuration: one TOML file, flags override file values, every
//! field has a default so partial files (and none at all) work.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use esteer_core::agent::remote::RemoteConfig;
use esteer_core::agent::EpisodeLimits;
use esteer_core::lm::DecodeParams;
use esteer_core::pipeline::PipelineConfig;
use esteer_core::steering::SteeringConfig;
use esteer_core::vad::{VadAxis, VadVector, VAD_MAX, VAD_MIN};

use crate::CliError;

/// Input artifact locations plus the output directory. Inputs are
/// optional at parse time; each subcommand demands the ones it reads.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lm: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activations: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sae: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    /// VAD lexicon TSV; the bundled lexicon when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    /// Emotion label table TSV; the bundled table when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_table: Option<PathBuf>,
    /// Scripted agent scenario; the bundled scenario when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    /// Metrics table consumed by `report`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            lm: None,
            activations: None,
            sae: None,
            features: None,
            lexicon: None,
            label_table: None,
            scenario: None,
            table: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Sweep shape: which axis, which grid values, how many tasks of each
/// kind, and the ablation knobs `validate-latents` adds on top.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub axis: String,
    pub grid: Vec<f64>,
    pub n_objective: usize,
    pub n_subjective: usize,
    pub n_safety: usize,
    pub repeats: usize,
    /// Feature-ablation mode for `validate-latents`.
    pub mode: String,
    pub ablation_seed: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            axis: "valence".into(),
            grid: vec![-9.0, -6.0, -3.0, 0.0, 3.0, 6.0, 9.0],
            n_objective: 8,
            n_subjective: 6,
            n_safety: 4,
            repeats: 1,
            mode: "original".into(),
            ablation_seed: 7,
        }
    }
}

/// Agent run shape: backend choice, episode limits, task counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSection {
    /// `scripted`, `toy`, or `remote`.
    pub backend: String,
    pub limits: EpisodeLimits,
    /// Executor runs per candidate set (toy backend).
    pub n_candidates: usize,
    pub n_objective: usize,
    pub n_subjective: usize,
    pub n_safety: usize,
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            backend: "scripted".into(),
            limits: EpisodeLimits::default(),
            n_candidates: 2,
            n_objective: 4,
            n_subjective: 3,
            n_safety: 3,
        }
    }
}

/// Execution knobs that change how, not what, a command computes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecSection {
    /// Worker threads for sweep/agent stages; 0 keeps the library default.
    pub jobs: usize,
    /// Reuse the shared artifact cache for train/extract stages.
    pub cache: bool,
}

impl Default for ExecSection {
    fn default() -> Self {
        ExecSection {
            jobs: 0,
            cache: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    pub pipeline: PipelineConfig,
    pub steering: SteeringConfig,
    pub decode: DecodeParams,
    pub sweep: SweepSection,
    pub agent: AgentSection,
    pub exec: ExecSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteConfig>,
}

impl RunConfig {
    /// Load from `path`, or defaults when no file is named.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
    }
}

/// Resolve a required input path: present in config and present on disk.
pub fn require_input<'a>(value: &'a Option<PathBuf>, field: &str) -> Result<&'a Path, CliError> {
    let path = value
        .as_deref()
        .ok_or_else(|| CliError::config(format!("missing field: paths.{field}")))?;
    if !path.exists() {
        return Err(CliError::config(format!(
            "paths.{field}: file not found: {}",
            path.display()
        )));
    }
    Ok(path)
}

pub fn parse_axis(name: &str) -> Result<VadAxis, CliError> {
    for axis in VadAxis::ALL {
        if axis.name() == name {
            return Ok(axis);
        }
    }
    Err(CliError::config(format!(
        "unknown axis {name:?} (expected valence, arousal, or dominance)"
    )))
}

/// `V,A,D` triple of reals, each in [-10, 10].
pub fn parse_vad(text: &str) -> Result<VadVector, CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::config(format!(
            "--vad expects V,A,D (got {text:?})"
        )));
    }
    let mut vals = [0.0f64; 3];
    for (slot, part) in vals.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("--vad: not a number: {part:?}")))?;
    }
    VadVector::new(vals[0], vals[1], vals[2])
        .map_err(|e| CliError::config(format!("--vad: {e}")))
}

/// Comma-separated reals for `--grid`, range-checked against VAD bounds.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let mut grid = Vec::new();
    for part in text.split(',') {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("--grid: not a number: {part:?}")))?;
        if !(VAD_MIN..=VAD_MAX).contains(&v) {
            return Err(CliError::config(format!(
                "--grid: {v} outside [{VAD_MIN}, {VAD_MAX}]"
            )));
        }
        grid.push(v);
    }
    if grid.is_empty() {
        return Err(CliError::config("--grid: empty".into()));
    }
    Ok(grid)
}

pub fn parse_u64(flag: &str, text: &str) -> Result<u64, CliError> {
    text.trim()
        .parse()
        .map_err(|_| CliError::config(format!("{flag}: not an integer: {text:?}")))
}

pub fn parse_usize(flag: &str, text: &str) -> Result<usize, CliError> {
    text.trim()
        .parse()
        .map_err(|_| CliError::config(format!("{flag}: not an integer: {text:?}")))
}

pub fn parse_f64(flag: &str, text: &str) -> Result<f64, CliError> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| CliError::config(format!("{flag}: not a number: {text:?}")))?;
    if !v.is_finite() {
        return Err(CliError::config(format!("{flag}: must be finite")));
    }
    Ok(v)
}
