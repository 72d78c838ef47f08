//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ── VAD space / label tables ────────────────────────────────────
    #[error("unknown emotion label: {0:?}")]
    UnknownLabel(String),
    #[error("VAD component out of range: {axis} = {value} (allowed [-10, 10])")]
    VadOutOfRange { axis: &'static str, value: f64 },
    #[error("invalid delta_max for {axis}: {value} (must be finite and > 0)")]
    InvalidDeltaMax { axis: &'static str, value: f64 },
    #[error("label table parse error at line {line}: {msg}")]
    LabelTableParse { line: usize, msg: String },

    // ── toy LM ──────────────────────────────────────────────────────
    #[error("token {token} out of vocabulary (vocab_size = {vocab_size})")]
    TokenOutOfVocab { token: u32, vocab_size: usize },
    #[error("non-finite loss at step {step}: training diverged")]
    NonFiniteLoss { step: usize },
    #[error("block index {block} out of range (model has {n_blocks} blocks)")]
    BlockOutOfRange { block: usize, n_blocks: usize },
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("patch failed at decode step {step}: {source}")]
    PatchFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("empty prompt")]
    EmptyPrompt,

    // ── SAE ─────────────────────────────────────────────────────────
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("insufficient data: {rows} rows, need at least {min}")]
    InsufficientData { rows: usize, min: usize },
    #[error("activation set has zero variance")]
    ZeroVariance,

    // ── feature identification ──────────────────────────────────────
    #[error("no label pair in the table contrasts on axis {axis} (need >= {min_gap} apart, <= {max_other} on other axes)")]
    NoContrastingLabels {
        axis: &'static str,
        min_gap: f64,
        max_other: f64,
    },
    #[error("no latent neuron cleared the stability threshold for axis {axis}")]
    EmptySelection { axis: &'static str },
    #[error("feature weights are all zero")]
    ZeroWeights,

    // ── steering ────────────────────────────────────────────────────
    #[error("steering direction is zero for axis {axis} while delta is nonzero")]
    ZeroDirection { axis: &'static str },

    // ── evaluation ──────────────────────────────────────────────────
    #[error("unknown answer parser: {0:?}")]
    UnknownParser(String),
    #[error("task {0:?} has no gold answer")]
    MissingGold(String),
    #[error("value series has non-positive mean; fluctuation range undefined")]
    ZeroMean,
    #[error("length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("latent space too small for ablation: need latent_dim > {min}, got {latent_dim}")]
    InsufficientLatents { latent_dim: usize, min: usize },
    #[error("lexicon parse error at line {line}: {msg}")]
    LexiconParse { line: usize, msg: String },

    // ── agent ───────────────────────────────────────────────────────
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("request timed out after {0} attempts")]
    Timeout(u32),
    #[error("HTTP status {0} after {1} attempts")]
    HttpStatus(u16, u32),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no traces to aggregate")]
    EmptyTraces,
    #[error("scenario parse error: {0}")]
    ScenarioParse(String),

    // ── serialization / io ──────────────────────────────────────────
    #[error("checkpoint format error: {0}")]
    Container(String),
    #[error("io failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
