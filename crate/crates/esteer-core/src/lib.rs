//! Desk-scale emotion steering for a toy language model.
//!
//! The pipeline, end to end:
//!
//! 1. [`corpus`] generates templated training lines pairing task text with an
//!    emotion segment, and [`lm`] trains a small decoder-only transformer on
//!    them with a hidden-state tap after any block.
//! 2. [`sae`] trains a sparse autoencoder on tapped block-k activations:
//!    non-negative sparse encoding, single-linear-layer decoding.
//! 3. [`features`] identifies per-axis (valence / arousal / dominance) latent
//!    neuron subsets via positive-negative contrastive prompt pairs and turns
//!    them into unit directions in latent space.
//! 4. [`steering`] maps a target point in VAD space to per-axis latent offsets
//!    ([`vad`]), decodes them into hidden-space directions, scale-aligns them
//!    per token, and injects the sum at block k during generation.
//! 5. [`eval`] runs VAD grid sweeps over synthetic task sets, scores outputs
//!    with a VAD lexicon, and computes validity / success / fluctuation
//!    metrics; [`agent`] does the same for a planner/decider/executor loop.
//!
//! [`pipeline`] wires the stages together with deterministic defaults and an
//! on-disk artifact cache keyed by configuration hash.

/// Crate version, echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod agent;
pub mod container;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod lm;
pub mod pipeline;
pub mod sae;
pub mod steering;
pub mod tensor;
pub mod vad;

pub use error::{Error, Result};
pub use features::{checksum_hex, AxisFeatures, LatentFeatureSet};
pub use lm::{DecodeParams, HiddenState, ToyLm, ToyLmConfig};
pub use sae::{SaeModel, SaeTrainConfig};
pub use steering::{ApplyDuring, SignMode, SteeringConfig};
pub use vad::{DeltaCalibration, EmotionLabel, LabelTable, VadAxis, VadVector};
