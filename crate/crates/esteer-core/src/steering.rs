//! Continuous emotion steering in hidden space.
//!
//! A target VAD vector is mapped to per-axis latent offsets δ_i; each
//! axis's unit latent direction û_i is pushed through the decoder to get a
//! hidden-space direction d_i = f_dec(z + δ·û_i) − f_dec(z); d_i is then
//! rescaled per token so its norm is a |δ_i|/δ_max fraction of that
//! token's hidden-state norm, and the aligned directions are summed and
//! added to the block-k output with global strength α.
//!
//! All direction math runs in f64; the hidden state is only converted back
//! to f32 at the very end.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::LatentFeatureSet;
use crate::lm::{DecodeParams, HiddenState, Patch, ToyLm};
use crate::sae::SaeModel;
use crate::vad::{map_to_deltas, DeltaCalibration, VadAxis, VadVector};

/// Which forward passes the steering patch covers.
///
/// Decode-only is the default: patching prompt rows perturbs the model's
/// reading of the prompt itself, which measurably weakens and can even
/// invert the steering response. Leaving the prompt intact and nudging
/// only the rows the model generates gives a clean, monotone effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApplyDuring {
    /// Steer prompt positions and generated positions alike.
    Both,
    /// Leave the prompt untouched; steer only generated positions.
    #[default]
    DecodeOnly,
}

/// How the sign of δ_i enters the aligned direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignMode {
    /// Direction from a positive probe, magnitude *and sign* carried by
    /// δ_i/δ_max, so negative targets steer opposite to positive ones.
    #[default]
    Signed,
    /// The scale-alignment formula taken at face value. Normalizing a
    /// direction that was itself computed with a signed probe cancels the
    /// sign of δ_i, so −δ and +δ coincide; kept for comparison runs.
    Literal,
}

/// Everything that determines one steering intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteeringConfig {
    /// 1-based block whose output is steered; must match the SAE.
    pub block: usize,
    /// Global strength α.
    pub alpha: f64,
    pub calib: DeltaCalibration,
    pub target: VadVector,
    pub apply_during: ApplyDuring,
    pub sign_mode: SignMode,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        SteeringConfig {
            block: 3,
            alpha: 1.0,
            calib: DeltaCalibration {
                delta_max: [1.0, 1.0, 1.0],
            },
            target: VadVector::NEUTRAL,
            apply_during: ApplyDuring::default(),
            sign_mode: SignMode::default(),
        }
    }
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "alpha must be finite, got {}",
                self.alpha
            )));
        }
        DeltaCalibration::new(self.calib.delta_max)?;
        Ok(())
    }
}

/// Decode a latent vector entirely in f64.
fn decode_f64(sae: &SaeModel, z: &[f64]) -> Vec<f64> {
    let d = sae.d_model;
    let latent = sae.latent_dim;
    let mut out = vec![0.0f64; d];
    for (i, o) in out.iter_mut().enumerate() {
        let row = &sae.decoder_weights[i * latent..(i + 1) * latent];
        let mut acc = 0.0f64;
        for (w, zj) in row.iter().zip(z) {
            acc += *w as f64 * zj;
        }
        *o = acc + sae.decoder_bias[i] as f64;
    }
    out
}

/// Hidden-space direction of one axis: f_dec(z + δ_probe·û) − f_dec(z).
///
/// The decoder is affine, so the result equals δ_probe·(W_dec·û) for any
/// base point z; the dual-decode form is kept and the identity is pinned
/// by tests instead.
pub fn compute_direction(
    sae: &SaeModel,
    z: &[f32],
    u_hat: &[f64],
    delta_probe: f64,
) -> Result<Vec<f64>> {
    if z.len() != sae.latent_dim || u_hat.len() != sae.latent_dim {
        return Err(Error::DimensionMismatch {
            expected: sae.latent_dim,
            got: if z.len() != sae.latent_dim {
                z.len()
            } else {
                u_hat.len()
            },
        });
    }
    if !(delta_probe > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "delta_probe must be positive, got {delta_probe}"
        )));
    }
    let base: Vec<f64> = z.iter().map(|&v| v as f64).collect();
    let shifted: Vec<f64> = base
        .iter()
        .zip(u_hat)
        .map(|(zv, uv)| zv + delta_probe * uv)
        .collect();
    let dec_shifted = decode_f64(sae, &shifted);
    let dec_base = decode_f64(sae, &base);
    Ok(dec_shifted
        .iter()
        .zip(&dec_base)
        .map(|(a, b)| a - b)
        .collect())
}

fn norm_f64(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn row_norm_f64(h: &HiddenState, t: usize) -> f64 {
    h.row(t).iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Per-token scale alignment: d̃_i(t) = (d_i/‖d_i‖)·‖h_k(t)‖·(δ_i/δ_max).
///
/// Returns a (rows × d) matrix flattened row-major. δ_i = 0 yields exact
/// zeros; under [`SignMode::Literal`] the sign of δ_i cancels and only
/// |δ_i| matters.
pub fn align_direction(
    d_i: &[f64],
    h: &HiddenState,
    delta: f64,
    delta_max: f64,
    sign_mode: SignMode,
    axis: VadAxis,
) -> Result<Vec<f64>> {
    if d_i.len() != h.d {
        return Err(Error::DimensionMismatch {
            expected: h.d,
            got: d_i.len(),
        });
    }
    if !(delta_max > 0.0) {
        return Err(Error::InvalidDeltaMax {
            axis: axis.name(),
            value: delta_max,
        });
    }
    let mut out = vec![0.0f64; h.rows * h.d];
    if delta == 0.0 {
        return Ok(out);
    }
    let norm = norm_f64(d_i);
    if norm == 0.0 {
        return Err(Error::ZeroDirection { axis: axis.name() });
    }
    let signed_ratio = match sign_mode {
        SignMode::Signed => delta / delta_max,
        SignMode::Literal => delta.abs() / delta_max,
    };
    for t in 0..h.rows {
        let scale = signed_ratio * row_norm_f64(h, t) / norm;
        for j in 0..h.d {
            out[t * h.d + j] = scale * d_i[j];
        }
    }
    Ok(out)
}

/// Add α·Σ_i d̃_i to every row from `start_row` on; rows before it are
/// copied bit-for-bit. The α = 0 / all-δ = 0 cases return an exact copy.
fn steer_hidden_from(
    h: &HiddenState,
    cfg: &SteeringConfig,
    features: &LatentFeatureSet,
    sae: &SaeModel,
    start_row: usize,
) -> Result<HiddenState> {
    cfg.validate()?;
    if cfg.block != sae.attached_block {
        return Err(Error::InvalidConfig(format!(
            "steering block {} but SAE attached to block {}",
            cfg.block, sae.attached_block
        )));
    }
    if features.latent_dim != sae.latent_dim {
        return Err(Error::DimensionMismatch {
            expected: sae.latent_dim,
            got: features.latent_dim,
        });
    }
    if h.d != sae.d_model {
        return Err(Error::DimensionMismatch {
            expected: sae.d_model,
            got: h.d,
        });
    }
    let deltas = map_to_deltas(&cfg.target, &cfg.calib);
    if cfg.alpha == 0.0 || deltas.iter().all(|&d| d == 0.0) || start_row >= h.rows {
        return Ok(h.clone());
    }

    // Latent base point: the most recent token's encoding. The decoder is
    // affine, so any base gives the same direction; this one mirrors the
    // formula as written.
    let z = sae.encode(h.row(h.rows - 1))?;

    let mut total = vec![0.0f64; h.rows * h.d];
    for axis in VadAxis::ALL {
        let i = axis.index();
        if deltas[i] == 0.0 {
            continue;
        }
        let u_hat = features.unit_direction(axis)?;
        let d_i = compute_direction(sae, &z, &u_hat, cfg.calib.delta_max[i])?;
        let aligned = align_direction(
            &d_i,
            h,
            deltas[i],
            cfg.calib.delta_max[i],
            cfg.sign_mode,
            axis,
        )?;
        for (acc, v) in total.iter_mut().zip(&aligned) {
            *acc += v;
        }
    }

    let mut out = h.clone();
    for t in start_row..h.rows {
        for j in 0..h.d {
            let idx = t * h.d + j;
            out.data[idx] = (h.data[idx] as f64 + cfg.alpha * total[idx]) as f32;
        }
    }
    Ok(out)
}

/// Steer every token of a tapped hidden state (Eq.-style full coverage).
pub fn steer_hidden(
    h: &HiddenState,
    cfg: &SteeringConfig,
    features: &LatentFeatureSet,
    sae: &SaeModel,
) -> Result<HiddenState> {
    steer_hidden_from(h, cfg, features, sae, 0)
}

/// Build a generation patch for the configured block. `prompt_len` is
/// only consulted in decode-only mode, where prompt rows pass through
/// untouched.
pub fn make_patch(
    sae: Arc<SaeModel>,
    features: Arc<LatentFeatureSet>,
    cfg: SteeringConfig,
    prompt_len: usize,
) -> Patch {
    let block = cfg.block;
    Patch::new(
        block,
        Arc::new(move |h: &HiddenState| {
            let start = match cfg.apply_during {
                ApplyDuring::Both => 0,
                ApplyDuring::DecodeOnly => prompt_len,
            };
            steer_hidden_from(h, &cfg, &features, &sae, start)
        }),
    )
}

/// Greedy/sampled generation with the steering patch installed. A neutral
/// target (or α = 0) is token-identical to unsteered generation.
pub fn steered_generate(
    lm: &ToyLm,
    sae: &SaeModel,
    features: &LatentFeatureSet,
    prompt: &[u32],
    cfg: &SteeringConfig,
    decode: &DecodeParams,
) -> Result<Vec<u32>> {
    cfg.validate()?;
    if cfg.block == 0 || cfg.block > lm.config.n_blocks {
        return Err(Error::BlockOutOfRange {
            block: cfg.block,
            n_blocks: lm.config.n_blocks,
        });
    }
    let patch = make_patch(
        Arc::new(sae.clone()),
        Arc::new(features.clone()),
        cfg.clone(),
        prompt.len(),
    );
    lm.generate(prompt, decode, Some(&patch))
}
