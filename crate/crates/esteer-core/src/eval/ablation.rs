//! Latent-validity ablation: replace extracted feature neurons with random
//! ones (wholly or by half) and re-run the sweep. If the extracted neurons
//! genuinely carry the axis, random stand-ins should steer far less.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{AxisFeatures, LatentFeatureSet};
use crate::tensor::seeded_rng;

/// Which neurons drive steering in an ablation arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// Extracted features, untouched.
    Original,
    /// Same-cardinality random neurons, disjoint from the originals,
    /// uniform weights.
    Random,
    /// Half of the originals kept (uniformly chosen, with their weights);
    /// the rest replaced by fresh random neurons at the median original
    /// weight.
    HalfRandom,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] =
        [AblationMode::Original, AblationMode::Random, AblationMode::HalfRandom];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Original => "original",
            AblationMode::Random => "random",
            AblationMode::HalfRandom => "half-random",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(AblationMode::Original),
            "random" => Ok(AblationMode::Random),
            "half-random" => Ok(AblationMode::HalfRandom),
            other => Err(Error::InvalidConfig(format!(
                "unknown ablation mode {other:?} (expected original | random | half-random)"
            ))),
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn normalized(mut weights: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

fn ablate_axis(
    orig: &AxisFeatures,
    mode: AblationMode,
    latent_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AxisFeatures> {
    let n = orig.neuron_indices.len();
    if latent_dim <= 2 * n {
        return Err(Error::InsufficientLatents {
            latent_dim,
            min: 2 * n + 1,
        });
    }
    let original: HashSet<usize> = orig.neuron_indices.iter().copied().collect();
    let complement: Vec<usize> = (0..latent_dim).filter(|j| !original.contains(j)).collect();
    let (mut indices, weights) = match mode {
        AblationMode::Original => unreachable!("original handled by caller"),
        AblationMode::Random => {
            let picks = sample(rng, complement.len(), n);
            let indices: Vec<usize> = picks.iter().map(|p| complement[p]).collect();
            (indices, vec![1.0 / n as f64; n])
        }
        AblationMode::HalfRandom => {
            let keep_n = n / 2;
            let mut kept: Vec<usize> = sample(rng, n, keep_n).iter().collect();
            kept.sort_unstable();
            let fill_weight = median(&orig.weights);
            let mut pairs: Vec<(usize, f64)> = kept
                .iter()
                .map(|&p| (orig.neuron_indices[p], orig.weights[p]))
                .collect();
            let fresh = sample(rng, complement.len(), n - keep_n);
            pairs.extend(fresh.iter().map(|p| (complement[p], fill_weight)));
            pairs.sort_unstable_by_key(|&(j, _)| j);
            let (indices, weights): (Vec<usize>, Vec<f64>) = pairs.into_iter().unzip();
            (indices, weights)
        }
    };
    indices.sort_unstable();
    Ok(AxisFeatures {
        axis: orig.axis,
        neuron_indices: indices,
        weights: normalized(weights)?,
        provenance: orig.provenance.clone(),
    })
}

/// Build the ablation arm for `mode`. `Original` returns the input
/// bit-identical; random modes draw one independent stream per axis, so a
/// given (seed, mode) pair always yields the same feature set.
pub fn ablate_features(
    features: &LatentFeatureSet,
    mode: AblationMode,
    seed: u64,
) -> Result<LatentFeatureSet> {
    if mode == AblationMode::Original {
        return Ok(features.clone());
    }
    let mut out = features.clone();
    for (i, slot) in [&mut out.valence, &mut out.arousal, &mut out.dominance]
        .into_iter()
        .enumerate()
    {
        let mut rng = seeded_rng(seed ^ ((i as u64 + 1) << 32));
        *slot = ablate_axis(slot, mode, features.latent_dim, &mut rng)?;
    }
    out.validate()?;
    Ok(out)
}
