//! Sparse autoencoder over block-k hidden states.
//!
//! Encoding is rectified-linear (non-negative feature strengths), decoding
//! is a single affine layer whose columns form a unit-norm dictionary:
//!
//! ```text
//! z  = relu(W_enc · (h − b_dec) + b_enc)
//! h′ = W_dec · z + b_dec
//! ```
//!
//! Training minimizes mean squared reconstruction error plus an L1 penalty
//! on z, renormalizes every decoder column to unit length after each step,
//! and re-initializes neurons that stay silent too long toward the samples
//! the model currently reconstructs worst.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::lm::HiddenState;
use crate::tensor::{self, seeded_rng};
use rand::Rng;

// ── Activation sets ────────────────────────────────────────────────────────

/// A bag of d_model rows tapped from one block, the SAE's training food.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    pub d: usize,
    /// 1-based block the rows were tapped from.
    pub block: usize,
    pub rows: usize,
    /// Row-major (rows × d).
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ActivationMeta {
    d: usize,
    block: usize,
    rows: usize,
}

pub const ACTIVATIONS_KIND: &str = "activations";

impl ActivationSet {
    pub fn new(d: usize, block: usize) -> Self {
        ActivationSet {
            d,
            block,
            rows: 0,
            data: Vec::new(),
        }
    }

    /// Append every position of a tapped hidden state.
    pub fn push_hidden(&mut self, h: &HiddenState) -> Result<()> {
        if h.d != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: h.d,
            });
        }
        self.data.extend_from_slice(&h.data);
        self.rows += h.rows;
        Ok(())
    }

    /// Append a single row.
    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Per-dimension mean, accumulated in f64.
    pub fn mean(&self) -> Vec<f32> {
        let mut m = vec![0.0f64; self.d];
        for i in 0..self.rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                m[j] += v as f64;
            }
        }
        m.iter().map(|&s| (s / self.rows as f64) as f32).collect()
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = ActivationMeta {
            d: self.d,
            block: self.block,
            rows: self.rows,
        };
        let mut c = Container::new(ACTIVATIONS_KIND, &meta)?;
        c.push_tensor("rows", vec![self.rows, self.d], self.data.clone())?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(ACTIVATIONS_KIND)?;
        let meta: ActivationMeta = c.config_as()?;
        let t = c.tensor("rows")?;
        if t.data.len() != meta.rows * meta.d {
            return Err(Error::Container("activation tensor size mismatch".into()));
        }
        Ok(ActivationSet {
            d: meta.d,
            block: meta.block,
            rows: meta.rows,
            data: t.data.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ActivationSet::from_container(&Container::load(path)?)
    }
}

// ── Model ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    /// (latent_dim × d_model), row-major.
    pub encoder_weights: Vec<f32>,
    /// (latent_dim).
    pub encoder_bias: Vec<f32>,
    /// (d_model × latent_dim), row-major; columns are dictionary atoms.
    pub decoder_weights: Vec<f32>,
    /// (d_model).
    pub decoder_bias: Vec<f32>,
    pub latent_dim: usize,
    pub d_model: usize,
    /// 1-based block this SAE was trained against.
    pub attached_block: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SaeMeta {
    latent_dim: usize,
    d_model: usize,
    attached_block: usize,
}

pub const SAE_KIND: &str = "sae";

impl SaeModel {
    /// Non-negative latent encoding of one hidden-state row.
    pub fn encode(&self, h: &[f32]) -> Result<Vec<f32>> {
        if h.len() != self.d_model {
            return Err(Error::DimensionMismatch {
                expected: self.d_model,
                got: h.len(),
            });
        }
        let xc: Vec<f32> = h
            .iter()
            .zip(&self.decoder_bias)
            .map(|(&x, &b)| x - b)
            .collect();
        let mut z = vec![0.0f32; self.latent_dim];
        tensor::matmul_bt(&xc, &self.encoder_weights, &mut z, 1, self.d_model, self.latent_dim);
        for (j, v) in z.iter_mut().enumerate() {
            *v = (*v + self.encoder_bias[j]).max(0.0);
        }
        Ok(z)
    }

    /// Affine decode of a latent vector.
    pub fn decode(&self, z: &[f32]) -> Result<Vec<f32>> {
        if z.len() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim,
                got: z.len(),
            });
        }
        let mut h = vec![0.0f32; self.d_model];
        tensor::matmul_bt(z, &self.decoder_weights, &mut h, 1, self.latent_dim, self.d_model);
        for (v, &b) in h.iter_mut().zip(&self.decoder_bias) {
            *v += b;
        }
        Ok(h)
    }

    /// One decoder column (dictionary atom).
    pub fn decoder_column(&self, j: usize) -> Vec<f32> {
        (0..self.d_model)
            .map(|i| self.decoder_weights[i * self.latent_dim + j])
            .collect()
    }

    /// Euclidean norm of each decoder column.
    pub fn column_norms(&self) -> Vec<f32> {
        let mut norms = vec![0.0f64; self.latent_dim];
        for i in 0..self.d_model {
            let row = &self.decoder_weights[i * self.latent_dim..(i + 1) * self.latent_dim];
            for (j, &w) in row.iter().enumerate() {
                norms[j] += (w as f64) * (w as f64);
            }
        }
        norms.iter().map(|&s| s.sqrt() as f32).collect()
    }

    fn renormalize_columns(&mut self) {
        let norms = self.column_norms();
        for i in 0..self.d_model {
            let row = &mut self.decoder_weights[i * self.latent_dim..(i + 1) * self.latent_dim];
            for (j, w) in row.iter_mut().enumerate() {
                if norms[j] > 0.0 {
                    *w /= norms[j];
                }
            }
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = SaeMeta {
            latent_dim: self.latent_dim,
            d_model: self.d_model,
            attached_block: self.attached_block,
        };
        let mut c = Container::new(SAE_KIND, &meta)?;
        c.push_tensor(
            "enc_w",
            vec![self.latent_dim, self.d_model],
            self.encoder_weights.clone(),
        )?;
        c.push_tensor("enc_b", vec![self.latent_dim], self.encoder_bias.clone())?;
        c.push_tensor(
            "dec_w",
            vec![self.d_model, self.latent_dim],
            self.decoder_weights.clone(),
        )?;
        c.push_tensor("dec_b", vec![self.d_model], self.decoder_bias.clone())?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(SAE_KIND)?;
        let meta: SaeMeta = c.config_as()?;
        let model = SaeModel {
            encoder_weights: c.tensor("enc_w")?.data.clone(),
            encoder_bias: c.tensor("enc_b")?.data.clone(),
            decoder_weights: c.tensor("dec_w")?.data.clone(),
            decoder_bias: c.tensor("dec_b")?.data.clone(),
            latent_dim: meta.latent_dim,
            d_model: meta.d_model,
            attached_block: meta.attached_block,
        };
        if model.encoder_weights.len() != meta.latent_dim * meta.d_model
            || model.decoder_weights.len() != meta.d_model * meta.latent_dim
            || model.encoder_bias.len() != meta.latent_dim
            || model.decoder_bias.len() != meta.d_model
        {
            return Err(Error::Container("SAE tensor shape mismatch".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        SaeModel::from_container(&Container::load(path)?)
    }
}

// ── Training ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaeTrainConfig {
    pub l1_coefficient: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Samples a neuron may stay silent for before being resampled.
    pub dead_neuron_patience: usize,
    pub seed: u64,
    /// latent_dim = latent_factor × d_model.
    pub latent_factor: usize,
}

impl Default for SaeTrainConfig {
    fn default() -> Self {
        SaeTrainConfig {
            // Calibrated on block-3 activations of the default toy LM:
            // keeps mean L0 well under a tenth of the dictionary while
            // explained variance stays above 0.95.
            l1_coefficient: 0.2,
            steps: 1500,
            batch_size: 128,
            learning_rate: 1e-3,
            dead_neuron_patience: 2048,
            seed: 13,
            latent_factor: 8,
        }
    }
}

impl SaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l1_coefficient <= 0.0
            || self.steps == 0
            || self.batch_size == 0
            || self.learning_rate <= 0.0
            || self.dead_neuron_patience == 0
            || self.latent_factor == 0
        {
            return Err(Error::InvalidConfig(
                "SAE training config values must all be positive".into(),
            ));
        }
        if self.dead_neuron_patience < self.batch_size {
            return Err(Error::InvalidConfig(format!(
                "dead_neuron_patience {} < batch_size {}",
                self.dead_neuron_patience, self.batch_size
            )));
        }
        Ok(())
    }
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct AdamVec {
    m: Vec<f32>,
    v: Vec<f32>,
}

impl AdamVec {
    fn new(n: usize) -> Self {
        AdamVec {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, p: &mut [f32], g: &[f32], lr: f64, t: u64) {
        let bc1 = 1.0 - ADAM_B1.powi(t as i32);
        let bc2 = 1.0 - ADAM_B2.powi(t as i32);
        for i in 0..p.len() {
            let grad = g[i] as f64;
            let m = ADAM_B1 * self.m[i] as f64 + (1.0 - ADAM_B1) * grad;
            let v = ADAM_B2 * self.v[i] as f64 + (1.0 - ADAM_B2) * grad * grad;
            self.m[i] = m as f32;
            self.v[i] = v as f32;
            p[i] = (p[i] as f64 - lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS)) as f32;
        }
    }

    fn reset_index(&mut self, i: usize) {
        self.m[i] = 0.0;
        self.v[i] = 0.0;
    }
}

/// Summary numbers from one training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaeTrainStats {
    pub first_loss: f64,
    pub final_loss: f64,
    /// Number of dead-neuron re-initializations performed.
    pub resampled: usize,
}

/// Train an SAE on tapped activations. Single-threaded and bit-reproducible
/// for a fixed seed.
pub fn train_sae(acts: &ActivationSet, cfg: &SaeTrainConfig) -> Result<SaeModel> {
    train_sae_with_stats(acts, cfg).map(|(m, _)| m)
}

/// As [`train_sae`], also returning loss bookends and resample counts.
pub fn train_sae_with_stats(
    acts: &ActivationSet,
    cfg: &SaeTrainConfig,
) -> Result<(SaeModel, SaeTrainStats)> {
    cfg.validate()?;
    let d = acts.d;
    let latent = cfg.latent_factor * d;
    let min_rows = 10 * latent;
    if acts.rows < min_rows {
        return Err(Error::InsufficientData {
            rows: acts.rows,
            min: min_rows,
        });
    }

    let mut rng = seeded_rng(cfg.seed);
    let mut model = SaeModel {
        encoder_weights: vec![0.0; latent * d],
        encoder_bias: vec![0.0; latent],
        decoder_weights: vec![0.0; d * latent],
        decoder_bias: acts.mean(),
        latent_dim: latent,
        d_model: d,
        attached_block: acts.block,
    };
    // Random unit dictionary columns; encoder starts as the transpose.
    for j in 0..latent {
        let col = tensor::normal_vec(&mut rng, d, 1.0);
        let n = tensor::norm2(&col).max(1e-12);
        for i in 0..d {
            model.decoder_weights[i * latent + j] = col[i] / n;
            model.encoder_weights[j * d + i] = col[i] / n;
        }
    }

    let b = cfg.batch_size;
    let mut adam_enc_w = AdamVec::new(latent * d);
    let mut adam_enc_b = AdamVec::new(latent);
    let mut adam_dec_w = AdamVec::new(d * latent);
    let mut adam_dec_b = AdamVec::new(d);
    let mut silent_for = vec![0usize; latent]; // samples since last firing

    // Batch workspaces.
    let mut x = vec![0.0f32; b * d];
    let mut xc = vec![0.0f32; b * d];
    let mut z = vec![0.0f32; b * latent];
    let mut xhat = vec![0.0f32; b * d];
    let mut dxhat = vec![0.0f32; b * d];
    let mut dz = vec![0.0f32; b * latent];
    let mut dxc = vec![0.0f32; b * d];
    let mut g_enc_w = vec![0.0f32; latent * d];
    let mut g_enc_b = vec![0.0f32; latent];
    let mut g_dec_w = vec![0.0f32; d * latent];
    let mut g_dec_b = vec![0.0f32; d];

    let mut first_loss = None;
    let mut last_loss = 0.0f64;
    let mut resampled = 0usize;
    for step in 0..cfg.steps {
        // Sample a batch.
        let idx: Vec<usize> = (0..b).map(|_| rng.gen_range(0..acts.rows)).collect();
        for (bi, &i) in idx.iter().enumerate() {
            x[bi * d..(bi + 1) * d].copy_from_slice(acts.row(i));
        }
        // Forward.
        for bi in 0..b {
            for i in 0..d {
                xc[bi * d + i] = x[bi * d + i] - model.decoder_bias[i];
            }
        }
        tensor::matmul_bt(&xc, &model.encoder_weights, &mut z, b, d, latent);
        for bi in 0..b {
            for j in 0..latent {
                let idx = bi * latent + j;
                z[idx] = (z[idx] + model.encoder_bias[j]).max(0.0);
            }
        }
        tensor::matmul_bt(&z, &model.decoder_weights, &mut xhat, b, latent, d);
        for bi in 0..b {
            for i in 0..d {
                xhat[bi * d + i] += model.decoder_bias[i];
            }
        }

        // Loss: per-sample squared error and L1, averaged over the batch.
        let mut mse = 0.0f64;
        for i in 0..b * d {
            let r = (xhat[i] - x[i]) as f64;
            mse += r * r;
            dxhat[i] = (2.0 * r / b as f64) as f32;
        }
        mse /= b as f64;
        let l1: f64 = z.iter().map(|&v| v as f64).sum::<f64>() / b as f64;
        let loss = mse + cfg.l1_coefficient * l1;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        first_loss.get_or_insert(loss);
        last_loss = loss;

        // Backward.
        g_enc_w.fill(0.0);
        g_enc_b.fill(0.0);
        g_dec_w.fill(0.0);
        g_dec_b.fill(0.0);
        tensor::matmul_at_acc(&dxhat, &z, &mut g_dec_w, b, d, latent);
        for bi in 0..b {
            for i in 0..d {
                g_dec_b[i] += dxhat[bi * d + i];
            }
        }
        tensor::matmul(&dxhat, &model.decoder_weights, &mut dz, b, d, latent);
        let l1_g = (cfg.l1_coefficient / b as f64) as f32;
        for i in 0..b * latent {
            dz[i] = if z[i] > 0.0 { dz[i] + l1_g } else { 0.0 };
        }
        tensor::matmul_at_acc(&dz, &xc, &mut g_enc_w, b, latent, d);
        for bi in 0..b {
            for j in 0..latent {
                g_enc_b[j] += dz[bi * latent + j];
            }
        }
        tensor::matmul(&dz, &model.encoder_weights, &mut dxc, b, latent, d);
        for bi in 0..b {
            for i in 0..d {
                g_dec_b[i] -= dxc[bi * d + i];
            }
        }

        let t = step as u64 + 1;
        adam_enc_w.step(&mut model.encoder_weights, &g_enc_w, cfg.learning_rate, t);
        adam_enc_b.step(&mut model.encoder_bias, &g_enc_b, cfg.learning_rate, t);
        adam_dec_w.step(&mut model.decoder_weights, &g_dec_w, cfg.learning_rate, t);
        adam_dec_b.step(&mut model.decoder_bias, &g_dec_b, cfg.learning_rate, t);
        model.renormalize_columns();

        // Dead-neuron accounting and resampling.
        let mut dead: Vec<usize> = Vec::new();
        for j in 0..latent {
            let fired = (0..b).any(|bi| z[bi * latent + j] > 0.0);
            if fired {
                silent_for[j] = 0;
            } else {
                silent_for[j] += b;
                if silent_for[j] >= cfg.dead_neuron_patience {
                    dead.push(j);
                }
            }
        }
        if !dead.is_empty() {
            // Rank batch samples by current reconstruction error, worst
            // first; ties break to the lower index.
            let mut errs: Vec<(usize, f64)> = (0..b)
                .map(|bi| {
                    let mut e = 0.0f64;
                    for i in 0..d {
                        let r = (xhat[bi * d + i] - x[bi * d + i]) as f64;
                        e += r * r;
                    }
                    (bi, e)
                })
                .collect();
            errs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for (rank, &j) in dead.iter().enumerate() {
                let bi = errs[rank % b].0;
                let mut dir: Vec<f32> = (0..d)
                    .map(|i| x[bi * d + i] - model.decoder_bias[i])
                    .collect();
                let n = tensor::norm2(&dir);
                if n < 1e-12 {
                    continue;
                }
                dir.iter_mut().for_each(|v| *v /= n);
                for i in 0..d {
                    model.decoder_weights[i * latent + j] = dir[i];
                    model.encoder_weights[j * d + i] = 0.2 * dir[i];
                    adam_dec_w.reset_index(i * latent + j);
                    adam_enc_w.reset_index(j * d + i);
                }
                model.encoder_bias[j] = 0.0;
                adam_enc_b.reset_index(j);
                silent_for[j] = 0;
                resampled += 1;
            }
        }
    }
    let stats = SaeTrainStats {
        first_loss: first_loss.unwrap_or(0.0),
        final_loss: last_loss,
        resampled,
    };
    Ok((model, stats))
}

/// 1 − MSE / mean squared deviation from the mean, clamped to [0, 1].
pub fn explained_variance(model: &SaeModel, acts: &ActivationSet) -> Result<f64> {
    if acts.rows == 0 {
        return Err(Error::EmptyInput("activation set"));
    }
    let mean = acts.mean();
    let mut var = 0.0f64;
    let mut mse = 0.0f64;
    for i in 0..acts.rows {
        let row = acts.row(i);
        let xhat = model.decode(&model.encode(row)?)?;
        for j in 0..acts.d {
            let c = (row[j] - mean[j]) as f64;
            var += c * c;
            let r = (xhat[j] - row[j]) as f64;
            mse += r * r;
        }
    }
    if var <= f64::EPSILON * acts.rows as f64 {
        return Err(Error::ZeroVariance);
    }
    Ok((1.0 - mse / var).clamp(0.0, 1.0))
}

/// Mean L0 (count of strictly positive latents) over an activation set.
pub fn mean_l0(model: &SaeModel, acts: &ActivationSet) -> Result<f64> {
    if acts.rows == 0 {
        return Err(Error::EmptyInput("activation set"));
    }
    let mut total = 0usize;
    for i in 0..acts.rows {
        let z = model.encode(acts.row(i))?;
        total += z.iter().filter(|&&v| v > 0.0).count();
    }
    Ok(total as f64 / acts.rows as f64)
}
