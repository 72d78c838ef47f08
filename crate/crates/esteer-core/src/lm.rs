//! Desk-scale decoder-only transformer with a hidden-state tap.
//!
//! Pre-norm blocks (LN → causal multi-head attention → residual, LN → ReLU
//! MLP → residual), learned positional embeddings, byte-level vocabulary,
//! untied unembedding head. Forward, backward, and the Adam step are written
//! out by hand; reductions that feed statistics (layer-norm moments, softmax,
//! loss) accumulate in f64 so finite-difference gradient checks are stable.
//!
//! The residual stream after block k (1-based) can be tapped for analysis or
//! replaced by a patch function on every forward pass, which is how steering
//! is injected during generation. Generation recomputes the full prefix each
//! step — no key-value cache — so a patch always sees and edits every
//! position of the current pass.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::corpus::CorpusLine;
use crate::error::{Error, Result};
use crate::tensor::{self, seeded_rng};

// ── Configuration and basic types ──────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyLmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl Default for ToyLmConfig {
    fn default() -> Self {
        ToyLmConfig {
            vocab_size: crate::corpus::VOCAB_SIZE,
            d_model: 64,
            n_blocks: 4,
            n_heads: 4,
            max_seq_len: 64,
            seed: 11,
        }
    }
}

impl ToyLmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.n_blocks == 0 || self.n_heads == 0 {
            return Err(Error::InvalidConfig("all counts must be >= 1".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::InvalidConfig("max_seq_len must be >= 2".into()));
        }
        Ok(())
    }
}

/// Residual-stream values after one block: row t is the d_model-vector for
/// token position t. `block_index` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub rows: usize,
    pub d: usize,
    /// Row-major (rows × d).
    pub data: Vec<f32>,
    pub block_index: usize,
}

impl HiddenState {
    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.d..(t + 1) * self.d]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f32] {
        &mut self.data[t * self.d..(t + 1) * self.d]
    }

    pub fn same_shape(&self, other: &HiddenState) -> bool {
        self.rows == other.rows && self.d == other.d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub max_new_tokens: usize,
    pub sampling: bool,
    /// Used only when sampling is on.
    pub temperature: f32,
    pub seed: u64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            max_new_tokens: 24,
            sampling: false,
            temperature: 1.0,
            seed: 0,
        }
    }
}

/// Hidden-state replacement applied after a block. Must be side-effect-free
/// with respect to the model and preserve shape.
pub type PatchFn = dyn Fn(&HiddenState) -> Result<HiddenState> + Send + Sync;

/// A patch function bound to a 1-based block index.
#[derive(Clone)]
pub struct Patch {
    pub block: usize,
    pub f: Arc<PatchFn>,
}

impl Patch {
    pub fn new(block: usize, f: Arc<PatchFn>) -> Self {
        Patch { block, f }
    }

    /// The identity patch, useful for exercising the interception path.
    pub fn identity(block: usize) -> Self {
        Patch {
            block,
            f: Arc::new(|h: &HiddenState| Ok(h.clone())),
        }
    }
}

// ── Parameters ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
struct BlockParams {
    ln1_g: Vec<f32>,
    ln1_b: Vec<f32>,
    wq: Vec<f32>, // (d × d), row-major, out-major
    wk: Vec<f32>,
    wv: Vec<f32>,
    wo: Vec<f32>,
    ln2_g: Vec<f32>,
    ln2_b: Vec<f32>,
    w1: Vec<f32>, // (4d × d)
    b1: Vec<f32>,
    w2: Vec<f32>, // (d × 4d)
    b2: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
struct Params {
    emb: Vec<f32>, // (vocab × d)
    pos: Vec<f32>, // (max_seq × d)
    blocks: Vec<BlockParams>,
    lnf_g: Vec<f32>,
    lnf_b: Vec<f32>,
    head: Vec<f32>, // (vocab × d)
}

impl Params {
    fn zeros(cfg: &ToyLmConfig) -> Self {
        let d = cfg.d_model;
        let block = || BlockParams {
            ln1_g: vec![0.0; d],
            ln1_b: vec![0.0; d],
            wq: vec![0.0; d * d],
            wk: vec![0.0; d * d],
            wv: vec![0.0; d * d],
            wo: vec![0.0; d * d],
            ln2_g: vec![0.0; d],
            ln2_b: vec![0.0; d],
            w1: vec![0.0; 4 * d * d],
            b1: vec![0.0; 4 * d],
            w2: vec![0.0; d * 4 * d],
            b2: vec![0.0; d],
        };
        Params {
            emb: vec![0.0; cfg.vocab_size * d],
            pos: vec![0.0; cfg.max_seq_len * d],
            blocks: (0..cfg.n_blocks).map(|_| block()).collect(),
            lnf_g: vec![0.0; d],
            lnf_b: vec![0.0; d],
            head: vec![0.0; cfg.vocab_size * d],
        }
    }

    fn init(cfg: &ToyLmConfig) -> Self {
        let mut p = Params::zeros(cfg);
        let mut rng = seeded_rng(cfg.seed);
        let mut fill = |v: &mut Vec<f32>, std: f64| {
            for x in v.iter_mut() {
                *x = tensor::next_normal(&mut rng) * std as f32;
            }
        };
        // Residual-branch output projections get a 1/sqrt(2·n_blocks)
        // shrink so the residual stream starts near unit scale.
        let base = 0.02;
        let resid = base / ((2 * cfg.n_blocks) as f64).sqrt();
        fill(&mut p.emb, base);
        fill(&mut p.pos, base);
        for b in &mut p.blocks {
            fill(&mut b.wq, base);
            fill(&mut b.wk, base);
            fill(&mut b.wv, base);
            fill(&mut b.wo, resid);
            fill(&mut b.w1, base);
            fill(&mut b.w2, resid);
            b.ln1_g.iter_mut().for_each(|x| *x = 1.0);
            b.ln2_g.iter_mut().for_each(|x| *x = 1.0);
        }
        fill(&mut p.head, base);
        p.lnf_g.iter_mut().for_each(|x| *x = 1.0);
        p
    }

    /// All tensors in a fixed, documented order (checkpoint + optimizer
    /// iterate over this same order).
    fn tensors(&self) -> Vec<(String, &Vec<f32>)> {
        let mut out: Vec<(String, &Vec<f32>)> = vec![
            ("emb".into(), &self.emb),
            ("pos".into(), &self.pos),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("b{i}.ln1_g"), &b.ln1_g));
            out.push((format!("b{i}.ln1_b"), &b.ln1_b));
            out.push((format!("b{i}.wq"), &b.wq));
            out.push((format!("b{i}.wk"), &b.wk));
            out.push((format!("b{i}.wv"), &b.wv));
            out.push((format!("b{i}.wo"), &b.wo));
            out.push((format!("b{i}.ln2_g"), &b.ln2_g));
            out.push((format!("b{i}.ln2_b"), &b.ln2_b));
            out.push((format!("b{i}.w1"), &b.w1));
            out.push((format!("b{i}.b1"), &b.b1));
            out.push((format!("b{i}.w2"), &b.w2));
            out.push((format!("b{i}.b2"), &b.b2));
        }
        out.push(("lnf_g".into(), &self.lnf_g));
        out.push(("lnf_b".into(), &self.lnf_b));
        out.push(("head".into(), &self.head));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out: Vec<&mut Vec<f32>> = vec![&mut self.emb, &mut self.pos];
        for b in &mut self.blocks {
            out.push(&mut b.ln1_g);
            out.push(&mut b.ln1_b);
            out.push(&mut b.wq);
            out.push(&mut b.wk);
            out.push(&mut b.wv);
            out.push(&mut b.wo);
            out.push(&mut b.ln2_g);
            out.push(&mut b.ln2_b);
            out.push(&mut b.w1);
            out.push(&mut b.b1);
            out.push(&mut b.w2);
            out.push(&mut b.b2);
        }
        out.push(&mut self.lnf_g);
        out.push(&mut self.lnf_b);
        out.push(&mut self.head);
        out
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

// ── Model ──────────────────────────────────────────────────────────────────

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyLm {
    pub config: ToyLmConfig,
    p: Params,
}

/// Shape of the per-position logits buffer a forward pass produces.
enum LogitSpan {
    All,
    LastOnly,
}

/// Per-block activation caches kept for the backward pass.
struct BlockCache {
    x_in: Vec<f32>,
    ln1_xhat: Vec<f32>,
    ln1_rstd: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    att: Vec<f32>, // (heads × T × T)
    o: Vec<f32>,   // head mix before the output projection
    x_mid: Vec<f32>,
    ln2_xhat: Vec<f32>,
    ln2_rstd: Vec<f32>,
    h1: Vec<f32>, // post-ReLU (T × 4d)
}

struct TrainCache {
    t: usize,
    blocks: Vec<BlockCache>,
    x_final: Vec<f32>,
    lnf_xhat: Vec<f32>,
    lnf_rstd: Vec<f32>,
    logits: Vec<f32>,
}

impl ToyLm {
    pub fn new(config: ToyLmConfig) -> Result<Self> {
        config.validate()?;
        Ok(ToyLm {
            p: Params::init(&config),
            config,
        })
    }

    fn d(&self) -> usize {
        self.config.d_model
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        for &t in tokens {
            if t as usize >= self.config.vocab_size {
                return Err(Error::TokenOutOfVocab {
                    token: t,
                    vocab_size: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    // ── Forward primitives ─────────────────────────────────────────────

    /// y = LN(x)·g + b per row; xhat and 1/σ are written to the caches.
    fn layer_norm(
        &self,
        x: &[f32],
        g: &[f32],
        b: &[f32],
        t_len: usize,
        xhat: &mut [f32],
        rstd: &mut [f32],
        y: &mut [f32],
    ) {
        let d = self.d();
        for t in 0..t_len {
            let row = &x[t * d..(t + 1) * d];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row
                .iter()
                .map(|&v| {
                    let c = v as f64 - mean;
                    c * c
                })
                .sum::<f64>()
                / d as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd[t] = r as f32;
            for i in 0..d {
                let xh = ((row[i] as f64 - mean) * r) as f32;
                xhat[t * d + i] = xh;
                y[t * d + i] = xh * g[i] + b[i];
            }
        }
    }

    /// Causal multi-head attention over y = LN1(x); fills q/k/v/att/o.
    fn attention(&self, y: &[f32], t_len: usize, bp: &BlockParams, c: &mut BlockCache) {
        let d = self.d();
        let nh = self.config.n_heads;
        let hd = d / nh;
        let scale = 1.0 / (hd as f64).sqrt();
        tensor::matmul_bt(y, &bp.wq, &mut c.q, t_len, d, d);
        tensor::matmul_bt(y, &bp.wk, &mut c.k, t_len, d, d);
        tensor::matmul_bt(y, &bp.wv, &mut c.v, t_len, d, d);
        c.o.iter_mut().for_each(|x| *x = 0.0);
        for h in 0..nh {
            let off = h * hd;
            for t in 0..t_len {
                // Scores over positions u ≤ t, softmax in f64.
                let qt = &c.q[t * d + off..t * d + off + hd];
                let base = h * t_len * t_len + t * t_len;
                let mut maxs = f64::NEG_INFINITY;
                for u in 0..=t {
                    let ku = &c.k[u * d + off..u * d + off + hd];
                    let s = tensor::dot_f64(qt, ku) * scale;
                    c.att[base + u] = s as f32;
                    maxs = maxs.max(s);
                }
                let mut denom = 0.0f64;
                for u in 0..=t {
                    let e = ((c.att[base + u] as f64) - maxs).exp();
                    c.att[base + u] = e as f32;
                    denom += e;
                }
                for u in 0..=t {
                    c.att[base + u] = ((c.att[base + u] as f64) / denom) as f32;
                }
                for u in t + 1..t_len {
                    c.att[base + u] = 0.0;
                }
                // Head mix o_h[t] = Σ_u att[t][u] · v_h[u].
                for u in 0..=t {
                    let a = c.att[base + u];
                    let vu = &c.v[u * d + off..u * d + off + hd];
                    let ot = &mut c.o[t * d + off..t * d + off + hd];
                    for i in 0..hd {
                        ot[i] += a * vu[i];
                    }
                }
            }
        }
    }

    fn empty_block_cache(&self, t_len: usize) -> BlockCache {
        let d = self.d();
        BlockCache {
            x_in: vec![0.0; t_len * d],
            ln1_xhat: vec![0.0; t_len * d],
            ln1_rstd: vec![0.0; t_len],
            q: vec![0.0; t_len * d],
            k: vec![0.0; t_len * d],
            v: vec![0.0; t_len * d],
            att: vec![0.0; self.config.n_heads * t_len * t_len],
            o: vec![0.0; t_len * d],
            x_mid: vec![0.0; t_len * d],
            ln2_xhat: vec![0.0; t_len * d],
            ln2_rstd: vec![0.0; t_len],
            h1: vec![0.0; t_len * 4 * d],
        }
    }

    /// One full forward pass. `tap` (1-based) returns the residual stream
    /// after that block as later blocks see it, i.e. after any patch;
    /// `patch` replaces the residual stream after its own block.
    fn forward(
        &self,
        tokens: &[u32],
        tap: Option<usize>,
        patch: Option<&Patch>,
        span: LogitSpan,
        cache: Option<&mut TrainCache>,
    ) -> Result<(Vec<f32>, Option<HiddenState>)> {
        self.check_tokens(tokens)?;
        if tokens.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        if let Some(k) = tap {
            if k < 1 || k > self.config.n_blocks {
                return Err(Error::BlockOutOfRange {
                    block: k,
                    n_blocks: self.config.n_blocks,
                });
            }
        }
        if let Some(p) = patch {
            if p.block < 1 || p.block > self.config.n_blocks {
                return Err(Error::BlockOutOfRange {
                    block: p.block,
                    n_blocks: self.config.n_blocks,
                });
            }
        }
        let d = self.d();
        let t_len = tokens.len();
        let mut x = vec![0.0f32; t_len * d];
        for (t, &tok) in tokens.iter().enumerate() {
            let e = &self.p.emb[tok as usize * d..(tok as usize + 1) * d];
            let p = &self.p.pos[t * d..(t + 1) * d];
            for i in 0..d {
                x[t * d + i] = e[i] + p[i];
            }
        }

        let mut tapped: Option<HiddenState> = None;
        let mut caches: Vec<BlockCache> = Vec::new();
        let mut y = vec![0.0f32; t_len * d];
        let mut attn_out = vec![0.0f32; t_len * d];
        let mut mlp_out = vec![0.0f32; t_len * d];

        for (bi, bp) in self.p.blocks.iter().enumerate() {
            let mut c = self.empty_block_cache(t_len);
            c.x_in.copy_from_slice(&x);
            self.layer_norm(&x, &bp.ln1_g, &bp.ln1_b, t_len, &mut c.ln1_xhat, &mut c.ln1_rstd, &mut y);
            self.attention(&y, t_len, bp, &mut c);
            tensor::matmul_bt(&c.o, &bp.wo, &mut attn_out, t_len, d, d);
            for i in 0..t_len * d {
                x[i] += attn_out[i];
            }
            c.x_mid.copy_from_slice(&x);
            self.layer_norm(&x, &bp.ln2_g, &bp.ln2_b, t_len, &mut c.ln2_xhat, &mut c.ln2_rstd, &mut y);
            tensor::matmul_bt(&y, &bp.w1, &mut c.h1, t_len, d, 4 * d);
            for t in 0..t_len {
                for j in 0..4 * d {
                    let idx = t * 4 * d + j;
                    c.h1[idx] = (c.h1[idx] + bp.b1[j]).max(0.0);
                }
            }
            tensor::matmul_bt(&c.h1, &bp.w2, &mut mlp_out, t_len, 4 * d, d);
            for t in 0..t_len {
                for i in 0..d {
                    x[t * d + i] += mlp_out[t * d + i] + bp.b2[i];
                }
            }

            let block_1based = bi + 1;
            if let Some(p) = patch {
                if p.block == block_1based {
                    let before = HiddenState {
                        rows: t_len,
                        d,
                        data: x.clone(),
                        block_index: block_1based,
                    };
                    let after = (p.f)(&before)?;
                    if !after.same_shape(&before) {
                        return Err(Error::DimensionMismatch {
                            expected: t_len * d,
                            got: after.data.len(),
                        });
                    }
                    if !tensor::all_finite(&after.data) {
                        return Err(Error::InvalidConfig(
                            "patch produced non-finite hidden state".into(),
                        ));
                    }
                    x.copy_from_slice(&after.data);
                }
            }
            if tap == Some(block_1based) {
                tapped = Some(HiddenState {
                    rows: t_len,
                    d,
                    data: x.clone(),
                    block_index: block_1based,
                });
            }
            if cache.is_some() {
                caches.push(c);
            }
        }

        // Final layer norm + unembedding head.
        let mut lnf_xhat = vec![0.0f32; t_len * d];
        let mut lnf_rstd = vec![0.0f32; t_len];
        let mut xf = vec![0.0f32; t_len * d];
        self.layer_norm(&x, &self.p.lnf_g, &self.p.lnf_b, t_len, &mut lnf_xhat, &mut lnf_rstd, &mut xf);
        let logits = match span {
            LogitSpan::All => {
                let mut l = vec![0.0f32; t_len * self.config.vocab_size];
                tensor::matmul_bt(&xf, &self.p.head, &mut l, t_len, d, self.config.vocab_size);
                l
            }
            LogitSpan::LastOnly => {
                let row = &xf[(t_len - 1) * d..t_len * d];
                let mut l = vec![0.0f32; self.config.vocab_size];
                tensor::matmul_bt(row, &self.p.head, &mut l, 1, d, self.config.vocab_size);
                l
            }
        };
        if !tensor::all_finite(&logits) {
            return Err(Error::NonFiniteLoss { step: 0 });
        }
        if let Some(tc) = cache {
            tc.t = t_len;
            tc.blocks = caches;
            tc.x_final = x;
            tc.lnf_xhat = lnf_xhat;
            tc.lnf_rstd = lnf_rstd;
            tc.logits = logits.clone();
        }
        Ok((logits, tapped))
    }

    /// Full-sequence logits (T × vocab) plus the residual stream after
    /// block k (1-based).
    pub fn forward_with_tap(&self, tokens: &[u32], k: usize) -> Result<(Vec<f32>, HiddenState)> {
        let (logits, tapped) = self.forward(tokens, Some(k), None, LogitSpan::All, None)?;
        Ok((logits, tapped.expect("tap requested")))
    }

    /// Same as [`ToyLm::forward_with_tap`] but with a patch active, for
    /// inspecting what downstream blocks see.
    pub fn forward_with_tap_patched(
        &self,
        tokens: &[u32],
        k: usize,
        patch: &Patch,
    ) -> Result<(Vec<f32>, HiddenState)> {
        let (logits, tapped) = self.forward(tokens, Some(k), Some(patch), LogitSpan::All, None)?;
        Ok((logits, tapped.expect("tap requested")))
    }

    /// Greedy or temperature-sampled generation. The continuation stops at
    /// EOS (not included) or after `max_new_tokens`. The patch, when given,
    /// is applied on every forward pass: the prefill and each decode step.
    pub fn generate(
        &self,
        prompt: &[u32],
        params: &DecodeParams,
        patch: Option<&Patch>,
    ) -> Result<Vec<u32>> {
        if prompt.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        self.check_tokens(prompt)?;
        let mut rng = seeded_rng(params.seed);
        let mut tokens = prompt.to_vec();
        let mut out = Vec::new();
        for step in 0..params.max_new_tokens {
            if tokens.len() >= self.config.max_seq_len {
                break; // context full; stop rather than truncate history
            }
            let (logits, _) = self
                .forward(&tokens, None, patch, LogitSpan::LastOnly, None)
                .map_err(|e| Error::PatchFailed {
                    step,
                    source: Box::new(e),
                })?;
            let next = if params.sampling {
                let mut scaled: Vec<f32> = logits
                    .iter()
                    .map(|&l| l / params.temperature.max(1e-6))
                    .collect();
                tensor::softmax_inplace(&mut scaled);
                let u: f64 = rng.gen::<f64>();
                let mut acc = 0.0f64;
                let mut pick = scaled.len() - 1;
                for (i, &p) in scaled.iter().enumerate() {
                    acc += p as f64;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick as u32
            } else {
                tensor::argmax(&logits) as u32
            };
            if next == crate::corpus::EOS {
                break;
            }
            out.push(next);
            tokens.push(next);
        }
        Ok(out)
    }

    // ── Training ───────────────────────────────────────────────────────

    fn empty_cache(&self) -> TrainCache {
        TrainCache {
            t: 0,
            blocks: Vec::new(),
            x_final: Vec::new(),
            lnf_xhat: Vec::new(),
            lnf_rstd: Vec::new(),
            logits: Vec::new(),
        }
    }

    /// Sum of next-token cross-entropies over the sequence (f64), plus the
    /// number of predicted positions.
    fn ce_from_logits(&self, logits: &[f32], tokens: &[u32]) -> (f64, usize) {
        let v = self.config.vocab_size;
        let mut sum = 0.0f64;
        let n = tokens.len() - 1;
        for t in 0..n {
            let row = &logits[t * v..(t + 1) * v];
            let maxl = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let denom: f64 = row.iter().map(|&l| ((l as f64) - maxl).exp()).sum();
            let target = tokens[t + 1] as usize;
            sum += -((row[target] as f64 - maxl) - denom.ln());
        }
        (sum, n)
    }

    /// Backward through one cached sequence, accumulating into `g`.
    /// `dlogit_scale` is the weight each predicted position contributes
    /// (1 / total predicted positions in the batch).
    fn backward(&self, tokens: &[u32], c: &TrainCache, g: &mut Params, dlogit_scale: f32) {
        let d = self.d();
        let v = self.config.vocab_size;
        let t_len = c.t;
        let nh = self.config.n_heads;
        let hd = d / nh;
        let scale = 1.0 / (hd as f64).sqrt();

        // d logits: softmax − one-hot, per predicted position.
        let mut dlogits = vec![0.0f32; t_len * v];
        for t in 0..t_len - 1 {
            let row = &c.logits[t * v..(t + 1) * v];
            let maxl = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let exps: Vec<f64> = row.iter().map(|&l| ((l as f64) - maxl).exp()).collect();
            let denom: f64 = exps.iter().sum();
            let drow = &mut dlogits[t * v..(t + 1) * v];
            for i in 0..v {
                drow[i] = ((exps[i] / denom) as f32) * dlogit_scale;
            }
            drow[tokens[t + 1] as usize] -= dlogit_scale;
        }

        // Head: logits = xf · headᵀ.
        let mut dxf = vec![0.0f32; t_len * d];
        tensor::matmul(&dlogits, &self.p.head, &mut dxf, t_len, v, d);
        let mut xf = vec![0.0f32; t_len * d];
        for t in 0..t_len {
            for i in 0..d {
                xf[t * d + i] = c.lnf_xhat[t * d + i] * self.p.lnf_g[i] + self.p.lnf_b[i];
            }
        }
        tensor::matmul_at_acc(&dlogits, &xf, &mut g.head, t_len, v, d);

        // Final layer norm.
        let mut dx = vec![0.0f32; t_len * d];
        ln_backward(
            &dxf,
            &c.lnf_xhat,
            &c.lnf_rstd,
            &self.p.lnf_g,
            t_len,
            d,
            &mut g.lnf_g,
            &mut g.lnf_b,
            &mut dx,
        );

        // Blocks in reverse.
        for bi in (0..self.config.n_blocks).rev() {
            let bp = &self.p.blocks[bi];
            let bc = &c.blocks[bi];
            let gb = &mut g.blocks[bi];

            // MLP: x += W2·relu(W1·ln2(x_mid) + b1) + b2.
            let dmlp = dx.clone(); // gradient flowing into the MLP output
            for t in 0..t_len {
                for i in 0..d {
                    gb.b2[i] += dmlp[t * d + i];
                }
            }
            let mut dh1 = vec![0.0f32; t_len * 4 * d];
            tensor::matmul(&dmlp, &bp.w2, &mut dh1, t_len, d, 4 * d);
            tensor::matmul_at_acc(&dmlp, &bc.h1, &mut gb.w2, t_len, d, 4 * d);
            for idx in 0..t_len * 4 * d {
                if bc.h1[idx] <= 0.0 {
                    dh1[idx] = 0.0;
                }
            }
            for t in 0..t_len {
                for j in 0..4 * d {
                    gb.b1[j] += dh1[t * 4 * d + j];
                }
            }
            let mut dln2y = vec![0.0f32; t_len * d];
            tensor::matmul(&dh1, &bp.w1, &mut dln2y, t_len, 4 * d, d);
            let mut ln2y = vec![0.0f32; t_len * d];
            for t in 0..t_len {
                for i in 0..d {
                    ln2y[t * d + i] = bc.ln2_xhat[t * d + i] * bp.ln2_g[i] + bp.ln2_b[i];
                }
            }
            tensor::matmul_at_acc(&dh1, &ln2y, &mut gb.w1, t_len, 4 * d, d);
            let mut dx_mid = vec![0.0f32; t_len * d];
            ln_backward(
                &dln2y,
                &bc.ln2_xhat,
                &bc.ln2_rstd,
                &bp.ln2_g,
                t_len,
                d,
                &mut gb.ln2_g,
                &mut gb.ln2_b,
                &mut dx_mid,
            );
            // Residual: gradient flows both through LN2 and straight through.
            for i in 0..t_len * d {
                dx_mid[i] += dx[i];
            }

            // Attention output projection: attn_out = o · woᵀ.
            let datt_out = dx_mid.clone();
            let mut do_ = vec![0.0f32; t_len * d];
            tensor::matmul(&datt_out, &bp.wo, &mut do_, t_len, d, d);
            tensor::matmul_at_acc(&datt_out, &bc.o, &mut gb.wo, t_len, d, d);

            // Heads backward.
            let mut dq = vec![0.0f32; t_len * d];
            let mut dk = vec![0.0f32; t_len * d];
            let mut dv = vec![0.0f32; t_len * d];
            for h in 0..nh {
                let off = h * hd;
                for t in 0..t_len {
                    let base = h * t_len * t_len + t * t_len;
                    let dot = &do_[t * d + off..t * d + off + hd];
                    // datt[u] = do_h[t] · v_h[u]; dv accumulates att·do.
                    let mut datt = vec![0.0f64; t + 1];
                    for u in 0..=t {
                        let a = bc.att[base + u] as f64;
                        let vu = &bc.v[u * d + off..u * d + off + hd];
                        let dvu = &mut dv[u * d + off..u * d + off + hd];
                        let mut acc = 0.0f64;
                        for i in 0..hd {
                            acc += dot[i] as f64 * vu[i] as f64;
                            dvu[i] += (a * dot[i] as f64) as f32;
                        }
                        datt[u] = acc;
                    }
                    // Softmax backward: ds = att ⊙ (datt − Σ att·datt).
                    let mut inner = 0.0f64;
                    for u in 0..=t {
                        inner += bc.att[base + u] as f64 * datt[u];
                    }
                    for u in 0..=t {
                        let ds = bc.att[base + u] as f64 * (datt[u] - inner) * scale;
                        let ku = &bc.k[u * d + off..u * d + off + hd];
                        let qt = &bc.q[t * d + off..t * d + off + hd];
                        let dqt = &mut dq[t * d + off..t * d + off + hd];
                        for i in 0..hd {
                            dqt[i] += (ds * ku[i] as f64) as f32;
                        }
                        let dku = &mut dk[u * d + off..u * d + off + hd];
                        for i in 0..hd {
                            dku[i] += (ds * qt[i] as f64) as f32;
                        }
                    }
                }
            }

            // Projections q/k/v = ln1y · Wᵀ.
            let mut ln1y = vec![0.0f32; t_len * d];
            for t in 0..t_len {
                for i in 0..d {
                    ln1y[t * d + i] = bc.ln1_xhat[t * d + i] * bp.ln1_g[i] + bp.ln1_b[i];
                }
            }
            let mut dln1y = vec![0.0f32; t_len * d];
            let mut tmp = vec![0.0f32; t_len * d];
            tensor::matmul(&dq, &bp.wq, &mut tmp, t_len, d, d);
            for i in 0..t_len * d {
                dln1y[i] += tmp[i];
            }
            tensor::matmul(&dk, &bp.wk, &mut tmp, t_len, d, d);
            for i in 0..t_len * d {
                dln1y[i] += tmp[i];
            }
            tensor::matmul(&dv, &bp.wv, &mut tmp, t_len, d, d);
            for i in 0..t_len * d {
                dln1y[i] += tmp[i];
            }
            tensor::matmul_at_acc(&dq, &ln1y, &mut gb.wq, t_len, d, d);
            tensor::matmul_at_acc(&dk, &ln1y, &mut gb.wk, t_len, d, d);
            tensor::matmul_at_acc(&dv, &ln1y, &mut gb.wv, t_len, d, d);

            let mut dx_in = vec![0.0f32; t_len * d];
            ln_backward(
                &dln1y,
                &bc.ln1_xhat,
                &bc.ln1_rstd,
                &bp.ln1_g,
                t_len,
                d,
                &mut gb.ln1_g,
                &mut gb.ln1_b,
                &mut dx_in,
            );
            for i in 0..t_len * d {
                dx_in[i] += dx_mid[i];
            }
            dx = dx_in;
        }

        // Embeddings.
        for (t, &tok) in tokens.iter().enumerate() {
            let ge = &mut g.emb[tok as usize * d..(tok as usize + 1) * d];
            for i in 0..d {
                ge[i] += dx[t * d + i];
            }
            let gp = &mut g.pos[t * d..(t + 1) * d];
            for i in 0..d {
                gp[i] += dx[t * d + i];
            }
        }
    }
}

/// Layer-norm backward shared by all four sites.
#[allow(clippy::too_many_arguments)]
fn ln_backward(
    dy: &[f32],
    xhat: &[f32],
    rstd: &[f32],
    g: &[f32],
    t_len: usize,
    d: usize,
    gg: &mut [f32],
    gb: &mut [f32],
    dx: &mut [f32],
) {
    for t in 0..t_len {
        let dyr = &dy[t * d..(t + 1) * d];
        let xhr = &xhat[t * d..(t + 1) * d];
        let mut sum_dxhat = 0.0f64;
        let mut sum_dxhat_xhat = 0.0f64;
        for i in 0..d {
            let dxh = dyr[i] as f64 * g[i] as f64;
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhr[i] as f64;
            gg[i] += dyr[i] * xhr[i];
            gb[i] += dyr[i];
        }
        let m1 = sum_dxhat / d as f64;
        let m2 = sum_dxhat_xhat / d as f64;
        let r = rstd[t] as f64;
        let dxr = &mut dx[t * d..(t + 1) * d];
        for i in 0..d {
            let dxh = dyr[i] as f64 * g[i] as f64;
            dxr[i] = (r * (dxh - m1 - xhr[i] as f64 * m2)) as f32;
        }
    }
}

// ── Adam ───────────────────────────────────────────────────────────────────

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
pub const TRAIN_BATCH: usize = 8;
pub const TRAIN_LR: f64 = 1e-3;

struct Adam {
    m: Params,
    v: Params,
    t: u64,
}

impl Adam {
    fn new(cfg: &ToyLmConfig) -> Self {
        Adam {
            m: Params::zeros(cfg),
            v: Params::zeros(cfg),
            t: 0,
        }
    }

    fn step(&mut self, p: &mut Params, g: &Params, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_B1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_B2.powi(self.t as i32);
        let gs: Vec<&Vec<f32>> = g.tensors().into_iter().map(|(_, t)| t).collect();
        let ms = self.m.tensors_mut();
        // Split borrows: iterate params/velocity in the same fixed order.
        let vs = self.v.tensors_mut();
        let ps = p.tensors_mut();
        for (((pt, gt), mt), vt) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..pt.len() {
                let grad = gt[i] as f64;
                let m = ADAM_B1 * mt[i] as f64 + (1.0 - ADAM_B1) * grad;
                let v = ADAM_B2 * vt[i] as f64 + (1.0 - ADAM_B2) * grad * grad;
                mt[i] = m as f32;
                vt[i] = v as f32;
                let update = lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
                pt[i] = (pt[i] as f64 - update) as f32;
            }
        }
    }
}

/// Train a fresh model on the token sequences with next-token cross-entropy,
/// a constant learning rate, and deterministic single-threaded updates.
pub fn train_toy_lm(corpus: &[Vec<u32>], config: ToyLmConfig, steps: usize) -> Result<ToyLm> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyInput("training corpus"));
    }
    for seq in corpus {
        if seq.len() < 2 {
            return Err(Error::InvalidConfig(
                "every training sequence needs >= 2 tokens".into(),
            ));
        }
        if seq.len() > config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: seq.len(),
                max: config.max_seq_len,
            });
        }
        for &t in seq {
            if t as usize >= config.vocab_size {
                return Err(Error::TokenOutOfVocab {
                    token: t,
                    vocab_size: config.vocab_size,
                });
            }
        }
    }
    let mut model = ToyLm::new(config)?;
    let mut adam = Adam::new(&config);
    let mut grads = Params::zeros(&config);
    // Separate stream from the init RNG so batch order is stable even if
    // the parameter count changes.
    let mut order_rng = seeded_rng(config.seed.wrapping_add(0x9e3779b9));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut cursor = usize::MAX; // force an initial shuffle

    for step in 0..steps {
        if cursor.saturating_add(TRAIN_BATCH) > corpus.len() {
            shuffle(&mut order, &mut order_rng);
            cursor = 0;
        }
        grads.zero();
        let batch: Vec<usize> = (0..TRAIN_BATCH)
            .map(|j| order[(cursor + j) % corpus.len()])
            .collect();
        cursor += TRAIN_BATCH;

        let total_targets: usize = batch.iter().map(|&i| corpus[i].len() - 1).sum();
        let scale = 1.0 / total_targets as f32;
        let mut loss_sum = 0.0f64;
        for &i in &batch {
            let mut cache = model.empty_cache();
            model.forward(&corpus[i], None, None, LogitSpan::All, Some(&mut cache))?;
            let (ce, _) = model.ce_from_logits(&cache.logits, &corpus[i]);
            loss_sum += ce;
            model.backward(&corpus[i], &cache, &mut grads, scale);
        }
        let loss = loss_sum / total_targets as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        adam.step(&mut model.p, &grads, TRAIN_LR);
    }
    Ok(model)
}

/// Fisher-Yates with the shared RNG type, for deterministic batch order.
fn shuffle(xs: &mut [usize], rng: &mut rand_chacha::ChaCha8Rng) {
    for i in (1..xs.len()).rev() {
        let j = rng.gen_range(0..=i);
        xs.swap(i, j);
    }
}

/// Mean next-token cross-entropy over a set of sequences.
pub fn cross_entropy(model: &ToyLm, seqs: &[Vec<u32>]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::EmptyInput("evaluation sequences"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for seq in seqs {
        let (logits, _) = model.forward(seq, None, None, LogitSpan::All, None)?;
        let (ce, k) = model.ce_from_logits(&logits, seq);
        sum += ce;
        n += k;
    }
    Ok(sum / n as f64)
}

/// Teacher-forced next-token accuracy over the answer segment (everything
/// after `answer:`, including the end-of-sequence token).
pub fn answer_token_accuracy(model: &ToyLm, lines: &[CorpusLine]) -> Result<f64> {
    if lines.is_empty() {
        return Err(Error::EmptyInput("evaluation lines"));
    }
    let v = model.config.vocab_size;
    let mut correct = 0usize;
    let mut total = 0usize;
    for line in lines {
        let tokens = line.tokens();
        let (logits, _) = model.forward(&tokens, None, None, LogitSpan::All, None)?;
        // Token t predicts position t+1. BOS + prompt bytes occupy
        // positions 0..=prompt.len(); answer bytes follow.
        let first_answer_pos = 1 + line.prompt.len();
        for t in (first_answer_pos - 1)..tokens.len() - 1 {
            let row = &logits[t * v..(t + 1) * v];
            if tensor::argmax(row) as u32 == tokens[t + 1] {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

// ── Checkpointing ──────────────────────────────────────────────────────────

pub const LM_KIND: &str = "toy-lm";

impl ToyLm {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(LM_KIND, &self.config)?;
        let d = self.d();
        for (name, data) in self.p.tensors() {
            let shape = shape_for(&name, &self.config, d, data.len());
            c.push_tensor(&name, shape, data.clone())?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(LM_KIND)?;
        let config: ToyLmConfig = c.config_as()?;
        config.validate()?;
        let mut model = ToyLm {
            config,
            p: Params::zeros(&config),
        };
        let names: Vec<String> = model.p.tensors().into_iter().map(|(n, _)| n).collect();
        for (name, dst) in names.into_iter().zip(model.p.tensors_mut()) {
            let t = c.tensor(&name)?;
            if t.data.len() != dst.len() {
                return Err(Error::Container(format!(
                    "tensor {name:?} has {} values, expected {}",
                    t.data.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(&t.data);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ToyLm::from_container(&Container::load(path)?)
    }
}

fn shape_for(name: &str, cfg: &ToyLmConfig, d: usize, len: usize) -> Vec<usize> {
    match name {
        "emb" | "head" => vec![cfg.vocab_size, d],
        "pos" => vec![cfg.max_seq_len, d],
        _ if name.ends_with(".w1") => vec![4 * d, d],
        _ if name.ends_with(".w2") => vec![d, 4 * d],
        _ if name.ends_with(".wq")
            || name.ends_with(".wk")
            || name.ends_with(".wv")
            || name.ends_with(".wo") =>
        {
            vec![d, d]
        }
        _ => vec![len],
    }
}
