//! End-to-end artifact builder: corpus → toy LM → activation dump → SAE →
//! feature set. Every stage is keyed by a hash of everything upstream of
//! it, and finished artifacts are reused from a disk cache, so tests and
//! CLI runs that share a configuration pay each training cost once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{build_corpus, subjective_stem, Corpus, CorpusSpec, TaskKind};
use crate::error::{Error, Result};
use crate::features::{checksum_hex, extract_feature_set, ExtractParams, LatentFeatureSet};
use crate::lm::{train_toy_lm, ToyLm, ToyLmConfig};
use crate::sae::{train_sae, ActivationSet, SaeModel, SaeTrainConfig};
use crate::vad::LabelTable;

/// Everything needed to rebuild the artifact chain from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus: CorpusSpec,
    pub lm: ToyLmConfig,
    pub lm_steps: usize,
    /// Residual-stream block the SAE attaches to (1-based).
    pub block: usize,
    pub sae: SaeTrainConfig,
    pub extract: ExtractParams,
    /// Contrastive pairs per axis.
    pub n_pairs: usize,
    /// Pair sampling and provenance seed.
    pub seed: u64,
    /// δ_max calibration pool is capped at this many prompts.
    pub max_calibration_prompts: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: CorpusSpec::default(),
            lm: ToyLmConfig::default(),
            lm_steps: 5000,
            block: 3,
            sae: SaeTrainConfig::default(),
            extract: ExtractParams::default(),
            n_pairs: 24,
            seed: 17,
            max_calibration_prompts: 192,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.lm.validate()?;
        self.sae.validate()?;
        self.extract.validate()?;
        if self.lm_steps == 0 {
            return Err(Error::InvalidConfig("lm_steps must be >= 1".into()));
        }
        if self.block == 0 || self.block > self.lm.n_blocks {
            return Err(Error::BlockOutOfRange {
                block: self.block,
                n_blocks: self.lm.n_blocks,
            });
        }
        if self.n_pairs == 0 {
            return Err(Error::InvalidConfig("n_pairs must be >= 1".into()));
        }
        if self.max_calibration_prompts == 0 {
            return Err(Error::InvalidConfig(
                "max_calibration_prompts must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Stage hashes; recorded in run manifests so outputs name their inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFingerprints {
    pub lm: String,
    pub activations: String,
    pub sae: String,
    pub features: String,
}

/// The full artifact chain in memory.
#[derive(Debug, Clone)]
pub struct PipelineArtifacts {
    pub corpus: Corpus,
    pub lm: ToyLm,
    pub activations: ActivationSet,
    pub sae: SaeModel,
    pub features: LatentFeatureSet,
    pub fingerprints: StageFingerprints,
}

fn short_hash(parts: &impl Serialize) -> String {
    let json = serde_json::to_string(parts).expect("config serialization cannot fail");
    checksum_hex(json.as_bytes())[..16].to_string()
}

fn table_fingerprint(table: &LabelTable) -> String {
    short_hash(&table.labels())
}

/// Hash naming the trained LM: corpus recipe + LM shape + step budget.
pub fn lm_fingerprint(cfg: &PipelineConfig, table: &LabelTable) -> String {
    short_hash(&(
        "lm",
        crate::corpus::CORPUS_RECIPE_VERSION,
        &cfg.corpus,
        &cfg.lm,
        cfg.lm_steps,
        table_fingerprint(table),
    ))
}

/// Resolve the artifact cache directory: `ESTEER_CACHE_DIR` if set, the
/// enclosing cargo `target/` when running from one (so every test binary
/// in the workspace shares a cache), else the system temp dir.
pub fn default_cache_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("ESTEER_CACHE_DIR") {
        return PathBuf::from(dir);
    }
    if let Ok(exe) = std::env::current_exe() {
        for anc in exe.ancestors() {
            if anc.file_name().map(|n| n == "target").unwrap_or(false) {
                return anc.join("esteer-cache");
            }
        }
    }
    std::env::temp_dir().join("esteer-cache")
}

fn cached<T>(
    cache: Option<&Path>,
    name: &str,
    load: impl Fn(&Path) -> Result<T>,
    save: impl Fn(&T, &Path) -> Result<()>,
    build: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let Some(dir) = cache else {
        return build();
    };
    let path = dir.join(name);
    if path.exists() {
        if let Ok(artifact) = load(&path) {
            return Ok(artifact);
        }
        // Unreadable cache entry: fall through and rebuild it.
    }
    let artifact = build()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    save(&artifact, &path)?;
    Ok(artifact)
}

/// Train (or load) the toy LM for `cfg`.
pub fn train_lm_stage(
    cfg: &PipelineConfig,
    table: &LabelTable,
    cache: Option<&Path>,
) -> Result<(Corpus, ToyLm, String)> {
    cfg.validate()?;
    let corpus = build_corpus(&cfg.corpus, table)?;
    let fp = lm_fingerprint(cfg, table);
    let lm = cached(
        cache,
        &format!("lm-{fp}.estr"),
        |p| ToyLm::load(p),
        |m: &ToyLm, p| m.save(p),
        || train_toy_lm(&corpus.train_sequences(), cfg.lm, cfg.lm_steps),
    )?;
    Ok((corpus, lm, fp))
}

/// Tap `block` on every training line and stack the rows.
pub fn dump_activations_stage(
    lm: &ToyLm,
    corpus: &Corpus,
    block: usize,
    lm_fp: &str,
    cache: Option<&Path>,
) -> Result<(ActivationSet, String)> {
    let fp = short_hash(&("acts", lm_fp, block));
    let acts = cached(
        cache,
        &format!("acts-{fp}.estr"),
        |p| ActivationSet::load(p),
        |a: &ActivationSet, p| a.save(p),
        || {
            let mut acts = ActivationSet::new(lm.config.d_model, block);
            for line in &corpus.train {
                let (_, h) = lm.forward_with_tap(&line.tokens(), block)?;
                acts.push_hidden(&h)?;
            }
            Ok(acts)
        },
    )?;
    Ok((acts, fp))
}

/// Train (or load) the SAE on the dumped activations.
pub fn train_sae_stage(
    acts: &ActivationSet,
    sae_cfg: &SaeTrainConfig,
    acts_fp: &str,
    cache: Option<&Path>,
) -> Result<(SaeModel, String)> {
    let fp = short_hash(&("sae", acts_fp, sae_cfg));
    let sae = cached(
        cache,
        &format!("sae-{fp}.estr"),
        |p| SaeModel::load(p),
        |s: &SaeModel, p| s.save(p),
        || train_sae(acts, sae_cfg),
    )?;
    Ok((sae, fp))
}

/// Stems used to build contrastive prompt pairs: the subjective stems
/// only. The probe texts append each label's gold bank answer, and only
/// subjective stems have label-dependent answers — objective and safety
/// stems would contribute pairs whose continuations are identical across
/// labels and only dilute the contrast.
pub fn contrast_task_texts(spec: &CorpusSpec) -> Vec<String> {
    (0..spec.n_subjective).map(subjective_stem).collect()
}

/// Labelled subjective training lines (full text, prompt + gold),
/// stride-sampled down to at most `max_n`, used as the δ_max calibration
/// pool. Full lines, because the probe pools answer-region rows and the
/// calibration must measure activations in that same regime.
pub fn calibration_prompts(corpus: &Corpus, max_n: usize) -> Vec<String> {
    let labelled: Vec<&str> = corpus
        .train
        .iter()
        .filter(|l| l.label.is_some() && l.kind == TaskKind::Subjective)
        .map(|l| l.text.as_str())
        .collect();
    let stride = labelled.len().div_ceil(max_n).max(1);
    labelled
        .iter()
        .step_by(stride)
        .map(|s| s.to_string())
        .collect()
}

/// Extract (or load) the per-axis feature set.
pub fn extract_features_stage(
    cfg: &PipelineConfig,
    lm: &ToyLm,
    sae: &SaeModel,
    corpus: &Corpus,
    table: &LabelTable,
    sae_fp: &str,
    cache: Option<&Path>,
) -> Result<(LatentFeatureSet, String)> {
    let fp = short_hash(&(
        "features",
        crate::features::EXTRACTION_RECIPE_VERSION,
        sae_fp,
        &cfg.extract,
        cfg.n_pairs,
        cfg.seed,
        cfg.max_calibration_prompts,
        table_fingerprint(table),
    ));
    let features = cached(
        cache,
        &format!("features-{fp}.toml"),
        |p| LatentFeatureSet::load(p),
        |f: &LatentFeatureSet, p| f.save(p),
        || {
            extract_feature_set(
                lm,
                sae,
                table,
                &contrast_task_texts(&cfg.corpus),
                &calibration_prompts(corpus, cfg.max_calibration_prompts),
                &cfg.extract,
                cfg.n_pairs,
                cfg.seed,
            )
        },
    )?;
    Ok((features, fp))
}

/// Run every stage in order, reusing cached artifacts where present.
/// `cache: None` rebuilds everything in memory and writes nothing.
pub fn build_pipeline(
    cfg: &PipelineConfig,
    table: &LabelTable,
    cache: Option<&Path>,
) -> Result<PipelineArtifacts> {
    let (corpus, lm, lm_fp) = train_lm_stage(cfg, table, cache)?;
    let (activations, acts_fp) = dump_activations_stage(&lm, &corpus, cfg.block, &lm_fp, cache)?;
    let (sae, sae_fp) = train_sae_stage(&activations, &cfg.sae, &acts_fp, cache)?;
    let (features, feat_fp) =
        extract_features_stage(cfg, &lm, &sae, &corpus, table, &sae_fp, cache)?;
    Ok(PipelineArtifacts {
        corpus,
        lm,
        activations,
        sae,
        features,
        fingerprints: StageFingerprints {
            lm: lm_fp,
            activations: acts_fp,
            sae: sae_fp,
            features: feat_fp,
        },
    })
}
