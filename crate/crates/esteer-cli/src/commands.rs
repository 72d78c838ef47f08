//! Subcommand implementations. Each command resolves its config (file
//! plus flag overrides), loads exactly the inputs it needs, does the
//! work, and writes a manifest into the output directory. Input and
//! validation problems are config errors (exit 2); failures during the
//! work itself are runtime errors (exit 1).

use std::path::{Path, PathBuf};

use serde::Serialize;

use esteer_core::agent::remote::{RemoteChatBackend, RemoteClient};
use esteer_core::agent::scripted::{
    builtin_scenario, run_scripted_scenario, ScriptedScenario, BUILTIN_SCENARIO_TOML,
};
use esteer_core::agent::tools::builtin_toolset;
use esteer_core::agent::toy::{agent_tasks, run_toy_agent, ToyBackendConfig};
use esteer_core::agent::{compute_agent_metrics, run_episode, save_traces, AgentMetrics};
use esteer_core::corpus::{build_corpus, decode_text, prompt_tokens};
use esteer_core::eval::ablation::{ablate_features, AblationMode};
use esteer_core::eval::lexicon::{builtin_vad_lexicon, VadLexicon, BUILTIN_LEXICON_TSV};
use esteer_core::eval::report::{emit_report, metrics_csv, METRICS_HEADER};
use esteer_core::eval::{fluctuation_range, run_sweep, standard_tasks, MetricRecord, SweepSpec};
use esteer_core::pipeline::{
    default_cache_dir, dump_activations_stage, extract_features_stage, train_lm_stage,
    train_sae_stage,
};
use esteer_core::sae::{explained_variance, mean_l0, ActivationSet};
use esteer_core::steering::steered_generate;
use esteer_core::vad::{builtin_label_table, LabelTable, VadVector, BUILTIN_LABELS_TSV, VAD_MAX, VAD_MIN};
use esteer_core::{LatentFeatureSet, SaeModel, ToyLm, VadAxis};

use crate::config::{parse_axis, require_input, RunConfig};
use crate::manifest::{write_manifest, InputLog};
use crate::CliError;

/// Flag values already parsed and validated; `None` keeps the config
/// file's (or default) value.
#[derive(Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub vad: Option<VadVector>,
    pub alpha: Option<f64>,
    pub axis: Option<String>,
    pub grid: Option<Vec<f64>>,
    pub mode: Option<String>,
    pub backend: Option<String>,
    pub prompt: Option<String>,
    pub table: Option<PathBuf>,
}

fn prepare(config_path: Option<&Path>, ov: &Overrides) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(out) = &ov.out {
        cfg.paths.out_dir = out.clone();
    }
    if let Some(v) = ov.vad {
        cfg.steering.target = v;
    }
    if let Some(a) = ov.alpha {
        cfg.steering.alpha = a;
    }
    if let Some(axis) = &ov.axis {
        cfg.sweep.axis = axis.clone();
    }
    if let Some(grid) = &ov.grid {
        cfg.sweep.grid = grid.clone();
    }
    if let Some(mode) = &ov.mode {
        cfg.sweep.mode = mode.clone();
    }
    if let Some(backend) = &ov.backend {
        cfg.agent.backend = backend.clone();
    }
    if let Some(jobs) = ov.jobs {
        cfg.exec.jobs = jobs;
    }
    if let Some(table) = &ov.table {
        cfg.paths.table = Some(table.clone());
    }
    if cfg.exec.jobs > 0 {
        // First caller wins; later invocations in-process keep the pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.exec.jobs)
            .build_global();
    }
    let out = cfg.paths.out_dir.clone();
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::runtime(format!("create {}: {e}", out.display())))?;
    Ok((cfg, out))
}

fn cache_dir(cfg: &RunConfig) -> Option<PathBuf> {
    cfg.exec.cache.then(default_cache_dir)
}

// ── Input loaders ──────────────────────────────────────────────────────────

fn load_lm(cfg: &RunConfig, log: &mut InputLog) -> Result<(ToyLm, String), CliError> {
    let path = require_input(&cfg.paths.lm, "lm")?;
    let checksum = log.record(path)?;
    let lm = ToyLm::load(path).map_err(|e| CliError::config(format!("paths.lm: {e}")))?;
    Ok((lm, checksum))
}

fn load_sae(cfg: &RunConfig, log: &mut InputLog) -> Result<(SaeModel, String), CliError> {
    let path = require_input(&cfg.paths.sae, "sae")?;
    let checksum = log.record(path)?;
    let sae = SaeModel::load(path).map_err(|e| CliError::config(format!("paths.sae: {e}")))?;
    Ok((sae, checksum))
}

fn load_features(cfg: &RunConfig, log: &mut InputLog) -> Result<LatentFeatureSet, CliError> {
    let path = require_input(&cfg.paths.features, "features")?;
    log.record(path)?;
    let features = LatentFeatureSet::load(path)
        .map_err(|e| CliError::config(format!("paths.features: {e}")))?;
    features
        .validate()
        .map_err(|e| CliError::config(format!("paths.features: {e}")))?;
    Ok(features)
}

fn load_activations(cfg: &RunConfig, log: &mut InputLog) -> Result<(ActivationSet, String), CliError> {
    let path = require_input(&cfg.paths.activations, "activations")?;
    let checksum = log.record(path)?;
    let acts = ActivationSet::load(path)
        .map_err(|e| CliError::config(format!("paths.activations: {e}")))?;
    Ok((acts, checksum))
}

fn load_label_table(cfg: &RunConfig, log: &mut InputLog) -> Result<LabelTable, CliError> {
    match &cfg.paths.label_table {
        Some(_) => {
            let path = require_input(&cfg.paths.label_table, "label_table")?;
            log.record(path)?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("paths.label_table: {e}")))?;
            LabelTable::from_tsv(&text)
                .map_err(|e| CliError::config(format!("paths.label_table ({}): {e}", path.display())))
        }
        None => {
            log.record_builtin("labels.tsv", BUILTIN_LABELS_TSV.as_bytes());
            Ok(builtin_label_table())
        }
    }
}

fn load_lexicon(cfg: &RunConfig, log: &mut InputLog) -> Result<VadLexicon, CliError> {
    match &cfg.paths.lexicon {
        Some(_) => {
            let path = require_input(&cfg.paths.lexicon, "lexicon")?;
            log.record(path)?;
            VadLexicon::load(path)
                .map_err(|e| CliError::config(format!("paths.lexicon ({}): {e}", path.display())))
        }
        None => {
            log.record_builtin("vad_lexicon.tsv", BUILTIN_LEXICON_TSV.as_bytes());
            Ok(builtin_vad_lexicon())
        }
    }
}

fn load_scenario(cfg: &RunConfig, log: &mut InputLog) -> Result<ScriptedScenario, CliError> {
    match &cfg.paths.scenario {
        Some(_) => {
            let path = require_input(&cfg.paths.scenario, "scenario")?;
            log.record(path)?;
            ScriptedScenario::load(path)
                .map_err(|e| CliError::config(format!("paths.scenario ({}): {e}", path.display())))
        }
        None => {
            log.record_builtin("scripted_scenario.toml", BUILTIN_SCENARIO_TOML.as_bytes());
            Ok(builtin_scenario())
        }
    }
}

/// The loaded artifacts must agree on dimensions and block before any
/// steering runs.
fn check_stack(
    lm: &ToyLm,
    sae: &SaeModel,
    features: &LatentFeatureSet,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    if sae.d_model != lm.config.d_model {
        return Err(CliError::config(format!(
            "sae d_model {} does not match lm d_model {}",
            sae.d_model, lm.config.d_model
        )));
    }
    if features.latent_dim != sae.latent_dim {
        return Err(CliError::config(format!(
            "feature set latent_dim {} does not match sae latent_dim {}",
            features.latent_dim, sae.latent_dim
        )));
    }
    if features.block != sae.attached_block {
        return Err(CliError::config(format!(
            "feature set block {} does not match sae attached_block {}",
            features.block, sae.attached_block
        )));
    }
    if cfg.steering.block != features.block {
        return Err(CliError::config(format!(
            "steering.block {} does not match feature set block {}",
            cfg.steering.block, features.block
        )));
    }
    Ok(())
}

fn save_estr<F>(save: F, path: &Path) -> Result<(), CliError>
where
    F: FnOnce(&Path) -> esteer_core::Result<()>,
{
    save(path).map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))
}

// ── Pipeline-stage commands ────────────────────────────────────────────────

pub fn train_lm(config: Option<&Path>, ov: Overrides) -> Result<(), CliError> {
    let (mut cfg, out) = prepare(config, &ov)?;
    if let Some(seed) = ov.seed {
        cfg.pipeline.lm.seed = seed;
    }
    cfg.pipeline.validate().map_err(CliError::config_from)?;
    let mut log = InputLog::default();
    let table = load_label_table(&cfg, &mut log)?;
    let (_, lm, fingerprint) = train_lm_stage(&cfg.pipeline, &table, cache_dir(&cfg).as_deref())
        .map_err(CliError::runtime_from)?;
    let dest = out.join("lm.estr");
    save_estr(|p| lm.save(p), &dest)?;
    write_manifest(&out, "train-lm", &cfg, log)?;
    println!("wrote {} fingerprint={fingerprint}", dest.display());
    Ok(())
}

pub fn dump_activations(config: Option<&Path>, ov: Overrides) -> Result<(), CliError> {
    let (cfg, out) = prepare(config, &ov)?;
    let mut log = InputLog::default();
    let (lm, lm_checksum) = load_lm(&cfg, &mut log)?;
    let table = load_label_table(&cfg, &mut log)?;
    let block = cfg.pipeline.block;
    if block == 0 || block > lm.config.n_blocks {
        return Err(CliError::config(format!(
            "pipeline.block {block} outside 1..={}",
            lm.config.n_blocks
        )));
    }
    let corpus = build_corpus(&cfg.pipeline.corpus, &table).map_err(CliError::config_from)?;
    let (acts, fingerprint) = dump_activations_stage(
        &lm,
        &corpus,
        block,
        &lm_checksum[..16],
        cache_dir(&cfg).as_deref(),
    )
    .map_err(CliError::runtime_from)?;
    let dest = out.join("activations.estr");
    save_estr(|p| acts.save(p), &dest)?;
    write_manifest(&out, "dump-activations", &cfg, log)?;
    println!(
        "wrote {} rows={} d={} block={block} fingerprint={fingerprint}",
        dest.display(),
        acts.rows,
        acts.d
    );
    Ok(())
}

pub fn train_sae(config: Option<&Path>, ov: Overrides) -> Result<(), CliError> {
    let (mut cfg, out) = prepare(config, &ov)?;
    if let Some(seed) = ov.seed {
        cfg.pipeline.sae.seed = seed;
    }
    let mut log = InputLog::default();
    let (acts, acts_checksum) = load_activations(&cfg, &mut log)?;
    let (sae, fingerprint) = train_sae_stage(
        &acts,
        &cfg.pipeline.sae,
        &acts_checksum[..16],
        cache_dir(&cfg).as_deref(),
    )
    .map_err(CliError::runtime_from)?;
    let dest = out.join("sae.estr");
    save_estr(|p| sae.save(p), &dest)?;
    let ev = explained_variance(&sae, &acts).map_err(CliError::runtime_from)?;
    let l0 = mean_l0(&sae, &acts).map_err(CliError::runtime_from)?;
    write_manifest(&out, "train-sae", &cfg, log)?;
    println!(
        "wrote {} latent={} ev={ev:.4} l0={l0:.1} fingerprint={fingerprint}",
        dest.display(),
        sae.latent_dim
    );
    Ok(())
}

pub fn extract_features(config: Option<&Path>, ov: Overrides) -> Result<(), CliError> {
    let (mut cfg, out) = prepare(config, &ov)?;
    if let Some(seed) = ov.seed {
        cfg.pipeline.seed = seed;
    }
    let mut log = InputLog::default();
    let (lm, _) = load_lm(&cfg, &mut log)?;
    let (sae, sae_checksum) = load_sae(&cfg, &mut log)?;
    let table = load_label_table(&cfg, &mut log)?;
    if sae.d_model != lm.config.d_model {
        return Err(CliError::config(format!(
            "sae d_model {} does not match lm d_model {}",
            sae.d_model, lm.config.d_model
        )));
    }
    if cfg.pipeline.block != sae.attached_block {
        return Err(CliError::config(format!(
            "pipeline.block {} does not match sae attached_block {}",
            cfg.pipeline.block, sae.attached_block
        )));
    }
    let corpus = build_corpus(&cfg.pipeline.corpus, &table).map_err(CliError::config_from)?;
    let (features, fingerprint) = extract_features_stage(
        &cfg.pipeline,
        &lm,
        &sae,
        &corpus,
        &table,
        &sae_checksum[..16],
        cache_dir(&cfg).as_deref(),
    )
    .map_err(CliError::runtime_from)?;
    let dest = out.join("features.toml");
    save_estr(|p| features.save(p), &dest)?;
    write_manifest(&out, "extract-features", &cfg, log)?;
    println!(
        "wrote {} neurons v={} a={} d={} delta_max=[{:.3}, {:.3}, {:.3}] fingerprint={fingerprint}",
        dest.display(),
        features.valence.neuron_indices.len(),
        features.arousal.neuron_indices.len(),
        features.dominance.neuron_indices.len(),
        features.calib.delta_max[0],
        features.calib.delta_max[1],
        features.calib.delta_max[2]
    );
    Ok(())
}

// ── Generation commands ────────────────────────────────────────────────────

fn prompt_from(ov: &Overrides) -> Result<&str, CliError> {
    ov.prompt
        .as_deref()
        .filter(|p| !p.is_empty())
        .ok_or_else(|| CliError::config("missing --prompt".into()))
}

/// Plain generation, no steering hook; stdout carries only the
/// continuation so it can be diffed against `steer-generate`.
pub fn generate(config: Option<&Path>, ov: Overrides) -> Result<(), CliError> {
    let (mut cfg, out) = prepare(config, &ov)?;
    if let Some(seed) = ov.seed {
        cfg.decode.seed = seed;
    }
    let prompt = prompt_from(&ov)?.to_string();
    let mut log = InputLog::default();
    let (lm, _) = load_lm(&cfg, &mut log)?;
    let tokens = prompt_tokens(&prompt);
    let generated = lm
        .generate(&tokens, &cfg.decode, None)
        .map_err(CliError::runtime_from)?;
    write_manifest(&out, "generate", &cfg, log)?;
    println!("{}", decode_text(&generated));
    Ok(())
}

pub fn steer_generate(config: Option<&Path>, ov: Overrides) -> Result<(), CliError> {
    let (mut cfg, out) = prepare(config, &ov)?;
    if let Some(seed) = ov.seed {
        cfg.decode.seed = seed;
    }
    let prompt = prompt_from(&ov)?.to_string();
    let mut log = InputLog::default();
    let (lm, _) = load_lm(&cfg, &mut log)?;
    let (sae, _) = load_sae(&cfg, &mut log)?;
    let features = load_features(&cfg, &mut log)?;
    check_stack(&lm, &sae, &features, &cfg)?;
    let mut steering = cfg.steering.clone();
    steering.calib = features.calib;
    steering.validate().map_err(CliError::config_from)?;
    let tokens = prompt_tokens(&prompt);
    let generated = steered_generate(&lm, &sae, &features, &tokens, &steering, &cfg.decode)
        .map_err(CliError::runtime_from)?;
    write_manifest(&out, "steer-generate", &cfg, log)?;
    println!("{}", decode_text(&generated));
    Ok(())
}

// ── Sweep / ablation commands ──────────────────────────────────────────────

struct SweepStack {
    lm: ToyLm,
    sae: SaeModel,
    features: LatentFeatureSet,
    lexicon: VadLexicon,
    axis: VadAxis,
    spec: SweepSpec,
}

fn prepare_sweep(
    cfg: &mut RunConfig,
    ov: &Overrides,
    log: &mut InputLog,
) -> Result<SweepStack, CliError> {
    if let Some(seed) = ov.seed {
        cfg.decode.seed = seed;
    }
    let axis = parse_axis(&cfg.sweep.axis)?;
    if cfg.sweep.grid.is_empty() {
        return Err(CliError::config("sweep.grid: empty".into()));
    }
    for &v in &cfg.sweep.grid {
        if !(VAD_MIN..=VAD_MAX).contains(&v) {
            return Err(CliError::config(format!(
                "sweep.grid: {v} outside [{VAD_MIN}, {VAD_MAX}]"
            )));
        }
    }
    let grid: Vec<VadVector> = cfg
        .sweep
        .grid
        .iter()
        .map(|&v| VadVector::NEUTRAL.with_axis(axis, v))
        .collect();
    let tasks = standard_tasks(cfg.sweep.n_objective, cfg.sweep.n_subjective, cfg.sweep.n_safety);
    if tasks.is_empty() {
        return Err(CliError::config("sweep task counts are all zero".into()));
    }
    let (lm, _) = load_lm(cfg, log)?;
    let (sae, _) = load_sae(cfg, log)?;
    let features = load_features(cfg, log)?;
    let lexicon = load_lexicon(cfg, log)?;
    check_stack(&lm, &sae, &features, cfg)?;
    cfg.steering.calib = features.calib;
    cfg.steering.validate().map_err(CliError::config_from)?;
    let spec = SweepSpec {
        grid,
        tasks,
        decode: cfg.decode,
        repeats: cfg.sweep.repeats,
    };
    spec.validate().map_err(CliError::config_from)?;
    Ok(SweepStack {
        lm,
        sae,
        features,
        lexicon,
        axis,
        spec,
    })
}

pub fn sweep(config: Option<&Path>, ov: Overrides) -> Result<(), CliError> {
    let (mut cfg, out) = prepare(config, &ov)?;
    let mut log = InputLog::default();
    let stack = prepare_sweep(&mut cfg, &ov, &mut log)?;
    let records = run_sweep(
        &stack.lm,
        &stack.sae,
        &stack.features,
        &stack.spec,
        &cfg.steering,
        &stack.lexicon,
    )
    .map_err(CliError::runtime_from)?;
    let files = emit_report(&records, stack.axis, &out).map_err(CliError::runtime_from)?;
    write_manifest(&out, "sweep", &cfg, log)?;
    println!(
        "wrote {} points={} charts={}",
        files.table.display(),
        records.len(),
        files.charts.len()
    );
    Ok(())
}

/// Fluctuation summary written by `validate-latents`. Lexicon scores are
/// shifted into the lexicon's native positive range before the ratio so
/// the mean cannot straddle zero; `null` marks an undefined ratio.
#[derive(Serialize)]
struct AblationSummary {
    mode: String,
    axis: String,
    seed: u64,
    fluctuation_avr: Option<f64>,
    fluctuation_tsr: Option<f64>,
    fluctuation_mean_len: Option<f64>,
    fluctuation_lex: Option<f64>,
}

/// Fluctuation of the swept axis's lexicon score series, over the
/// positive-shifted scale.
pub fn lexicon_fluctuation(records: &[MetricRecord], axis: VadAxis) -> Option<f64> {
    let series: Vec<f64> = records
        .iter()
        .map(|r| r.lexicon_vad.components()[axis as usize] - VAD_MIN)
        .collect();
    fluctuation_range(&series).ok()
}

pub fn validate_latents(config: Option<&Path>, ov: Overrides) -> Result<(), CliError> {
    let (mut cfg, out) = prepare(config, &ov)?;
    if let Some(seed) = ov.seed {
        cfg.sweep.ablation_seed = seed;
    }
    let mode = AblationMode::from_name(&cfg.sweep.mode).map_err(CliError::config_from)?;
    let mut log = InputLog::default();
    let stack = prepare_sweep(&mut cfg, &ov, &mut log)?;
    let ablated = ablate_features(&stack.features, mode, cfg.sweep.ablation_seed)
        .map_err(CliError::config_from)?;
    let records = run_sweep(
        &stack.lm,
        &stack.sae,
        &ablated,
        &stack.spec,
        &cfg.steering,
        &stack.lexicon,
    )
    .map_err(CliError::runtime_from)?;
    emit_report(&records, stack.axis, &out).map_err(CliError::runtime_from)?;

    let series = |f: &dyn Fn(&MetricRecord) -> f64| -> Option<f64> {
        let values: Vec<f64> = records.iter().map(f).collect();
        fluctuation_range(&values).ok()
    };
    let summary = AblationSummary {
        mode: mode.name().to_string(),
        axis: stack.axis.name().to_string(),
        seed: cfg.sweep.ablation_seed,
        fluctuation_avr: series(&|r| r.avr),
        fluctuation_tsr: series(&|r| r.tsr),
        fluctuation_mean_len: series(&|r| r.mean_output_length),
        fluctuation_lex: lexicon_fluctuation(&records, stack.axis),
    };
    let dest = out.join("ablation.json");
    let body = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::runtime(format!("encode summary: {e}")))?;
    std::fs::write(&dest, body + "\n")
        .map_err(|e| CliError::runtime(format!("write {}: {e}", dest.display())))?;
    write_manifest(&out, "validate-latents", &cfg, log)?;
    match summary.fluctuation_lex {
        Some(v) => println!("mode={} axis={} fluctuation_lex={v:.6}", mode.name(), stack.axis.name()),
        None => println!("mode={} axis={} fluctuation_lex=undefined", mode.name(), stack.axis.name()),
    }
    Ok(())
}

// ── Agent command ──────────────────────────────────────────────────────────

pub const AGENT_METRICS_HEADER: &str = "plan_validity_rate,replan_improvement,replan_frequency,\
replan_trigger_confidence,rational_selection_rate,execution_completion_rate,overall_success_rate";

/// One-row CSV of the seven agent metrics; absent metrics leave their
/// cell empty.
pub fn agent_metrics_csv(m: &AgentMetrics) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    format!(
        "{AGENT_METRICS_HEADER}\n{:.6},{},{:.6},{},{:.6},{:.6},{:.6}\n",
        m.plan_validity_rate,
        opt(m.replan_improvement),
        m.replan_frequency,
        opt(m.replan_trigger_confidence),
        m.rational_selection_rate,
        m.execution_completion_rate,
        m.overall_success_rate
    )
}

pub fn agent_run(config: Option<&Path>, ov: Overrides) -> Result<(), CliError> {
    let (mut cfg, out) = prepare(config, &ov)?;
    if let Some(seed) = ov.seed {
        cfg.decode.seed = seed;
    }
    let limits = cfg.agent.limits;
    limits.validate().map_err(CliError::config_from)?;
    let tools = builtin_toolset();
    let mut log = InputLog::default();

    let traces = match cfg.agent.backend.as_str() {
        "scripted" => {
            let scenario = load_scenario(&cfg, &mut log)?;
            run_scripted_scenario(&scenario, &tools, &limits).map_err(CliError::runtime_from)?
        }
        "toy" => {
            let (lm, _) = load_lm(&cfg, &mut log)?;
            let (sae, _) = load_sae(&cfg, &mut log)?;
            let features = load_features(&cfg, &mut log)?;
            check_stack(&lm, &sae, &features, &cfg)?;
            let mut steering = cfg.steering.clone();
            steering.calib = features.calib;
            steering.validate().map_err(CliError::config_from)?;
            if cfg.agent.n_candidates == 0 {
                return Err(CliError::config("agent.n_candidates must be >= 1".into()));
            }
            let tasks = agent_tasks(&standard_tasks(
                cfg.agent.n_objective,
                cfg.agent.n_subjective,
                cfg.agent.n_safety,
            ));
            let backend_cfg = ToyBackendConfig {
                steering,
                decode: cfg.decode,
                n_candidates: cfg.agent.n_candidates,
            };
            run_toy_agent(&lm, &sae, &features, &backend_cfg, &tools, &tasks, &limits)
                .map_err(CliError::runtime_from)?
        }
        "remote" => {
            let remote = cfg
                .remote
                .clone()
                .ok_or_else(|| CliError::config("missing field: remote".into()))?;
            let client = RemoteClient::new(remote).map_err(CliError::config_from)?;
            let mut backend = RemoteChatBackend::new(client, &tools);
            let tasks = agent_tasks(&standard_tasks(
                cfg.agent.n_objective,
                cfg.agent.n_subjective,
                cfg.agent.n_safety,
            ));
            if tasks.is_empty() {
                return Err(CliError::config("agent task counts are all zero".into()));
            }
            tasks
                .iter()
                .map(|t| run_episode(&mut backend, &tools, t, &limits))
                .collect()
        }
        other => {
            return Err(CliError::config(format!(
                "unknown agent backend {other:?} (expected scripted, toy, or remote)"
            )))
        }
    };

    save_traces(&traces, &out).map_err(CliError::runtime_from)?;
    let metrics = compute_agent_metrics(&traces).map_err(CliError::runtime_from)?;
    let json = serde_json::to_string_pretty(&metrics)
        .map_err(|e| CliError::runtime(format!("encode metrics: {e}")))?;
    let json_path = out.join("agent_metrics.json");
    std::fs::write(&json_path, json + "\n")
        .map_err(|e| CliError::runtime(format!("write {}: {e}", json_path.display())))?;
    let csv_path = out.join("agent_metrics.csv");
    std::fs::write(&csv_path, agent_metrics_csv(&metrics))
        .map_err(|e| CliError::runtime(format!("write {}: {e}", csv_path.display())))?;
    write_manifest(&out, "agent-run", &cfg, log)?;
    println!(
        "wrote {} episodes={} overall_success_rate={:.6}",
        csv_path.display(),
        traces.len(),
        metrics.overall_success_rate
    );
    Ok(())
}

// ── Report command ─────────────────────────────────────────────────────────

/// Parse a metrics table back into records; the swept axis is read off
/// the first column.
pub fn parse_metrics_table(text: &str) -> Result<(VadAxis, Vec<MetricRecord>), CliError> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .map(|(_, l)| l)
        .ok_or_else(|| CliError::config("metrics table is empty".into()))?;
    if header != METRICS_HEADER {
        return Err(CliError::config(format!(
            "metrics table header mismatch: expected {METRICS_HEADER:?}"
        )));
    }
    let mut axis: Option<VadAxis> = None;
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let row = i + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 11 {
            return Err(CliError::config(format!(
                "metrics table row {row}: expected 11 columns, got {}",
                cols.len()
            )));
        }
        let row_axis = parse_axis(cols[0])
            .map_err(|_| CliError::config(format!("metrics table row {row}: unknown axis {:?}", cols[0])))?;
        match axis {
            None => axis = Some(row_axis),
            Some(a) if a != row_axis => {
                return Err(CliError::config(format!(
                    "metrics table row {row}: mixed axes ({} then {})",
                    a.name(),
                    row_axis.name()
                )))
            }
            _ => {}
        }
        let num = |idx: usize| -> Result<f64, CliError> {
            cols[idx].parse().map_err(|_| {
                CliError::config(format!(
                    "metrics table row {row} column {}: not a number: {:?}",
                    idx + 1,
                    cols[idx]
                ))
            })
        };
        let vad = VadVector::new(num(1)?, num(2)?, num(3)?)
            .map_err(|e| CliError::config(format!("metrics table row {row}: {e}")))?;
        let lexicon_vad = VadVector::new(num(7)?, num(8)?, num(9)?)
            .map_err(|e| CliError::config(format!("metrics table row {row}: {e}")))?;
        let n_tasks: usize = cols[10].parse().map_err(|_| {
            CliError::config(format!(
                "metrics table row {row}: n_tasks not an integer: {:?}",
                cols[10]
            ))
        })?;
        records.push(MetricRecord {
            vad,
            avr: num(4)?,
            tsr: num(5)?,
            mean_output_length: num(6)?,
            lexicon_vad,
            lexicon_matched_outputs: 0,
            n_tasks,
            outcomes: Vec::new(),
        });
    }
    let axis = axis.ok_or_else(|| CliError::config("metrics table has no rows".into()))?;
    Ok((axis, records))
}

pub fn report(config: Option<&Path>, ov: Overrides) -> Result<(), CliError> {
    let (cfg, out) = prepare(config, &ov)?;
    let mut log = InputLog::default();
    let path = require_input(&cfg.paths.table, "table")?;
    log.record(path)?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("paths.table: {e}")))?;
    let (axis, records) = parse_metrics_table(&text)?;
    let files = emit_report(&records, axis, &out).map_err(CliError::runtime_from)?;
    write_manifest(&out, "report", &cfg, log)?;
    println!(
        "wrote {} points={} charts={}",
        files.table.display(),
        records.len(),
        files.charts.len()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(axis: VadAxis, x: f64, lex: f64) -> MetricRecord {
        MetricRecord {
            vad: VadVector::NEUTRAL.with_axis(axis, x),
            avr: 0.5,
            tsr: 0.25,
            mean_output_length: 8.0,
            lexicon_vad: VadVector::NEUTRAL.with_axis(VadAxis::Valence, lex),
            lexicon_matched_outputs: 1,
            n_tasks: 4,
            outcomes: Vec::new(),
        }
    }

    #[test]
    fn metrics_table_round_trips() {
        let records = vec![
            record(VadAxis::Valence, -9.0, -2.5),
            record(VadAxis::Valence, 0.0, 0.0),
            record(VadAxis::Valence, 9.0, 3.5),
        ];
        let text = metrics_csv(&records, VadAxis::Valence);
        let (axis, parsed) = parse_metrics_table(&text).unwrap();
        assert_eq!(axis, VadAxis::Valence);
        assert_eq!(parsed.len(), 3);
        // Re-rendering the parsed rows reproduces the table byte for byte.
        assert_eq!(metrics_csv(&parsed, axis), text);
    }

    #[test]
    fn metrics_table_rejects_bad_input() {
        assert!(parse_metrics_table("").is_err());
        assert!(parse_metrics_table("nope\n").is_err());
        let text = format!("{METRICS_HEADER}\nvalence,1,2\n");
        let err = parse_metrics_table(&text).unwrap_err();
        assert!(err.to_string().contains("11 columns"), "{err}");
        let text = format!("{METRICS_HEADER}\nvibes,0,0,0,1,1,1,0,0,0,4\n");
        assert!(parse_metrics_table(&text).is_err());
        let mixed = format!(
            "{METRICS_HEADER}\nvalence,0,0,0,1,1,1,0,0,0,4\narousal,0,0,0,1,1,1,0,0,0,4\n"
        );
        let err = parse_metrics_table(&mixed).unwrap_err();
        assert!(err.to_string().contains("mixed axes"), "{err}");
    }

    #[test]
    fn agent_csv_leaves_absent_metrics_empty() {
        let m = AgentMetrics {
            plan_validity_rate: 1.0,
            replan_improvement: None,
            replan_frequency: 0.0,
            replan_trigger_confidence: None,
            rational_selection_rate: 1.0,
            execution_completion_rate: 1.0,
            overall_success_rate: 0.5,
        };
        let csv = agent_metrics_csv(&m);
        let row = csv.lines().nth(1).unwrap();
        assert_eq!(row, "1.000000,,0.000000,,1.000000,1.000000,0.500000");
    }

    #[test]
    fn lexicon_fluctuation_uses_the_shifted_scale() {
        // lex_v = −2.5, 0, 3.5 → shifted 7.5, 10, 13.5 → (13.5−7.5)/mean.
        let records = vec![
            record(VadAxis::Valence, -9.0, -2.5),
            record(VadAxis::Valence, 0.0, 0.0),
            record(VadAxis::Valence, 9.0, 3.5),
        ];
        let f = lexicon_fluctuation(&records, VadAxis::Valence).unwrap();
        let mean = (7.5 + 10.0 + 13.5) / 3.0;
        assert!((f - 6.0 / mean).abs() < 1e-12);
    }
}
