//! End-to-end tests against the built `esteer` binary. A small trained
//! artifact stack is built once per test binary (cached on disk across
//! runs) and shared; the full train→extract chain additionally runs
//! through the CLI itself in its own sandbox.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use esteer_core::corpus::CorpusSpec;
use esteer_core::lm::ToyLmConfig;
use esteer_core::pipeline::{build_pipeline, default_cache_dir, PipelineConfig};
use esteer_core::sae::SaeTrainConfig;
use esteer_core::vad::builtin_label_table;

fn esteer() -> Command {
    Command::new(env!("CARGO_BIN_EXE_esteer"))
}

fn run(args: &[&str]) -> Output {
    esteer().args(args).output().expect("spawn esteer")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small but real: enough training for the mechanics, cheap enough for CI.
fn tiny_pipeline() -> PipelineConfig {
    PipelineConfig {
        corpus: CorpusSpec {
            n_objective: 6,
            n_subjective: 4,
            n_safety: 3,
            ..CorpusSpec::default()
        },
        lm: ToyLmConfig {
            d_model: 16,
            n_blocks: 4,
            n_heads: 2,
            seed: 5,
            ..ToyLmConfig::default()
        },
        lm_steps: 40,
        block: 3,
        sae: SaeTrainConfig {
            steps: 50,
            batch_size: 32,
            l1_coefficient: 0.05,
            latent_factor: 2,
            dead_neuron_patience: 100_000,
            ..SaeTrainConfig::default()
        },
        n_pairs: 6,
        max_calibration_prompts: 24,
        ..PipelineConfig::default()
    }
}

struct Fixture {
    /// Holds artifact files plus the base config for their lifetime.
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Fixture {
    fn shared() -> &'static Fixture {
        static FIXTURE: OnceLock<Fixture> = OnceLock::new();
        FIXTURE.get_or_init(|| {
            let dir = tempfile::tempdir().expect("fixture dir");
            let pipeline = tiny_pipeline();
            let table = builtin_label_table();
            let arts = build_pipeline(&pipeline, &table, Some(&default_cache_dir()))
                .expect("build fixture artifacts");
            let lm = dir.path().join("lm.estr");
            let sae = dir.path().join("sae.estr");
            let features = dir.path().join("features.toml");
            arts.lm.save(&lm).unwrap();
            arts.sae.save(&sae).unwrap();
            arts.features.save(&features).unwrap();
            let config = dir.path().join("base.toml");
            std::fs::write(&config, base_config(&pipeline, dir.path())).unwrap();
            Fixture { dir, config }
        })
    }

    fn config(&self) -> &str {
        self.config.to_str().unwrap()
    }
}

fn base_config(pipeline: &PipelineConfig, dir: &Path) -> String {
    format!(
        r#"[paths]
lm = "{lm}"
sae = "{sae}"
features = "{features}"
out_dir = "{out}"

[sweep]
grid = [-6.0, 0.0, 6.0]
n_objective = 2
n_subjective = 2
n_safety = 1

[decode]
max_new_tokens = 8

[pipeline]
{pipeline}"#,
        lm = dir.join("lm.estr").display(),
        sae = dir.join("sae.estr").display(),
        features = dir.join("features.toml").display(),
        out = dir.join("out").display(),
        pipeline = toml::to_string(pipeline)
            .unwrap()
            .lines()
            .map(|l| {
                if l.starts_with('[') {
                    format!("[pipeline.{}", &l[1..])
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    )
}

#[test]
fn missing_sae_path_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.toml");
    std::fs::write(&config, "[paths]\nlm = \"nowhere.estr\"\n").unwrap();
    let out = run(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "expected one line: {err:?}");
    assert!(err.contains("config-error"), "{err}");
    // The lm path is checked first and is also missing from disk.
    assert!(err.contains("paths.lm"), "{err}");

    // With the lm present but sae unset, the message names paths.sae.
    let fx = Fixture::shared();
    let base = std::fs::read_to_string(&fx.config).unwrap();
    let no_sae = base
        .lines()
        .filter(|l| !l.starts_with("sae"))
        .collect::<Vec<_>>()
        .join("\n");
    let config = dir.path().join("no_sae.toml");
    std::fs::write(&config, no_sae).unwrap();
    let out = run(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("out2").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("paths.sae"), "{}", stderr(&out));
}

#[test]
fn unknown_axis_exits_2() {
    let fx = Fixture::shared();
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "sweep",
        "--config",
        fx.config(),
        "--axis",
        "vibes",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown axis"), "{}", stderr(&out));
}

#[test]
fn neutral_steer_generate_matches_generate() {
    let fx = Fixture::shared();
    let dir = tempfile::tempdir().unwrap();
    let prompt = "sum 3 4 | answer:";
    let plain = run(&[
        "generate",
        "--config",
        fx.config(),
        "--prompt",
        prompt,
        "--out",
        dir.path().join("a").to_str().unwrap(),
    ]);
    assert!(plain.status.success(), "stderr: {}", stderr(&plain));
    let steered = run(&[
        "steer-generate",
        "--config",
        fx.config(),
        "--prompt",
        prompt,
        "--vad",
        "0,0,0",
        "--out",
        dir.path().join("b").to_str().unwrap(),
    ]);
    assert!(steered.status.success(), "stderr: {}", stderr(&steered));
    assert_eq!(stdout(&plain), stdout(&steered));

    // A strong valence target goes down the real steering path; stdout
    // stays well-formed either way.
    let pushed = run(&[
        "steer-generate",
        "--config",
        fx.config(),
        "--prompt",
        prompt,
        "--vad",
        "9,0,0",
        "--alpha",
        "8",
        "--out",
        dir.path().join("c").to_str().unwrap(),
    ]);
    assert!(pushed.status.success(), "stderr: {}", stderr(&pushed));
}

#[test]
fn sweep_writes_report_and_reruns_byte_identical() {
    let fx = Fixture::shared();
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let res = run(&[
            "sweep",
            "--config",
            fx.config(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success(), "stderr: {}", stderr(&res));
    }
    // The manifest echoes the resolved out_dir, so it differs across out
    // dirs by construction; every result file must be byte-identical.
    assert!(out_a.join("manifest.toml").exists());
    for name in ["metrics.csv", "avr.svg", "tsr.svg", "mean_len.svg", "lex_v.svg", "manifest.json"] {
        assert!(out_a.join(name).exists(), "missing {name}");
        assert_eq!(
            std::fs::read(out_a.join(name)).unwrap(),
            std::fs::read(out_b.join(name)).unwrap(),
            "{name} differs between reruns"
        );
    }
    let table = std::fs::read_to_string(out_a.join("metrics.csv")).unwrap();
    assert!(table.starts_with("axis,e_v,e_a,e_d,avr,tsr,mean_len,lex_v,lex_a,lex_d,n_tasks\n"));
    assert_eq!(table.lines().count(), 4, "header + 3 grid points");

    // Feeding the manifest back as the config reproduces the table.
    let out_c = dir.path().join("c");
    let res = run(&[
        "sweep",
        "--config",
        out_a.join("manifest.toml").to_str().unwrap(),
        "--out",
        out_c.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "stderr: {}", stderr(&res));
    assert_eq!(
        std::fs::read(out_a.join("metrics.csv")).unwrap(),
        std::fs::read(out_c.join("metrics.csv")).unwrap()
    );
}

#[test]
fn report_reproduces_the_metrics_table() {
    let fx = Fixture::shared();
    let dir = tempfile::tempdir().unwrap();
    let sweep_out = dir.path().join("sweep");
    let res = run(&[
        "sweep",
        "--config",
        fx.config(),
        "--out",
        sweep_out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "stderr: {}", stderr(&res));
    let report_out = dir.path().join("report");
    let res = run(&[
        "report",
        "--table",
        sweep_out.join("metrics.csv").to_str().unwrap(),
        "--out",
        report_out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "stderr: {}", stderr(&res));
    assert_eq!(
        std::fs::read(sweep_out.join("metrics.csv")).unwrap(),
        std::fs::read(report_out.join("metrics.csv")).unwrap()
    );
    assert!(report_out.join("avr.svg").exists());
}

#[test]
fn validate_latents_random_mode_writes_summary() {
    let fx = Fixture::shared();
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let res = run(&[
        "validate-latents",
        "--config",
        fx.config(),
        "--mode",
        "random",
        "--seed",
        "11",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "stderr: {}", stderr(&res));
    let line = stdout(&res);
    assert!(line.starts_with("mode=random axis=valence"), "{line}");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("ablation.json")).unwrap())
            .unwrap();
    assert_eq!(summary["mode"], "random");
    assert_eq!(summary["seed"], 11);
    assert!(out_dir.join("metrics.csv").exists());

    let bad = run(&["validate-latents", "--config", fx.config(), "--mode", "nope"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn agent_run_scripted_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let res = run(&["agent-run", "--out", out.to_str().unwrap()]);
        assert!(res.status.success(), "stderr: {}", stderr(&res));
    }
    assert!(out_a.join("manifest.toml").exists());
    for name in ["agent_metrics.json", "agent_metrics.csv"] {
        assert_eq!(
            std::fs::read(out_a.join(name)).unwrap(),
            std::fs::read(out_b.join(name)).unwrap(),
            "{name} differs between reruns"
        );
    }
    let traces: Vec<_> = std::fs::read_dir(out_a.join("traces")).unwrap().collect();
    assert_eq!(traces.len(), 10);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("agent_metrics.json")).unwrap())
            .unwrap();
    assert!((metrics["overall_success_rate"].as_f64().unwrap() - 0.6).abs() < 1e-12);
}

#[test]
fn agent_run_toy_backend_runs_clean() {
    let fx = Fixture::shared();
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let res = run(&[
        "agent-run",
        "--config",
        fx.config(),
        "--backend",
        "toy",
        "--vad",
        "6,0,0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "stderr: {}", stderr(&res));
    let traces: Vec<_> = std::fs::read_dir(out_dir.join("traces")).unwrap().collect();
    assert_eq!(traces.len(), 10, "4 + 3 + 3 default agent tasks");

    let unknown = run(&[
        "agent-run",
        "--backend",
        "martian",
        "--out",
        dir.path().join("bad").to_str().unwrap(),
    ]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(stderr(&unknown).contains("unknown agent backend"));
}

#[test]
fn train_chain_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("chain");
    let mut pipeline = tiny_pipeline();
    pipeline.lm_steps = 30;
    pipeline.sae.steps = 40;
    // A fresh seed keeps this run out of the shared fixture's cache slots.
    pipeline.lm.seed = 91;
    let config = dir.path().join("chain.toml");
    std::fs::write(
        &config,
        format!(
            "[paths]\nlm = \"{lm}\"\nactivations = \"{acts}\"\nsae = \"{sae}\"\nout_dir = \"{out}\"\n\n[exec]\ncache = false\n\n[pipeline]\n{pipe}",
            lm = out.join("lm.estr").display(),
            acts = out.join("activations.estr").display(),
            sae = out.join("sae.estr").display(),
            out = out.display(),
            pipe = toml::to_string(&pipeline)
                .unwrap()
                .lines()
                .map(|l| if l.starts_with('[') {
                    format!("[pipeline.{}", &l[1..])
                } else {
                    l.to_string()
                })
                .collect::<Vec<_>>()
                .join("\n")
        ),
    )
    .unwrap();
    let cfg = config.to_str().unwrap();

    let res = run(&["train-lm", "--config", cfg]);
    assert!(res.status.success(), "train-lm: {}", stderr(&res));
    assert!(out.join("lm.estr").exists());

    let res = run(&["dump-activations", "--config", cfg]);
    assert!(res.status.success(), "dump-activations: {}", stderr(&res));
    assert!(out.join("activations.estr").exists());

    let res = run(&["train-sae", "--config", cfg]);
    assert!(res.status.success(), "train-sae: {}", stderr(&res));
    assert!(out.join("sae.estr").exists());
    assert!(stdout(&res).contains("ev="), "{}", stdout(&res));

    let res = run(&["extract-features", "--config", cfg]);
    assert!(res.status.success(), "extract-features: {}", stderr(&res));
    let features =
        esteer_core::LatentFeatureSet::load(&out.join("features.toml")).expect("features load");
    features.validate().expect("features validate");
    assert_eq!(features.latent_dim, 32);
}
