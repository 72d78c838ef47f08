//! Agent backend over the steered toy LM. The planner is a deterministic
//! template keyed on the task stem, the executor generates with the
//! steering patch installed, and executor confidence is the mean
//! per-token probability the (equally steered) model assigns to its own
//! greedy answer — the calibrated desk-scale proxy for self-reported
//! confidence.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::corpus::{decode_text, prompt_tokens};
use crate::error::{Error, Result};
use crate::eval::TaskInstance;
use crate::features::LatentFeatureSet;
use crate::lm::{DecodeParams, ToyLm};
use crate::sae::SaeModel;
use crate::steering::{make_patch, steered_generate, SteeringConfig};

use super::tools::ToolSet;
use super::{
    run_episode, AgentBackend, AgentTask, AgentTrace, Candidate, EpisodeLimits, Plan, PlanStep,
    StepResult,
};

/// Executor settings for the toy backend.
#[derive(Debug, Clone)]
pub struct ToyBackendConfig {
    pub steering: SteeringConfig,
    pub decode: DecodeParams,
    /// Independent executor runs per candidate set. Greedy decoding makes
    /// the runs identical, so duplicates collapse to one candidate.
    pub n_candidates: usize,
}

impl ToyBackendConfig {
    pub fn new(steering: SteeringConfig, decode: DecodeParams) -> Self {
        ToyBackendConfig {
            steering,
            decode,
            n_candidates: 2,
        }
    }
}

/// One episode's backend; construct a fresh one per task.
pub struct ToyAgentBackend<'a> {
    lm: &'a ToyLm,
    sae: &'a SaeModel,
    features: &'a LatentFeatureSet,
    cfg: ToyBackendConfig,
    /// (answer, confidence) per decode seed, so plan steps and candidate
    /// queries reuse one generation.
    runs: HashMap<u64, (String, f64)>,
}

impl<'a> ToyAgentBackend<'a> {
    pub fn new(
        lm: &'a ToyLm,
        sae: &'a SaeModel,
        features: &'a LatentFeatureSet,
        cfg: ToyBackendConfig,
    ) -> Self {
        ToyAgentBackend {
            lm,
            sae,
            features,
            cfg,
            runs: HashMap::new(),
        }
    }

    /// Generate under the steering patch and score the continuation: mean
    /// softmax probability of each generated token, from one patched
    /// forward over prompt + continuation.
    fn generate_scored(&self, task: &AgentTask, seed: u64) -> Result<(String, f64)> {
        let prompt = prompt_tokens(&task.prompt);
        let decode = DecodeParams {
            seed,
            ..self.cfg.decode
        };
        let continuation = steered_generate(
            self.lm,
            self.sae,
            self.features,
            &prompt,
            &self.cfg.steering,
            &decode,
        )?;
        if continuation.is_empty() {
            return Ok((String::new(), 0.0));
        }
        let mut tokens = prompt.clone();
        tokens.extend(&continuation);
        let patch = make_patch(
            std::sync::Arc::new(self.sae.clone()),
            std::sync::Arc::new(self.features.clone()),
            self.cfg.steering.clone(),
            prompt.len(),
        );
        let (logits, _) =
            self.lm
                .forward_with_tap_patched(&tokens, self.cfg.steering.block, &patch)?;
        let vocab = self.lm.config.vocab_size;
        let mut sum = 0.0f64;
        for (i, &tok) in continuation.iter().enumerate() {
            let row = prompt.len() - 1 + i;
            let slice = &logits[row * vocab..(row + 1) * vocab];
            let max = slice.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let denom: f64 = slice.iter().map(|&l| ((l - max) as f64).exp()).sum();
            sum += ((slice[tok as usize] - max) as f64).exp() / denom;
        }
        let confidence = (sum / continuation.len() as f64).clamp(0.0, 1.0);
        Ok((decode_text(&continuation).trim().to_string(), confidence))
    }

    fn run(&mut self, task: &AgentTask, seed: u64) -> Result<(String, f64)> {
        if let Some(hit) = self.runs.get(&seed) {
            return Ok(hit.clone());
        }
        let out = self.generate_scored(task, seed)?;
        self.runs.insert(seed, out.clone());
        Ok(out)
    }
}

/// Deterministic plan template for a task stem. Objective stems get a
/// calculator step, subjective ones a search step, and every plan ends
/// with an analyze step that carries the working text forward.
pub fn template_plan(task: &AgentTask, version: u32) -> Plan {
    let stem = task.prompt.split('|').next().unwrap_or("").trim();
    let words: Vec<&str> = stem.split_whitespace().collect();
    let ints: Vec<i64> = words
        .iter()
        .filter_map(|w| w.parse().ok())
        .collect();
    let steps = match words.first().copied() {
        Some("sum") if ints.len() >= 2 => vec![
            PlanStep {
                tool: "calc".into(),
                args: format!("({} + {}) % 10", ints[0], ints[1]),
            },
            PlanStep {
                tool: "analyze".into(),
                args: "answer with the single digit".into(),
            },
        ],
        Some("next") if !ints.is_empty() => vec![
            PlanStep {
                tool: "calc".into(),
                args: format!("({} + 1) % 10", ints[0]),
            },
            PlanStep {
                tool: "analyze".into(),
                args: "answer with the single digit".into(),
            },
        ],
        Some("mood") => vec![
            PlanStep {
                tool: "search".into(),
                args: stem.to_string(),
            },
            PlanStep {
                tool: "analyze".into(),
                args: "compose three expressive words".into(),
            },
        ],
        Some("risk") => vec![PlanStep {
            tool: "analyze".into(),
            args: "apply the refusal policy".into(),
        }],
        _ => vec![PlanStep {
            tool: "analyze".into(),
            args: stem.to_string(),
        }],
    };
    Plan {
        steps,
        rationale: format!("template plan for {stem:?} (revision {version})"),
        version,
    }
}

impl AgentBackend for ToyAgentBackend<'_> {
    fn plan(&mut self, task: &AgentTask, version: u32) -> Result<Plan> {
        Ok(template_plan(task, version))
    }

    fn execute(
        &mut self,
        task: &AgentTask,
        _step: &PlanStep,
        step_index: usize,
        tool_output: &str,
    ) -> Result<StepResult> {
        let (_, confidence) = self.run(task, self.cfg.decode.seed)?;
        Ok(StepResult {
            step_index,
            output: tool_output.to_string(),
            completed: true,
            confidence,
        })
    }

    fn candidates(&mut self, task: &AgentTask, _results: &[StepResult]) -> Result<Vec<Candidate>> {
        if self.cfg.n_candidates == 0 {
            return Err(Error::InvalidConfig("n_candidates must be >= 1".into()));
        }
        let mut out: Vec<Candidate> = Vec::new();
        for i in 0..self.cfg.n_candidates {
            let (answer, confidence) = self.run(task, self.cfg.decode.seed.wrapping_add(i as u64))?;
            if !out.iter().any(|c| c.answer == answer) {
                out.push(Candidate { answer, confidence });
            }
        }
        Ok(out)
    }

    fn choose(&mut self, candidates: &[Candidate]) -> Result<usize> {
        // Rational policy: highest confidence, first on ties.
        let mut best = 0;
        for (i, c) in candidates.iter().enumerate() {
            if c.confidence > candidates[best].confidence {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Convert evaluation tasks into agent tasks.
pub fn agent_tasks(tasks: &[TaskInstance]) -> Vec<AgentTask> {
    tasks
        .iter()
        .map(|t| AgentTask {
            id: t.id.clone(),
            prompt: t.prompt.clone(),
            gold: t.gold.clone(),
            kind: t.category,
        })
        .collect()
}

/// Run one episode per task; episodes execute in parallel and the traces
/// come back in task order.
pub fn run_toy_agent(
    lm: &ToyLm,
    sae: &SaeModel,
    features: &LatentFeatureSet,
    cfg: &ToyBackendConfig,
    tools: &ToolSet,
    tasks: &[AgentTask],
    limits: &EpisodeLimits,
) -> Result<Vec<AgentTrace>> {
    if tasks.is_empty() {
        return Err(Error::EmptyInput("agent tasks"));
    }
    limits.validate()?;
    Ok(tasks
        .par_iter()
        .map(|task| {
            let mut backend = ToyAgentBackend::new(lm, sae, features, cfg.clone());
            run_episode(&mut backend, tools, task, limits)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::tools::builtin_toolset;
    use crate::agent::validate_plan;
    use crate::corpus::TaskKind;
    use crate::eval::standard_tasks;
    use crate::features::{AxisFeatures, FeatureProvenance, FEATURE_SET_VERSION};
    use crate::lm::ToyLmConfig;
    use crate::tensor::{self, seeded_rng};
    use crate::vad::{DeltaCalibration, VadAxis};

    fn fixture() -> (ToyLm, SaeModel, LatentFeatureSet) {
        let lm = ToyLm::new(ToyLmConfig {
            d_model: 16,
            n_blocks: 4,
            n_heads: 2,
            seed: 41,
            ..ToyLmConfig::default()
        })
        .unwrap();
        let mut rng = seeded_rng(42);
        let d = 16;
        let latent = 32;
        let mut sae = SaeModel {
            encoder_weights: tensor::normal_vec(&mut rng, latent * d, 0.3),
            encoder_bias: tensor::normal_vec(&mut rng, latent, 0.1),
            decoder_weights: tensor::normal_vec(&mut rng, d * latent, 1.0),
            decoder_bias: tensor::normal_vec(&mut rng, d, 0.2),
            latent_dim: latent,
            d_model: d,
            attached_block: 3,
        };
        let norms = sae.column_norms();
        for i in 0..d {
            for j in 0..latent {
                sae.decoder_weights[i * latent + j] /= norms[j];
            }
        }
        let prov = FeatureProvenance {
            n_pairs: 1,
            top_n: 50,
            stability_min: 0.6,
            seed: 0,
            sae_checksum: String::new(),
        };
        let axis = |axis, idx: Vec<usize>| AxisFeatures {
            axis,
            weights: vec![1.0 / idx.len() as f64; idx.len()],
            neuron_indices: idx,
            provenance: prov.clone(),
        };
        let features = LatentFeatureSet {
            format_version: FEATURE_SET_VERSION,
            latent_dim: latent,
            block: 3,
            calib: DeltaCalibration {
                delta_max: [2.0, 2.0, 2.0],
            },
            valence: axis(VadAxis::Valence, vec![1, 4]),
            arousal: axis(VadAxis::Arousal, vec![9]),
            dominance: axis(VadAxis::Dominance, vec![20, 21]),
        };
        (lm, sae, features)
    }

    fn cfg(features: &LatentFeatureSet) -> ToyBackendConfig {
        ToyBackendConfig::new(
            SteeringConfig {
                calib: features.calib,
                ..SteeringConfig::default()
            },
            DecodeParams {
                max_new_tokens: 6,
                ..DecodeParams::default()
            },
        )
    }

    #[test]
    fn template_plans_validate_for_every_task_shape() {
        let tools = builtin_toolset();
        for t in agent_tasks(&standard_tasks(6, 4, 3)) {
            let plan = template_plan(&t, 1);
            validate_plan(&plan, &tools, 8).unwrap();
            assert!(!plan.steps.is_empty());
        }
        // The calc arguments actually compute the objective gold.
        let sum = AgentTask {
            id: "x".into(),
            prompt: "sum 9 3 | answer:".into(),
            gold: Some("2".into()),
            kind: TaskKind::Objective,
        };
        let plan = template_plan(&sum, 1);
        assert_eq!(plan.steps[0].args, "(9 + 3) % 10");
        assert_eq!(tools.get("calc").unwrap().run(&plan.steps[0].args).unwrap(), "2");
    }

    #[test]
    fn episodes_are_deterministic_and_ordered() {
        let (lm, sae, features) = fixture();
        let tools = builtin_toolset();
        let tasks = agent_tasks(&standard_tasks(2, 1, 1));
        let limits = EpisodeLimits::default();
        let a = run_toy_agent(&lm, &sae, &features, &cfg(&features), &tools, &tasks, &limits)
            .unwrap();
        let b = run_toy_agent(&lm, &sae, &features, &cfg(&features), &tools, &tasks, &limits)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        for (trace, task) in a.iter().zip(&tasks) {
            assert_eq!(trace.task_id, task.id);
            trace.validate().unwrap();
            for e in &trace.executions {
                for s in &e.steps {
                    assert!((0.0..=1.0).contains(&s.confidence));
                }
            }
        }
    }

    #[test]
    fn greedy_candidates_collapse_to_one() {
        let (lm, sae, features) = fixture();
        let mut backend = ToyAgentBackend::new(&lm, &sae, &features, cfg(&features));
        let task = agent_tasks(&standard_tasks(1, 0, 0)).remove(0);
        let cands = backend.candidates(&task, &[]).unwrap();
        assert_eq!(cands.len(), 1, "{cands:?}");
    }

    #[test]
    fn sampling_can_produce_distinct_candidates() {
        let (lm, sae, features) = fixture();
        let mut c = cfg(&features);
        c.decode.sampling = true;
        c.decode.temperature = 2.0;
        c.n_candidates = 4;
        let mut backend = ToyAgentBackend::new(&lm, &sae, &features, c);
        let task = agent_tasks(&standard_tasks(0, 1, 0)).remove(0);
        let cands = backend.candidates(&task, &[]).unwrap();
        assert!(!cands.is_empty());
        // The rational chooser picks a maximal-confidence candidate.
        let pick = backend.choose(&cands).unwrap();
        let max = cands.iter().map(|c| c.confidence).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(cands[pick].confidence, max);
    }
}
