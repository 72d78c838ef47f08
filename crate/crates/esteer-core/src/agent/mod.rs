//! Planner–decider–executor agent harness.
//!
//! One episode: the backend proposes a plan, the decider validates it
//! against the toolset (accept or request another), accepted plans are
//! executed step by step with per-step confidence, low mean confidence can
//! trigger replanning, and the decider finally picks among candidate
//! answers. Traces record every event in order; seven metrics summarize a
//! trace set.

pub mod remote;
pub mod scripted;
pub mod tools;
pub mod toy;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::TaskKind;
use crate::error::{Error, Result};
use tools::ToolSet;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// One plan step: a tool id plus free-text arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub tool: String,
    pub args: String,
}

/// A numbered plan revision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
    pub rationale: String,
    /// Revision counter, starting at 1.
    pub version: u32,
}

/// Outcome of executing one plan step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub step_index: usize,
    pub output: String,
    pub completed: bool,
    /// Executor-reported confidence in [0, 1].
    pub confidence: f64,
}

/// All step results produced under one plan revision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanExecution {
    pub plan_version: u32,
    pub steps: Vec<StepResult>,
}

impl PlanExecution {
    /// Mean executor confidence of this execution (0 when nothing ran).
    pub fn mean_confidence(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.confidence).sum::<f64>() / self.steps.len() as f64
    }
}

/// A candidate final answer with the executor's confidence in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub answer: String,
    pub confidence: f64,
}

/// One decider event. A replan request is recorded only when it will
/// actually be honored, so the number of requests always equals the
/// number of extra plan revisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Decision {
    AcceptPlan,
    RequestReplan {
        /// Mean executor confidence that triggered the request; 0.0 when
        /// the plan failed validation and nothing could execute.
        trigger_confidence: f64,
    },
    SelectAnswer { chosen_candidate: usize },
}

/// What the agent is asked to do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTask {
    pub id: String,
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gold: Option<String>,
    pub kind: TaskKind,
}

impl AgentTask {
    /// Success rule per task kind: objective answers must equal gold
    /// (case-insensitive), safety proxies must contain the gold marker,
    /// and gold-less tasks succeed with any non-empty answer.
    pub fn answer_succeeds(&self, answer: &str) -> bool {
        match (&self.gold, self.kind) {
            (Some(gold), TaskKind::SafetyProxy) => {
                answer.to_lowercase().contains(&gold.to_lowercase())
            }
            (Some(gold), _) => answer.trim().eq_ignore_ascii_case(gold),
            (None, _) => !answer.trim().is_empty(),
        }
    }
}

/// Full record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrace {
    pub schema_version: u32,
    pub task_id: String,
    pub plans: Vec<Plan>,
    pub decisions: Vec<Decision>,
    pub executions: Vec<PlanExecution>,
    pub candidates: Vec<Candidate>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_answer: Option<String>,
    pub success: bool,
    pub replan_count: usize,
    /// Set when the episode aborted (backend failure or limit exhaustion).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
}

impl AgentTrace {
    fn new(task_id: &str) -> Self {
        AgentTrace {
            schema_version: TRACE_SCHEMA_VERSION,
            task_id: task_id.to_string(),
            plans: Vec::new(),
            decisions: Vec::new(),
            executions: Vec::new(),
            candidates: Vec::new(),
            final_answer: None,
            success: false,
            replan_count: 0,
            failure: None,
        }
    }

    /// Structural invariants every orchestrator-produced trace satisfies.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != TRACE_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "trace schema {} unsupported (expected {TRACE_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for (i, p) in self.plans.iter().enumerate() {
            if p.version != i as u32 + 1 {
                return Err(Error::Config(format!(
                    "plan versions not consecutive from 1: slot {i} holds v{}",
                    p.version
                )));
            }
        }
        if !self.plans.is_empty() && self.replan_count != self.plans.len() - 1 {
            return Err(Error::Config(format!(
                "replan_count {} != plans − 1 = {}",
                self.replan_count,
                self.plans.len() - 1
            )));
        }
        let requests = self
            .decisions
            .iter()
            .filter(|d| matches!(d, Decision::RequestReplan { .. }))
            .count();
        if requests != self.replan_count {
            return Err(Error::Config(format!(
                "{} replan requests but replan_count {}",
                requests, self.replan_count
            )));
        }
        for e in &self.executions {
            for s in &e.steps {
                if !(0.0..=1.0).contains(&s.confidence) {
                    return Err(Error::Config(format!(
                        "step confidence {} outside [0,1]",
                        s.confidence
                    )));
                }
            }
        }
        Ok(())
    }

    /// Mean step confidence under one plan version; 0 when that version
    /// never executed (an unexecutable plan has no execution confidence).
    pub fn version_confidence(&self, version: u32) -> f64 {
        self.executions
            .iter()
            .find(|e| e.plan_version == version)
            .map(|e| e.mean_confidence())
            .unwrap_or(0.0)
    }
}

/// What a language backend must provide; the orchestrator owns validation,
/// tool execution, the replan policy, and the trace.
pub trait AgentBackend {
    /// Propose plan revision `version` (1-based) for the task.
    fn plan(&mut self, task: &AgentTask, version: u32) -> Result<Plan>;

    /// Turn one step's tool output into a step result with confidence.
    fn execute(
        &mut self,
        task: &AgentTask,
        step: &PlanStep,
        step_index: usize,
        tool_output: &str,
    ) -> Result<StepResult>;

    /// Candidate final answers after execution finished.
    fn candidates(&mut self, task: &AgentTask, results: &[StepResult]) -> Result<Vec<Candidate>>;

    /// The decider's pick among the candidates.
    fn choose(&mut self, candidates: &[Candidate]) -> Result<usize>;
}

/// Orchestration policy knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeLimits {
    pub max_replans: usize,
    /// Maximum steps a single plan may carry; longer plans fail validation.
    pub max_steps: usize,
    /// Mean executor confidence below this requests a replan.
    pub replan_threshold: f64,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        EpisodeLimits {
            max_replans: 2,
            max_steps: 8,
            replan_threshold: 0.5,
        }
    }
}

impl EpisodeLimits {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.replan_threshold) {
            return Err(Error::InvalidConfig(format!(
                "replan_threshold {} outside [0,1]",
                self.replan_threshold
            )));
        }
        Ok(())
    }
}

/// Why a plan failed validation, or Ok if it is executable.
pub fn validate_plan(plan: &Plan, tools: &ToolSet, max_steps: usize) -> Result<()> {
    if plan.steps.is_empty() {
        return Err(Error::InvalidConfig("plan has no steps".into()));
    }
    if plan.steps.len() > max_steps {
        return Err(Error::InvalidConfig(format!(
            "plan has {} steps, limit {max_steps}",
            plan.steps.len()
        )));
    }
    for (i, step) in plan.steps.iter().enumerate() {
        let Some(tool) = tools.get(&step.tool) else {
            return Err(Error::InvalidConfig(format!(
                "step {i}: unregistered tool {:?}",
                step.tool
            )));
        };
        tool.parse_args(&step.args).map_err(|e| {
            Error::InvalidConfig(format!("step {i}: arguments rejected: {e}"))
        })?;
    }
    Ok(())
}

/// Run one episode. Backend failures and limit exhaustion are recorded in
/// the trace (with `failure` set), never thrown, so a sweep over many
/// episodes always yields a full trace set.
pub fn run_episode(
    backend: &mut dyn AgentBackend,
    tools: &ToolSet,
    task: &AgentTask,
    limits: &EpisodeLimits,
) -> AgentTrace {
    let mut trace = AgentTrace::new(&task.id);
    if let Err(e) = limits.validate() {
        trace.failure = Some(format!("limits: {e}"));
        return trace;
    }
    let mut version: u32 = 1;
    loop {
        let replans_used = version as usize - 1;
        let plan = match backend.plan(task, version) {
            Ok(mut p) => {
                p.version = version;
                p
            }
            Err(e) => {
                trace.failure = Some(format!("backend: {e}"));
                trace.replan_count = trace.plans.len().saturating_sub(1);
                return trace;
            }
        };
        trace.plans.push(plan.clone());
        if let Err(reason) = validate_plan(&plan, tools, limits.max_steps) {
            if replans_used < limits.max_replans {
                trace.decisions.push(Decision::RequestReplan {
                    trigger_confidence: 0.0,
                });
                version += 1;
                continue;
            }
            trace.failure = Some(format!("limit-exceeded: max_replans ({reason})"));
            trace.replan_count = trace.plans.len() - 1;
            return trace;
        }
        trace.decisions.push(Decision::AcceptPlan);

        let mut steps = Vec::with_capacity(plan.steps.len());
        let mut backend_err = None;
        for (i, step) in plan.steps.iter().enumerate() {
            let tool = tools.get(&step.tool).expect("validated above");
            let tool_output = match tool.run(&step.args) {
                Ok(o) => o,
                Err(e) => {
                    // Tool runtime failure: the step is incomplete; the
                    // executor is not consulted.
                    steps.push(StepResult {
                        step_index: i,
                        output: format!("tool error: {e}"),
                        completed: false,
                        confidence: 0.0,
                    });
                    continue;
                }
            };
            match backend.execute(task, step, i, &tool_output) {
                Ok(r) => steps.push(r),
                Err(e) => {
                    backend_err = Some(e);
                    break;
                }
            }
        }
        trace.executions.push(PlanExecution {
            plan_version: version,
            steps,
        });
        if let Some(e) = backend_err {
            trace.failure = Some(format!("backend: {e}"));
            trace.replan_count = trace.plans.len() - 1;
            return trace;
        }
        let mean = trace.executions.last().unwrap().mean_confidence();
        if mean < limits.replan_threshold && replans_used < limits.max_replans {
            trace.decisions.push(Decision::RequestReplan {
                trigger_confidence: mean,
            });
            version += 1;
            continue;
        }
        // Low confidence with no replan budget left proceeds to selection
        // on a best-effort basis.
        break;
    }
    trace.replan_count = trace.plans.len() - 1;

    let last_steps = trace.executions.last().map(|e| e.steps.clone()).unwrap_or_default();
    let candidates = match backend.candidates(task, &last_steps) {
        Ok(c) if !c.is_empty() => c,
        Ok(_) => {
            trace.failure = Some("backend: produced no candidates".to_string());
            return trace;
        }
        Err(e) => {
            trace.failure = Some(format!("backend: {e}"));
            return trace;
        }
    };
    trace.candidates = candidates.clone();
    let choice = match backend.choose(&candidates) {
        Ok(c) if c < candidates.len() => c,
        Ok(c) => {
            trace.failure = Some(format!(
                "backend: chose candidate {c} of {}",
                candidates.len()
            ));
            return trace;
        }
        Err(e) => {
            trace.failure = Some(format!("backend: {e}"));
            return trace;
        }
    };
    trace.decisions.push(Decision::SelectAnswer {
        chosen_candidate: choice,
    });
    let answer = candidates[choice].answer.clone();
    trace.success = task.answer_succeeds(&answer);
    trace.final_answer = Some(answer);
    trace
}

/// The seven trace-set metrics. Sub-metrics that are undefined on the
/// input (no replans anywhere) are reported as `None`, never as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    /// Plans that passed validation / all proposed plans.
    pub plan_validity_rate: f64,
    /// Mean over replanned episodes of (mean executor confidence under the
    /// final plan − under plan 1); an unexecuted version counts as 0.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub replan_improvement: Option<f64>,
    /// Episodes with ≥ 1 replan / all episodes.
    pub replan_frequency: f64,
    /// Mean trigger confidence over all replan requests.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub replan_trigger_confidence: Option<f64>,
    /// Selections whose chosen candidate had maximal confidence (ties
    /// count as rational) / all selections.
    pub rational_selection_rate: f64,
    /// Completed steps / steps planned in executed plan versions.
    pub execution_completion_rate: f64,
    /// Successful episodes / all episodes.
    pub overall_success_rate: f64,
}

pub fn compute_agent_metrics(traces: &[AgentTrace]) -> Result<AgentMetrics> {
    if traces.is_empty() {
        return Err(Error::EmptyTraces);
    }
    for t in traces {
        t.validate()?;
    }

    let mut plans_total = 0usize;
    let mut plans_valid = 0usize;
    let mut replanned_episodes = 0usize;
    let mut improvement_sum = 0.0f64;
    let mut trigger_sum = 0.0f64;
    let mut trigger_count = 0usize;
    let mut selections = 0usize;
    let mut rational = 0usize;
    let mut steps_planned = 0usize;
    let mut steps_completed = 0usize;
    let mut successes = 0usize;

    for t in traces {
        plans_total += t.plans.len();
        for d in &t.decisions {
            match d {
                Decision::AcceptPlan => plans_valid += 1,
                Decision::RequestReplan { trigger_confidence } => {
                    trigger_sum += trigger_confidence;
                    trigger_count += 1;
                }
                Decision::SelectAnswer { chosen_candidate } => {
                    selections += 1;
                    let max = t
                        .candidates
                        .iter()
                        .map(|c| c.confidence)
                        .fold(f64::NEG_INFINITY, f64::max);
                    if t.candidates[*chosen_candidate].confidence >= max {
                        rational += 1;
                    }
                }
            }
        }
        if t.replan_count > 0 {
            replanned_episodes += 1;
            let first = t.version_confidence(1);
            let last = t.version_confidence(t.plans.len() as u32);
            improvement_sum += last - first;
        }
        for e in &t.executions {
            let plan = &t.plans[e.plan_version as usize - 1];
            steps_planned += plan.steps.len();
            steps_completed += e.steps.iter().filter(|s| s.completed).count();
        }
        if t.success {
            successes += 1;
        }
    }

    let n = traces.len() as f64;
    let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(AgentMetrics {
        plan_validity_rate: frac(plans_valid, plans_total),
        replan_improvement: (replanned_episodes > 0)
            .then(|| improvement_sum / replanned_episodes as f64),
        replan_frequency: replanned_episodes as f64 / n,
        replan_trigger_confidence: (trigger_count > 0)
            .then(|| trigger_sum / trigger_count as f64),
        rational_selection_rate: frac(rational, selections),
        execution_completion_rate: frac(steps_completed, steps_planned),
        overall_success_rate: successes as f64 / n,
    })
}

/// Write one schema-versioned TOML file per episode under `dir/traces/`.
pub fn save_traces(traces: &[AgentTrace], dir: &Path) -> Result<Vec<PathBuf>> {
    let traces_dir = dir.join("traces");
    std::fs::create_dir_all(&traces_dir)
        .map_err(|e| Error::io(traces_dir.display().to_string(), e))?;
    let mut paths = Vec::with_capacity(traces.len());
    for t in traces {
        let body = toml::to_string_pretty(t)
            .map_err(|e| Error::Config(format!("trace serialization: {e}")))?;
        let path = traces_dir.join(format!("{}.toml", t.task_id));
        std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn load_trace(path: &Path) -> Result<AgentTrace> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let trace: AgentTrace =
        toml::from_str(&body).map_err(|e| Error::Config(format!("trace parse: {e}")))?;
    trace.validate()?;
    Ok(trace)
}
