//! The propose → evaluate → feed back cycle.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{evaluate, ConstraintReport, Defect, SolutionScore};
use crate::fem::{analyze, SolutionMetrics};
use crate::format::nodes_literal;
use crate::model::{total_mass, ProblemSpec, Task, TrussDesign};
use crate::parser::{parse_response, ParseError, ParseErrorKind};
use crate::prompt::{
    render_feedback_with, render_initial_with, PromptError, RenderContext, TemplateSet,
    DEFAULT_EXAMPLE_MEMBERS,
};
use crate::proposer::{
    InFlightLimiter, Proposer, ProposerConfig, ProposerError, ProposerRequest, Role,
    TranscriptEntry, TranscriptSink, Turn,
};
use crate::validate::{validate_design, ValidationReport, Violation};

/// Version of the [`RunResult`] JSON layout.
pub const RUN_SCHEMA_VERSION: u32 = 1;

/// Which constraints the prompts emphasise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Every constraint at once.
    Full,
    /// Two-phase runs before the mass cap is first met.
    MassFirst,
    /// Two-phase runs after the mass cap has been met.
    RatioFocus,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhasePolicy {
    #[default]
    SinglePhase,
    MassFirstThenRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseState {
    pub phase: Phase,
    /// Phase B is active and the latest score broke the mass cap again.
    pub mass_regressed: bool,
    /// The phase changed on this observation.
    pub transitioned: bool,
}

/// One-way phase schedule for stress-to-weight runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseController {
    policy: PhasePolicy,
    state: PhaseState,
}

impl PhaseController {
    pub fn new(policy: PhasePolicy) -> Self {
        let phase = match policy {
            PhasePolicy::SinglePhase => Phase::Full,
            PhasePolicy::MassFirstThenRatio => Phase::MassFirst,
        };
        Self {
            policy,
            state: PhaseState {
                phase,
                mass_regressed: false,
                transitioned: false,
            },
        }
    }

    pub fn state(&self) -> PhaseState {
        self.state
    }

    pub fn observe(&mut self, report: &ConstraintReport) -> PhaseState {
        self.state.transitioned = false;
        if self.policy == PhasePolicy::SinglePhase {
            return self.state;
        }
        match self.state.phase {
            Phase::MassFirst if report.mass_ok => {
                self.state.phase = Phase::RatioFocus;
                self.state.transitioned = true;
                self.state.mass_regressed = false;
            }
            Phase::RatioFocus => self.state.mass_regressed = !report.mass_ok,
            _ => {}
        }
        self.state
    }
}

fn default_parse_retry_limit() -> u32 {
    2
}

/// Settings for one optimisation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub proposer: ProposerConfig,
    /// Falls back to the problem's own budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<u32>,
    #[serde(default = "default_parse_retry_limit")]
    pub parse_retry_limit: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub phase_policy: PhasePolicy,
    #[serde(default)]
    pub history_full_k: usize,
    /// Earlier prompt/response pairs resent with each request.
    #[serde(default)]
    pub context_turns: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_members: Option<String>,
    /// Keep every prompt and response in the result.
    #[serde(default)]
    pub record_exchanges: bool,
}

impl RunConfig {
    pub fn new(problem: ProblemSpec, proposer: ProposerConfig) -> Self {
        Self {
            problem,
            proposer,
            max_iterations: None,
            parse_retry_limit: default_parse_retry_limit(),
            seed: 0,
            phase_policy: PhasePolicy::SinglePhase,
            history_full_k: 0,
            context_turns: 0,
            template_dir: None,
            example_members: None,
            record_exchanges: false,
        }
    }

    pub fn budget(&self) -> u32 {
        self.max_iterations.unwrap_or(self.problem.max_iterations)
    }

    pub fn check(&self) -> Result<(), RunError> {
        if self.budget() == 0 {
            return Err(RunError::Config("max_iterations must be >= 1".into()));
        }
        if self.phase_policy == PhasePolicy::MassFirstThenRatio
            && self.problem.constraints.task != Task::StressToWeight
        {
            return Err(RunError::Config(
                "mass_first_then_ratio needs a stress_to_weight problem".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Proposer(#[from] ProposerError),
    #[error("writing transcript: {0}")]
    Transcript(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Feasible,
    BudgetExhausted,
    ProposerFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub iteration: u32,
    pub attempt: u32,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub succeeded: bool,
    pub iterations_used: u32,
    pub trajectory: Vec<SolutionScore>,
    #[serde(rename = "final")]
    pub final_score: Option<SolutionScore>,
    pub termination: Termination,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// The proposer failure was a service outage rather than a script end.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub proposer_outage: bool,
    pub backend_id: String,
    pub proposer_calls: u32,
    pub feedback_prompts: u32,
    /// Iteration whose score moved a two-phase run into the ratio phase.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_transition_at: Option<u32>,
    pub wall_time_secs: f64,
    pub proposer_latency_secs: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exchanges: Vec<Exchange>,
}

impl RunResult {
    /// Copy with clock readings zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> RunResult {
        RunResult {
            wall_time_secs: 0.0,
            proposer_latency_secs: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run result serialises")
    }
}

/// Something that made a proposal unusable.
#[derive(Debug, Clone, Copy)]
pub enum BadProposal<'a> {
    Parse(&'a ParseError),
    Invalid(&'a ValidationReport),
    Mechanism(&'a str),
}

/// Short corrective text naming the defect, appended to the next prompt.
pub fn handle_bad_proposal(bad: BadProposal<'_>, problem: &ProblemSpec) -> String {
    match bad {
        BadProposal::Parse(e) => {
            let mut msg = format!(
                "Your last answer could not be read ({}: line {}, column {}: {}).",
                kind_text(e.kind),
                e.line,
                e.column,
                e.detail
            );
            msg.push_str(
                " Reply with one python code block that assigns node_dict = {'node_1': (x, y), ...} \
                 and member_dict = {'member_1': ('node_a', 'node_b', 'area_id'), ...}; \
                 each member must be a 3-tuple of start node, end node and area id.",
            );
            msg
        }
        BadProposal::Invalid(report) => {
            let rules: Vec<String> = report.violations.iter().map(Violation::to_string).collect();
            let mut msg = format!("Your last design is invalid: {}.", rules.join("; "));
            if report.moved_given_nodes() {
                msg.push_str(&format!(
                    " DO NOT modify the original given node positions {}.",
                    nodes_literal(&problem.given_nodes)
                ));
            }
            msg
        }
        BadProposal::Mechanism(detail) => format!(
            "The last structure is unstable (singular stiffness matrix): {detail}. \
             It can move without deforming its members. Triangulate it so every node \
             is held by at least two non-collinear members."
        ),
    }
}

fn kind_text(kind: ParseErrorKind) -> &'static str {
    match kind {
        ParseErrorKind::NoCodeBlock => "no code block found",
        ParseErrorKind::MissingNodeDict => "node_dict is missing",
        ParseErrorKind::MissingMemberDict => "member_dict is missing",
        ParseErrorKind::SyntaxError => "syntax error",
        ParseErrorKind::BadShape => "wrong entry shape",
    }
}

/// Run with the backend described in `config`.
pub fn run(config: &RunConfig) -> Result<RunResult, RunError> {
    run_shared(config, None, None, "run")
}

/// Run with a shared request limiter and transcript; `label` tags transcript lines.
pub fn run_shared(
    config: &RunConfig,
    limiter: Option<Arc<InFlightLimiter>>,
    transcript: Option<&TranscriptSink>,
    label: &str,
) -> Result<RunResult, RunError> {
    config.check()?;
    let mut proposer = config
        .proposer
        .build(&config.problem, config.seed, limiter)?;
    run_with(config, proposer.as_mut(), transcript, label)
}

enum Outcome {
    Parsed(crate::parser::ParsedResponse),
    Unparseable(ParseError),
    Invalid(TrussDesign, ValidationReport, IndexMap<String, String>),
}

/// Run with a caller-supplied backend.
pub fn run_with(
    config: &RunConfig,
    proposer: &mut dyn Proposer,
    transcript: Option<&TranscriptSink>,
    label: &str,
) -> Result<RunResult, RunError> {
    config.check()?;
    let started = Instant::now();
    let problem = &config.problem;
    let templates = match &config.template_dir {
        Some(dir) => TemplateSet::from_dir(dir)?,
        None => TemplateSet::default(),
    };
    let example_members = config
        .example_members
        .as_deref()
        .unwrap_or(DEFAULT_EXAMPLE_MEMBERS);
    let mut phases = PhaseController::new(config.phase_policy);
    let mut result = RunResult {
        schema_version: RUN_SCHEMA_VERSION,
        succeeded: false,
        iterations_used: 0,
        trajectory: Vec::new(),
        final_score: None,
        termination: Termination::BudgetExhausted,
        failure: None,
        proposer_outage: false,
        backend_id: proposer.backend_id(),
        proposer_calls: 0,
        feedback_prompts: 0,
        phase_transition_at: None,
        wall_time_secs: 0.0,
        proposer_latency_secs: 0.0,
        exchanges: Vec::new(),
    };
    let mut latency = Duration::ZERO;
    let mut turns: Vec<Turn> = Vec::new();
    let mut corrective: Option<String> = None;
    let mut best: Option<usize> = None;

    'iterations: for iteration in 1..=config.budget() {
        let state = phases.state();
        let base_prompt = if result.trajectory.is_empty() {
            render_initial_with(&templates, problem, state.phase, example_members)?
        } else {
            let (latest, history) = result.trajectory.split_last().expect("non-empty");
            result.feedback_prompts += 1;
            render_feedback_with(
                &templates,
                &RenderContext {
                    problem,
                    latest: Some(latest),
                    history,
                    example_members,
                    phase: state.phase,
                    best: best.map(|i| &result.trajectory[i]),
                    history_full_k: config.history_full_k,
                    mass_regressed: state.mass_regressed,
                    corrective: corrective.as_deref(),
                },
            )?
        };
        corrective = None;

        let mut prompt = base_prompt.clone();
        let mut outcome = None;
        for attempt in 0..=config.parse_retry_limit {
            let window = turns.len().saturating_sub(2 * config.context_turns);
            let request = ProposerRequest {
                system_text: None,
                user_text: prompt.clone(),
                conversation: turns[window..].to_vec(),
                temperature: match &config.proposer {
                    ProposerConfig::Llm(c) => c.temperature,
                    _ => 1.0,
                },
                seed: Some(config.seed),
            };
            result.proposer_calls += 1;
            let response = proposer.propose(&request);
            if let Some(sink) = transcript {
                sink.record(&TranscriptEntry {
                    run: label,
                    iteration,
                    attempt,
                    request: &request,
                    response: response.as_ref().ok(),
                    error: response.as_ref().err().map(ToString::to_string),
                })?;
            }
            let response = match response {
                Ok(r) => r,
                Err(e) => {
                    result.termination = Termination::ProposerFailure;
                    result.failure = Some(e.to_string());
                    result.proposer_outage = e.is_outage();
                    break 'iterations;
                }
            };
            latency += response.latency;
            if config.record_exchanges {
                result.exchanges.push(Exchange {
                    iteration,
                    attempt,
                    prompt: prompt.clone(),
                    response: response.raw_text.clone(),
                });
            }
            if config.context_turns > 0 {
                turns.push(Turn {
                    role: Role::User,
                    text: prompt.clone(),
                });
                turns.push(Turn {
                    role: Role::Assistant,
                    text: response.raw_text.clone(),
                });
            }
            let current = classify(parse_response(&response.raw_text), problem);
            let message = match &current {
                Outcome::Parsed(_) => None,
                Outcome::Unparseable(e) => {
                    Some(handle_bad_proposal(BadProposal::Parse(e), problem))
                }
                Outcome::Invalid(_, r, _) => {
                    Some(handle_bad_proposal(BadProposal::Invalid(r), problem))
                }
            };
            outcome = Some(current);
            match message {
                None => {
                    corrective = None;
                    break;
                }
                Some(m) => {
                    prompt = format!("{base_prompt}\n{m}");
                    corrective = Some(m);
                }
            }
        }
        let Some(outcome) = outcome else {
            break;
        };

        let score = score_outcome(outcome, iteration, state.phase, problem, &mut corrective);
        proposer.observe(&score);
        let feasible = score.report.feasible;
        let after = phases.observe(&score.report);
        if after.transitioned {
            result.phase_transition_at = Some(iteration);
        }
        if is_better(&score, best.map(|i| &result.trajectory[i])) {
            best = Some(result.trajectory.len());
        }
        result.trajectory.push(score);
        result.iterations_used = iteration;
        if feasible {
            result.termination = Termination::Feasible;
            result.succeeded = true;
            result.final_score = result.trajectory.last().cloned();
            break;
        }
    }
    result.proposer_latency_secs = latency.as_secs_f64();
    result.wall_time_secs = started
        .elapsed()
        .as_secs_f64()
        .max(result.proposer_latency_secs);
    Ok(result)
}

fn score_outcome(
    outcome: Outcome,
    iteration: u32,
    phase: Phase,
    problem: &ProblemSpec,
    corrective: &mut Option<String>,
) -> SolutionScore {
    let phase = Some(phase);
    match outcome {
        Outcome::Parsed(parsed) => {
            let metrics = analyze(&parsed.design, problem);
            let report = evaluate(&metrics, &problem.constraints);
            let defect = metrics.failure.clone().map(|detail| {
                *corrective = Some(handle_bad_proposal(
                    BadProposal::Mechanism(&detail),
                    problem,
                ));
                Defect::Unstable { detail }
            });
            SolutionScore {
                iteration,
                design: parsed.design,
                metrics,
                report,
                rationale: parsed.rationale,
                defect,
                phase,
            }
        }
        Outcome::Unparseable(error) => SolutionScore {
            iteration,
            design: TrussDesign::default(),
            metrics: SolutionMetrics {
                analysis: None,
                mass: None,
                failure: Some(error.to_string()),
            },
            report: ConstraintReport::unusable(),
            rationale: IndexMap::new(),
            defect: Some(Defect::Unparseable { error }),
            phase,
        },
        Outcome::Invalid(design, report, rationale) => {
            let mass = total_mass(&design, &problem.area_table).ok();
            let failure = report
                .violations
                .iter()
                .map(Violation::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            SolutionScore {
                iteration,
                metrics: SolutionMetrics {
                    analysis: None,
                    mass,
                    failure: Some(failure),
                },
                design,
                report: ConstraintReport::unusable(),
                rationale,
                defect: Some(Defect::Invalid {
                    violations: report.violations,
                }),
                phase,
            }
        }
    }
}

/// Parse, validate and score one response outside a run.
pub fn score_response(text: &str, problem: &ProblemSpec, iteration: u32) -> SolutionScore {
    score_outcome(
        classify(parse_response(text), problem),
        iteration,
        Phase::Full,
        problem,
        &mut None,
    )
}

/// Validate and score an already-built design.
pub fn score_design(design: TrussDesign, problem: &ProblemSpec, iteration: u32) -> SolutionScore {
    let parsed = crate::parser::ParsedResponse {
        design,
        rationale: IndexMap::new(),
        extra_text: 0,
        diagnostics: Vec::new(),
    };
    score_outcome(
        classify(Ok(parsed), problem),
        iteration,
        Phase::Full,
        problem,
        &mut None,
    )
}

fn classify(
    parsed: Result<crate::parser::ParsedResponse, ParseError>,
    problem: &ProblemSpec,
) -> Outcome {
    match parsed {
        Ok(parsed) => {
            let report = validate_design(&parsed.design, problem);
            if report.is_valid() {
                Outcome::Parsed(parsed)
            } else {
                Outcome::Invalid(parsed.design, report, parsed.rationale)
            }
        }
        Err(e) => Outcome::Unparseable(e),
    }
}

/// Feasible beats infeasible, solvable beats unsolvable, then lower mass;
/// ties keep the earlier score.
fn is_better(candidate: &SolutionScore, current: Option<&SolutionScore>) -> bool {
    let Some(current) = current else {
        return true;
    };
    let key = |s: &SolutionScore| {
        (
            u8::from(!s.report.feasible),
            u8::from(s.report.unsolvable),
            s.metrics.total_mass().unwrap_or(f64::INFINITY),
        )
    };
    let (a, b) = (key(candidate), key(current));
    (a.0, a.1) < (b.0, b.1) || ((a.0, a.1) == (b.0, b.1) && a.2 < b.2)
}
