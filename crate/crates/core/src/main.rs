use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use trussloop::constraints::SolutionScore;
use trussloop::design_loop::{run, Phase, RunConfig, RunError, Termination};
use trussloop::experiment::{
    resolve_problem_source, run_experiment, ExperimentConfig, ExperimentError,
};
use trussloop::model::benchmarks;
use trussloop::prompt::{render_feedback, render_initial, RenderContext};
use trussloop::proposer::{LlmConfig, ProposerConfig, ProposerError};
use trussloop::{parse_response, score_design, score_response, ProblemSpec, TrussDesign};

#[derive(Parser)]
#[command(
    name = "trussloop",
    version,
    about = "Closed-loop truss design with an FEM discriminator"
)]
struct Cli {
    /// Directory for run and experiment outputs.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Overrides the run seed or the experiment master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the proposer backend named in the config.
    #[arg(long, global = true, value_enum)]
    proposer: Option<ProposerKind>,
    /// Replay script (JSON array or directory) for `--proposer replay`.
    #[arg(long, global = true)]
    replay: Option<PathBuf>,
    /// Service settings (JSON) for `--proposer llm`.
    #[arg(long, global = true)]
    llm_config: Option<PathBuf>,
    /// Append every proposer exchange to this JSON-lines file.
    #[arg(long, global = true)]
    transcript: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProposerKind {
    Llm,
    Replay,
    Baseline,
}

#[derive(Subcommand)]
enum Command {
    /// Score a design (JSON) or a proposer response (text) against a problem.
    Evaluate { design: PathBuf, problem: String },
    /// Run one design loop.
    Run { config: PathBuf },
    /// Run repeated trials over several problems.
    Experiment { config: PathBuf },
    /// Print the initial prompt, or a feedback prompt for a scored attempt.
    RenderPrompt {
        problem: String,
        /// Scored attempt (as printed by `evaluate`).
        #[arg(long)]
        feedback: Option<PathBuf>,
        /// Render the mass-first or ratio-focus variant.
        #[arg(long, value_enum, default_value = "full")]
        phase: PhaseArg,
    },
    /// Extract the design from a proposer response.
    Parse { response: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Full,
    MassFirst,
    RatioFocus,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Full => Phase::Full,
            PhaseArg::MassFirst => Phase::MassFirst,
            PhaseArg::RatioFocus => Phase::RatioFocus,
        }
    }
}

/// A failure reported as JSON on stderr.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "config",
            message: message.into(),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Run { source, .. } => run_failure(source),
            ExperimentError::Proposer(p) => proposer_failure(&p),
            other => Failure::config(other.to_string()),
        }
    }
}

fn run_failure(e: RunError) -> Failure {
    match e {
        RunError::Proposer(p) => proposer_failure(&p),
        RunError::Transcript(io) => Failure {
            code: 2,
            kind: "io",
            message: io.to_string(),
        },
        other => Failure::config(other.to_string()),
    }
}

fn proposer_failure(e: &ProposerError) -> Failure {
    let (code, kind) = match e {
        ProposerError::ReplayExhausted { .. } => (1, "replay_exhausted"),
        e if e.is_config() => (2, "config"),
        _ => (2, "proposer"),
    };
    Failure {
        code,
        kind,
        message: e.to_string(),
    }
}

/// Write to stdout; a closed pipe is not an error worth a panic.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    if !text.ends_with('\n') {
        let _ = out.write_all(b"\n");
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure {
        code: 2,
        kind: "io",
        message: format!("{}: {e}", path.display()),
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &Path) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::config(format!("{}: {e}", what.display())))
}

/// A problem file, or a benchmark name such as `task2_v1`.
fn load_problem(arg: &str) -> Result<ProblemSpec, Failure> {
    if let Some((_, p)) = benchmarks::all().into_iter().find(|(name, _)| name == arg) {
        return Ok(p);
    }
    let path = Path::new(arg);
    parse_json(&read(path)?, path)
}

impl Cli {
    fn proposer_override(
        &self,
        current: &ProposerConfig,
    ) -> Result<Option<ProposerConfig>, Failure> {
        let Some(kind) = self.proposer else {
            return Ok(None);
        };
        Ok(Some(match kind {
            ProposerKind::Baseline => ProposerConfig::Baseline,
            ProposerKind::Replay => match (&self.replay, current) {
                (Some(p), _) => ProposerConfig::Replay {
                    path: Some(p.clone()),
                    responses: Vec::new(),
                },
                (None, c @ ProposerConfig::Replay { .. }) => c.clone(),
                (None, _) => {
                    return Err(Failure::config("--proposer replay needs --replay <path>"))
                }
            },
            ProposerKind::Llm => match (&self.llm_config, current) {
                (Some(p), _) => {
                    let cfg: LlmConfig = parse_json(&read(p)?, p)?;
                    ProposerConfig::Llm(cfg)
                }
                (None, c @ ProposerConfig::Llm(_)) => c.clone(),
                (None, _) => {
                    return Err(Failure::config("--proposer llm needs --llm-config <path>"))
                }
            },
        }))
    }
}

fn load_with_problem_source(path: &Path) -> Result<Value, Failure> {
    let mut raw: Value = parse_json(&read(path)?, path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve_problem_source(&mut raw, base).map_err(Failure::from)?;
    Ok(raw)
}

fn write_output(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure {
        code: 2,
        kind: "io",
        message: format!("{}: {e}", dir.display()),
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join(name), text).map_err(io)
}

fn evaluate_cmd(design: &Path, problem: &str) -> Result<u8, Failure> {
    let problem = load_problem(problem)?;
    let text = read(design)?;
    let score = if design.extension().is_some_and(|e| e == "json") {
        let d = TrussDesign::from_json(&text)
            .map_err(|e| Failure::config(format!("{}: {e}", design.display())))?;
        score_design(d, &problem, 0)
    } else {
        score_response(&text, &problem, 0)
    };
    emit(&serde_json::to_string_pretty(&score).expect("score serialises"));
    Ok(if score.report.feasible { 0 } else { 1 })
}

fn run_cmd(cli: &Cli, path: &Path) -> Result<u8, Failure> {
    let raw = load_with_problem_source(path)?;
    let mut config: RunConfig = serde_json::from_value(raw)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(p) = cli.proposer_override(&config.proposer)? {
        config.proposer = p;
    }
    let result = match &cli.transcript {
        Some(t) => {
            let sink = trussloop::proposer::TranscriptSink::create(t).map_err(|e| Failure {
                code: 2,
                kind: "io",
                message: format!("{}: {e}", t.display()),
            })?;
            config.check().map_err(run_failure)?;
            let mut proposer = config
                .proposer
                .build(&config.problem, config.seed, None)
                .map_err(|e| proposer_failure(&e))?;
            trussloop::design_loop::run_with(&config, proposer.as_mut(), Some(&sink), "run")
        }
        None => run(&config),
    }
    .map_err(run_failure)?;
    let json = result.to_json();
    if let Some(dir) = &cli.output_dir {
        write_output(dir, "run.json", &json)?;
    }
    emit(&json);
    match result.termination {
        Termination::Feasible => Ok(0),
        Termination::BudgetExhausted => Ok(1),
        Termination::ProposerFailure => {
            let failure = Failure {
                code: if result.proposer_outage { 2 } else { 1 },
                kind: "proposer",
                message: result.failure.unwrap_or_default(),
            };
            Err(failure)
        }
    }
}

fn experiment_cmd(cli: &Cli, path: &Path) -> Result<u8, Failure> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(p) = cli.proposer_override(&config.proposer)? {
        config.proposer = p;
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = Some(dir.clone());
    }
    if let Some(t) = &cli.transcript {
        config.transcript = Some(t.clone());
    }
    let report = run_experiment(&config)?;
    emit(&report.summary.to_json());
    let incomplete: Vec<&str> = report
        .summary
        .cells
        .iter()
        .filter(|c| c.incomplete)
        .map(|c| c.label.as_str())
        .collect();
    if incomplete.is_empty() {
        Ok(0)
    } else {
        Err(Failure {
            code: 2,
            kind: "proposer",
            message: format!(
                "proposer outage; incomplete cells: {}",
                incomplete.join(", ")
            ),
        })
    }
}

fn render_cmd(problem: &str, feedback: Option<&Path>, phase: Phase) -> Result<u8, Failure> {
    let problem = load_problem(problem)?;
    let prompt_err = |e: trussloop::prompt::PromptError| Failure::config(e.to_string());
    let text = match feedback {
        None if phase == Phase::Full => render_initial(&problem).map_err(prompt_err)?,
        None => trussloop::prompt::render_initial_with(
            &Default::default(),
            &problem,
            phase,
            trussloop::prompt::DEFAULT_EXAMPLE_MEMBERS,
        )
        .map_err(prompt_err)?,
        Some(path) => {
            let score: SolutionScore = parse_json(&read(path)?, path)?;
            let mut ctx = RenderContext::new(&problem);
            ctx.latest = Some(&score);
            ctx.phase = phase;
            render_feedback(&ctx).map_err(prompt_err)?
        }
    };
    emit(&text);
    Ok(0)
}

fn parse_cmd(path: &Path) -> Result<u8, Failure> {
    match parse_response(&read(path)?) {
        Ok(parsed) => {
            emit(&serde_json::to_string_pretty(&parsed).expect("parse serialises"));
            Ok(0)
        }
        Err(e) => Err(Failure {
            code: 1,
            kind: "parse",
            message: e.to_string(),
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Evaluate { design, problem } => evaluate_cmd(design, problem),
        Command::Run { config } => run_cmd(&cli, config),
        Command::Experiment { config } => experiment_cmd(&cli, config),
        Command::RenderPrompt {
            problem,
            feedback,
            phase,
        } => render_cmd(problem, feedback.as_deref(), (*phase).into()),
        Command::Parse { response } => parse_cmd(response),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("{}", json!({"error": f.kind, "message": f.message}));
            ExitCode::from(f.code)
        }
    }
}
