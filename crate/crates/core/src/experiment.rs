//! Repeated trials per benchmark cell, success statistics and trajectory export.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::design_loop::{run_with, PhasePolicy, RunConfig, RunError, RunResult, Termination};
use crate::model::{benchmarks, ConstraintSpec, ProblemSpec, Task};
use crate::proposer::{InFlightLimiter, Proposer, ProposerConfig, ProposerError, TranscriptSink};

/// Version of the summary JSON layout.
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Column order of `trajectories.csv`.
pub const TRAJECTORY_COLUMNS: [&str; 8] = [
    "label",
    "trial",
    "iteration",
    "total_mass",
    "max_abs_stress",
    "ratio_value",
    "feasible",
    "unsolvable",
];

/// Column order of `summary.csv`.
pub const SUMMARY_COLUMNS: [&str; 11] = [
    "label",
    "trials",
    "trials_run",
    "successes",
    "success_rate_percent",
    "iterations_mean_success",
    "iterations_std_success",
    "iterations_mean_all",
    "iterations_std_all",
    "incomplete",
    "backend_id",
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("cell {label}, trial {trial}: {source}")]
    Run {
        label: String,
        trial: u32,
        source: RunError,
    },
    #[error(transparent)]
    Proposer(#[from] ProposerError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub label: String,
    pub problem: ProblemSpec,
    /// Overrides the experiment-wide policy for this cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_policy: Option<PhasePolicy>,
}

fn default_trials() -> u32 {
    10
}

fn default_parallelism() -> usize {
    1
}

fn default_parse_retry_limit() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub cells: Vec<CellConfig>,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default)]
    pub proposer: ProposerConfig,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub master_seed: u64,
    /// Per-run budget; falls back to each problem's own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<u32>,
    /// `None` runs stress-to-weight cells mass-first and everything else
    /// single-phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_policy: Option<PhasePolicy>,
    #[serde(default = "default_parse_retry_limit")]
    pub parse_retry_limit: u32,
    #[serde(default)]
    pub history_full_k: usize,
    #[serde(default)]
    pub context_turns: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(cells: Vec<CellConfig>, proposer: ProposerConfig) -> Self {
        Self {
            cells,
            trials: default_trials(),
            proposer,
            parallelism: default_parallelism(),
            output_dir: None,
            master_seed: 0,
            max_iterations: None,
            phase_policy: None,
            parse_retry_limit: default_parse_retry_limit(),
            history_full_k: 0,
            context_turns: 0,
            transcript: None,
        }
    }

    /// The six benchmark cells.
    pub fn benchmarks(proposer: ProposerConfig) -> Self {
        let cells = benchmarks::all()
            .into_iter()
            .map(|(label, problem)| CellConfig {
                label,
                problem,
                phase_policy: None,
            })
            .collect();
        Self::new(cells, proposer)
    }

    /// Read a config file. A cell may give `problem` inline, `problem_file`
    /// (relative to the config file) or `benchmark` (`task1_v1` … `task2_v3`).
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let json_err = |source| ExperimentError::Json {
            path: path.display().to_string(),
            source,
        };
        let mut raw: Value = serde_json::from_str(&text).map_err(json_err)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve_problem_source(&mut raw, base)?;
        if let Some(cells) = raw.get_mut("cells").and_then(Value::as_array_mut) {
            for cell in cells {
                resolve_problem_source(cell, base)?;
            }
        }
        let cfg: ExperimentConfig = serde_json::from_value(raw).map_err(json_err)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.cells.is_empty() {
            return bad("at least one cell is required".into());
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.cells {
            if !seen.insert(c.label.as_str()) {
                return bad(format!("duplicate cell label {}", c.label));
            }
        }
        if self.max_iterations == Some(0) {
            return bad("max_iterations must be >= 1".into());
        }
        Ok(())
    }

    /// SHA-256 of the config's canonical JSON, leaving out settings that
    /// cannot change results (worker count and output locations).
    pub fn hash(&self) -> String {
        let normalized = Self {
            parallelism: 1,
            output_dir: None,
            transcript: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&normalized).expect("config serialises");
        hex(&Sha256::digest(json.as_bytes()))
    }

    fn run_config(&self, cell: &CellConfig, seed: u64) -> RunConfig {
        let policy = cell.phase_policy.or(self.phase_policy).unwrap_or(
            if cell.problem.constraints.task == Task::StressToWeight {
                PhasePolicy::MassFirstThenRatio
            } else {
                PhasePolicy::SinglePhase
            },
        );
        RunConfig {
            max_iterations: self.max_iterations,
            parse_retry_limit: self.parse_retry_limit,
            seed,
            phase_policy: policy,
            history_full_k: self.history_full_k,
            context_turns: self.context_turns,
            ..RunConfig::new(cell.problem.clone(), self.proposer.clone())
        }
    }
}

/// Replace `problem_file` (relative to `base`) or `benchmark` in a JSON
/// object with an inline `problem`, and make a relative replay `path` in a
/// `proposer` relative to `base`.
pub fn resolve_problem_source(cell: &mut Value, base: &Path) -> Result<(), ExperimentError> {
    let Some(obj) = cell.as_object_mut() else {
        return Ok(());
    };
    if let Some(Value::String(p)) = obj.get_mut("proposer").and_then(|v| v.get_mut("path")) {
        if Path::new(p.as_str()).is_relative() {
            *p = base.join(p.as_str()).display().to_string();
        }
    }
    if let Some(file) = obj.remove("problem_file") {
        let rel = file
            .as_str()
            .ok_or_else(|| ExperimentError::Config("problem_file must be a string".into()))?;
        let path = base.join(rel);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let problem: Value =
            serde_json::from_str(&text).map_err(|source| ExperimentError::Json {
                path: path.display().to_string(),
                source,
            })?;
        obj.insert("problem".into(), problem);
    }
    if let Some(name) = obj.remove("benchmark") {
        let name = name.as_str().unwrap_or_default().to_owned();
        let problem = benchmarks::all()
            .into_iter()
            .find(|(label, _)| *label == name)
            .map(|(_, p)| p)
            .ok_or_else(|| ExperimentError::Config(format!("unknown benchmark {name}")))?;
        obj.insert(
            "problem".into(),
            serde_json::to_value(problem).expect("problem serialises"),
        );
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed for one trial, independent of execution order.
pub fn derive_seed(master_seed: u64, label: &str, trial: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(trial.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Mean and sample standard deviation of iteration counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub n: u32,
    pub mean: Option<f64>,
    /// `None` when fewer than two values.
    pub std: Option<f64>,
}

impl IterationStats {
    pub fn from_values(values: &[u32]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                n: 0,
                mean: None,
                std: None,
            };
        }
        let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
        let std = (n >= 2).then(|| {
            let ss: f64 = values.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Self {
            n: n as u32,
            mean: Some(mean),
            std,
        }
    }
}

/// The feasible rectangle of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stress_limit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio_target: Option<f64>,
    pub max_mass: f64,
}

impl From<&ConstraintSpec> for Zone {
    fn from(c: &ConstraintSpec) -> Self {
        Self {
            stress_limit: c.max_abs_stress,
            ratio_target: c.ratio_target,
            max_mass: c.max_mass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u32,
    pub seed: u64,
    pub succeeded: bool,
    pub iterations_used: u32,
    pub termination: Termination,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_max_abs_stress: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub label: String,
    pub trials: u32,
    pub trials_run: u32,
    pub successes: u32,
    pub success_rate_percent: f64,
    pub iterations_success: IterationStats,
    pub iterations_all: IterationStats,
    /// Trials were skipped after a proposer outage.
    pub incomplete: bool,
    pub zone: Zone,
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub backend_id: String,
    pub master_seed: u64,
    pub trials_per_cell: u32,
    pub cells: Vec<CellSummary>,
}

impl ExperimentSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serialises")
    }
}

/// Runs of one cell, in trial order.
#[derive(Debug, Clone)]
pub struct CellRuns {
    pub label: String,
    pub zone: Zone,
    pub runs: Vec<(u32, u64, RunResult)>,
    pub incomplete: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summary: ExperimentSummary,
    pub cells: Vec<CellRuns>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn summarize_cell(runs: &CellRuns, trials: u32) -> CellSummary {
    let records: Vec<TrialRecord> = runs
        .runs
        .iter()
        .map(|(trial, seed, r)| {
            let fin = r.final_score.as_ref().map(|s| &s.metrics);
            TrialRecord {
                trial: *trial,
                seed: *seed,
                succeeded: r.succeeded,
                iterations_used: r.iterations_used,
                termination: r.termination,
                final_mass: fin.and_then(|m| m.total_mass()),
                final_max_abs_stress: fin.and_then(|m| m.max_abs_stress()),
            }
        })
        .collect();
    let success_iters: Vec<u32> = records
        .iter()
        .filter(|r| r.succeeded)
        .map(|r| r.iterations_used)
        .collect();
    let all_iters: Vec<u32> = records.iter().map(|r| r.iterations_used).collect();
    let successes = success_iters.len() as u32;
    CellSummary {
        label: runs.label.clone(),
        trials,
        trials_run: records.len() as u32,
        successes,
        success_rate_percent: 100.0 * f64::from(successes) / f64::from(trials),
        iterations_success: IterationStats::from_values(&success_iters),
        iterations_all: IterationStats::from_values(&all_iters),
        incomplete: runs.incomplete,
        zone: runs.zone,
        records,
    }
}

/// Builds a proposer for `(cell, trial, seed)`.
pub type ProposerFactory<'a> =
    dyn Fn(&CellConfig, u32, u64) -> Result<Box<dyn Proposer>, ProposerError> + Sync + 'a;

/// Run every trial with the configured backend and write outputs when
/// `output_dir` is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let limiter = match &config.proposer {
        ProposerConfig::Llm(c) => Some(Arc::new(InFlightLimiter::new(c.max_in_flight))),
        _ => None,
    };
    let factory = |cell: &CellConfig, _trial: u32, seed: u64| {
        config.proposer.build(&cell.problem, seed, limiter.clone())
    };
    let report = run_experiment_with(config, &factory)?;
    if let Some(dir) = &config.output_dir {
        write_outputs(&report, dir)?;
    }
    Ok(report)
}

/// Run every trial with proposers from `factory`; nothing is written.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    factory: &ProposerFactory<'_>,
) -> Result<ExperimentReport, ExperimentError> {
    config.check()?;
    let started_unix = unix_now();
    let transcript = match &config.transcript {
        Some(p) => Some(TranscriptSink::create(p).map_err(io_err(p))?),
        None => None,
    };
    let jobs: VecDeque<(usize, u32)> = (0..config.cells.len())
        .flat_map(|c| (0..config.trials).map(move |t| (c, t)))
        .collect();
    let queue = Mutex::new(jobs);
    let aborted: Vec<AtomicBool> = config
        .cells
        .iter()
        .map(|_| AtomicBool::new(false))
        .collect();
    let results: Mutex<Vec<(usize, u32, u64, RunResult)>> = Mutex::new(Vec::new());
    let first_error: Mutex<Option<ExperimentError>> = Mutex::new(None);

    let worker = || loop {
        if first_error.lock().expect("lock").is_some() {
            return;
        }
        let Some((c, trial)) = queue.lock().expect("lock").pop_front() else {
            return;
        };
        if aborted[c].load(Ordering::SeqCst) {
            continue;
        }
        let cell = &config.cells[c];
        let seed = derive_seed(config.master_seed, &cell.label, trial);
        let outcome = factory(cell, trial, seed)
            .map_err(ExperimentError::from)
            .and_then(|mut proposer| {
                let run_cfg = config.run_config(cell, seed);
                let tag = format!("{}#{trial}", cell.label);
                run_with(&run_cfg, proposer.as_mut(), transcript.as_ref(), &tag).map_err(|source| {
                    ExperimentError::Run {
                        label: cell.label.clone(),
                        trial,
                        source,
                    }
                })
            });
        match outcome {
            Ok(r) => {
                if r.proposer_outage {
                    aborted[c].store(true, Ordering::SeqCst);
                }
                results.lock().expect("lock").push((c, trial, seed, r));
            }
            Err(e) => {
                first_error.lock().expect("lock").get_or_insert(e);
            }
        }
    };
    let workers = config.parallelism.clamp(1, 64);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(worker);
        }
    });
    if let Some(e) = first_error.into_inner().expect("lock") {
        return Err(e);
    }

    let mut results = results.into_inner().expect("lock");
    results.sort_by_key(|(c, t, _, _)| (*c, *t));
    let mut cells: Vec<CellRuns> = config
        .cells
        .iter()
        .map(|cell| CellRuns {
            label: cell.label.clone(),
            zone: Zone::from(&cell.problem.constraints),
            runs: Vec::new(),
            incomplete: false,
        })
        .collect();
    for (c, trial, seed, r) in results {
        cells[c].runs.push((trial, seed, r));
    }
    for cell in &mut cells {
        cell.incomplete = (cell.runs.len() as u32) < config.trials;
    }
    let backend_id = cells
        .iter()
        .flat_map(|c| c.runs.iter())
        .map(|(_, _, r)| r.backend_id.clone())
        .next()
        .unwrap_or_else(|| config.proposer.label().to_owned());
    let summary = ExperimentSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        config_hash: config.hash(),
        backend_id,
        master_seed: config.master_seed,
        trials_per_cell: config.trials,
        cells: cells
            .iter()
            .map(|c| summarize_cell(c, config.trials))
            .collect(),
    };
    Ok(ExperimentReport {
        summary,
        cells,
        started_unix,
        finished_unix: unix_now(),
    })
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

/// One row per attempt plus a `zone` row per cell.
pub fn export_trajectories(cells: &[CellRuns]) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRAJECTORY_COLUMNS)?;
    for cell in cells {
        for (trial, _, run) in &cell.runs {
            for s in &run.trajectory {
                w.write_record([
                    cell.label.clone(),
                    trial.to_string(),
                    s.iteration.to_string(),
                    opt(s.metrics.total_mass()),
                    opt(s.metrics.max_abs_stress()),
                    opt(s.report.ratio_value),
                    s.report.feasible.to_string(),
                    s.report.unsolvable.to_string(),
                ])?;
            }
        }
        w.write_record([
            cell.label.clone(),
            "zone".to_owned(),
            String::new(),
            format!("{}", cell.zone.max_mass),
            opt(cell.zone.stress_limit),
            opt(cell.zone.ratio_target),
            String::new(),
            String::new(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn summary_csv(summary: &ExperimentSummary) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS)?;
    for c in &summary.cells {
        w.write_record([
            c.label.clone(),
            c.trials.to_string(),
            c.trials_run.to_string(),
            c.successes.to_string(),
            format!("{}", c.success_rate_percent),
            opt(c.iterations_success.mean),
            opt(c.iterations_success.std),
            opt(c.iterations_all.mean),
            opt(c.iterations_all.std),
            c.incomplete.to_string(),
            summary.backend_id.clone(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    config_hash: &'a str,
    backend_id: &'a str,
    started_unix: u64,
    finished_unix: u64,
    crate_version: &'static str,
}

/// Writes `trials/<label>/trial_NNN.json`, `summary.json`, `summary.csv`,
/// `trajectories.csv` and `manifest.json` under `dir`.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<(), ExperimentError> {
    let write = |path: PathBuf, text: String| std::fs::write(&path, text).map_err(io_err(&path));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for cell in &report.cells {
        let cell_dir = dir.join("trials").join(&cell.label);
        std::fs::create_dir_all(&cell_dir).map_err(io_err(&cell_dir))?;
        for (trial, _, run) in &cell.runs {
            write(
                cell_dir.join(format!("trial_{trial:03}.json")),
                run.to_json(),
            )?;
        }
    }
    write(dir.join("summary.json"), report.summary.to_json())?;
    write(dir.join("summary.csv"), summary_csv(&report.summary)?)?;
    write(
        dir.join("trajectories.csv"),
        export_trajectories(&report.cells)?,
    )?;
    let manifest = Manifest {
        schema_version: SUMMARY_SCHEMA_VERSION,
        config_hash: &report.summary.config_hash,
        backend_id: &report.summary.backend_id,
        started_unix: report.started_unix,
        finished_unix: report.finished_unix,
        crate_version: env!("CARGO_PKG_VERSION"),
    };
    write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serialises"),
    )
}
