mod common;

use std::sync::atomic::{AtomicU32, Ordering};

use trussloop::design_loop::Termination;
use trussloop::experiment::{
    run_experiment, run_experiment_with, write_outputs, CellConfig, ExperimentConfig,
    TRAJECTORY_COLUMNS,
};
use trussloop::model::benchmarks;
use trussloop::proposer::{
    Proposer, ProposerConfig, ProposerError, ProposerRequest, ProposerResponse, ReplayProposer,
};

use common::{benchmark_triangle, response_for};

struct Down;

impl Proposer for Down {
    fn backend_id(&self) -> String {
        "down".into()
    }

    fn propose(&mut self, _: &ProposerRequest) -> Result<ProposerResponse, ProposerError> {
        Err(ProposerError::Transport {
            attempts: 5,
            detail: "connection refused".into(),
        })
    }
}

fn two_cells() -> ExperimentConfig {
    let cells = ["a", "b"]
        .into_iter()
        .map(|label| CellConfig {
            label: label.into(),
            problem: benchmarks::task1(1),
            phase_policy: None,
        })
        .collect();
    let mut cfg = ExperimentConfig::new(cells, ProposerConfig::Baseline);
    cfg.trials = 4;
    cfg
}

#[test]
fn outage_stops_the_cell_and_flags_it() {
    let cfg = two_cells();
    let built = AtomicU32::new(0);
    let good = response_for(&benchmark_triangle("3", 2.5));
    let factory = |cell: &CellConfig, _: u32, _: u64| {
        built.fetch_add(1, Ordering::SeqCst);
        Ok(if cell.label == "a" {
            Box::new(Down) as Box<dyn Proposer>
        } else {
            Box::new(ReplayProposer::new(vec![good.clone()]))
        })
    };
    let report = run_experiment_with(&cfg, &factory).unwrap();
    let a = &report.summary.cells[0];
    assert!(a.incomplete);
    assert_eq!(a.trials_run, 1);
    assert_eq!(a.records[0].termination, Termination::ProposerFailure);
    let b = &report.summary.cells[1];
    assert!(!b.incomplete);
    assert_eq!((b.trials_run, b.successes), (4, 4));
    assert_eq!(built.load(Ordering::SeqCst), 5);
}

#[test]
fn replay_exhaustion_is_not_an_outage() {
    let cfg = two_cells();
    let factory = |_: &CellConfig, _: u32, _: u64| {
        Ok(Box::new(ReplayProposer::new(Vec::new())) as Box<dyn Proposer>)
    };
    let report = run_experiment_with(&cfg, &factory).unwrap();
    for cell in &report.summary.cells {
        assert!(!cell.incomplete);
        assert_eq!(cell.trials_run, 4);
        assert_eq!(cell.successes, 0);
    }
}

#[test]
fn outputs_are_written_and_reproducible() {
    let mut cfg = ExperimentConfig::benchmarks(ProposerConfig::Baseline);
    cfg.trials = 2;
    cfg.parallelism = 3;
    cfg.master_seed = 9;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        cfg.output_dir = Some(d.path().to_path_buf());
        run_experiment(&cfg).unwrap();
    }
    let read = |i: usize, name: &str| std::fs::read(dirs[i].path().join(name)).unwrap();
    for name in ["summary.json", "summary.csv", "trajectories.csv"] {
        assert_eq!(read(0, name), read(1, name), "{name} differs");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&read(0, "manifest.json")).unwrap();
    assert!(manifest["started_unix"].as_u64().unwrap() > 0);
    assert!(dirs[0]
        .path()
        .join("trials/task2_v3/trial_001.json")
        .exists());

    let csv = String::from_utf8(read(0, "trajectories.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header, TRAJECTORY_COLUMNS);
    let zone_rows = csv.lines().filter(|l| l.contains(",zone,")).count();
    assert_eq!(zone_rows, 6);
    assert!(csv.contains("task2_v1,zone,,30,,0.5,,"));
}

#[test]
fn rewriting_outputs_replaces_files() {
    let mut cfg = two_cells();
    cfg.trials = 1;
    let good = response_for(&benchmark_triangle("3", 2.5));
    let factory = |_: &CellConfig, _: u32, _: u64| {
        Ok(Box::new(ReplayProposer::new(vec![good.clone()])) as Box<dyn Proposer>)
    };
    let report = run_experiment_with(&cfg, &factory).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&report, dir.path()).unwrap();
    write_outputs(&report, dir.path()).unwrap();
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cells"][0]["success_rate_percent"], 100.0);
    assert_eq!(summary["backend_id"], "replay");
}
