//! Closed-loop 2D truss design: a proposer suggests node and member
//! dictionaries, a direct-stiffness solver scores them, and structured
//! feedback drives the next proposal.

pub mod constraints;
pub mod design_loop;
pub mod experiment;
pub mod fem;
pub mod format;
pub mod linalg;
pub mod model;
pub mod parser;
pub mod prompt;
pub mod proposer;
pub mod validate;

pub use constraints::{evaluate, to_feedback_fields, ConstraintReport, SolutionScore};
pub use design_loop::{
    run, score_design, score_response, PhasePolicy, RunConfig, RunResult, Termination,
};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentSummary};
pub use fem::{analyze, solve, AnalysisResult, FemError, SolutionMetrics};
pub use model::{ConstraintSpec, ProblemSpec, TrussDesign};
pub use parser::{parse_design, parse_response, ParseError, ParsedResponse};
pub use validate::{validate_design, ValidationReport};
