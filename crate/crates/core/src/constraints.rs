//! Constraint checks and the solution-score pair fed back to the proposer.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::design_loop::Phase;
use crate::fem::{AnalysisResult, SolutionMetrics};
use crate::format::{format_number, members_literal, nodes_literal, scalar_map_literal};
use crate::model::{ConstraintSpec, Task, TrussDesign};
use crate::parser::ParseError;
use crate::validate::Violation;

/// Shown in place of stresses when the stiffness matrix is singular.
pub const UNSTABLE_SENTINEL: &str = "structure is unstable (singular stiffness matrix)";
/// Shown in place of FEM results when the response could not be parsed.
pub const UNPARSEABLE_SENTINEL: &str = "not evaluated (the response could not be parsed)";
/// Shown in place of FEM results when the design broke a structural rule.
pub const INVALID_SENTINEL: &str = "not evaluated (the design is invalid)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub feasible: bool,
    pub mass_ok: bool,
    /// `None` when no stress cap applies.
    pub stress_ok: Option<bool>,
    /// `None` outside the stress-to-weight task.
    pub ratio_ok: Option<bool>,
    /// `max_mass - total_mass`.
    pub mass_margin: Option<f64>,
    /// Stress limit minus achieved max |stress|.
    pub stress_margin: Option<f64>,
    /// `max_abs_stress / total_mass`; `None` when unsolvable or mass is zero.
    pub ratio_value: Option<f64>,
    pub unsolvable: bool,
}

impl ConstraintReport {
    pub fn unusable() -> Self {
        Self {
            feasible: false,
            mass_ok: false,
            stress_ok: None,
            ratio_ok: None,
            mass_margin: None,
            stress_margin: None,
            ratio_value: None,
            unsolvable: true,
        }
    }
}

pub fn evaluate(metrics: &SolutionMetrics, constraints: &ConstraintSpec) -> ConstraintReport {
    let mass = metrics.total_mass();
    let mass_ok = mass.is_some_and(|m| m <= constraints.max_mass);
    let mass_margin = mass.map(|m| constraints.max_mass - m);
    let Some(analysis) = &metrics.analysis else {
        return ConstraintReport {
            mass_ok,
            mass_margin,
            ..ConstraintReport::unusable()
        };
    };
    let stress = analysis.max_abs_stress;
    let total = analysis.total_mass;
    let ratio_value = (total > 0.0).then(|| stress / total);

    let stress_ok = constraints.max_abs_stress.map(|limit| stress <= limit);
    let stress_margin = constraints.max_abs_stress.map(|limit| limit - stress);
    let ratio_ok = match constraints.task {
        Task::MaxStress => None,
        Task::StressToWeight => {
            let target = constraints.ratio_target.unwrap_or(0.0);
            Some(ratio_value.is_some_and(|r| r <= target))
        }
    };
    let feasible = mass_ok && stress_ok.unwrap_or(true) && ratio_ok.unwrap_or(true);
    ConstraintReport {
        feasible,
        mass_ok,
        stress_ok,
        ratio_ok,
        mass_margin,
        stress_margin,
        ratio_value,
        unsolvable: false,
    }
}

/// Why a proposal could not be analysed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Defect {
    Unparseable { error: ParseError },
    Invalid { violations: Vec<Violation> },
    Unstable { detail: String },
}

/// One evaluated attempt: the design together with its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionScore {
    pub iteration: u32,
    pub design: TrussDesign,
    #[serde(flatten)]
    pub metrics: SolutionMetrics,
    pub report: ConstraintReport,
    /// Proposer comments keyed by the node or member they annotate.
    #[serde(default)]
    pub rationale: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect: Option<Defect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
}

impl SolutionScore {
    pub fn analysis(&self) -> Option<&AnalysisResult> {
        self.metrics.analysis.as_ref()
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Text for each feedback-prompt slot that describes the latest attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackFields {
    pub generated_node_dict: String,
    pub generated_members_dict: String,
    pub structure_mass: String,
    pub generated_max_stress: String,
    pub max_member_stress: String,
    pub generated_stress: String,
    pub member_mass: String,
}

pub fn to_feedback_fields(score: &SolutionScore) -> FeedbackFields {
    let generated_node_dict = nodes_literal(&score.design.nodes).to_string();
    let generated_members_dict = members_literal(&score.design.members).to_string();
    let (structure_mass, member_mass) = match &score.metrics.mass {
        Some(m) => (
            format_number(m.total),
            scalar_map_literal(&m.member_mass).to_string(),
        ),
        None => {
            let s = sentinel(score).to_owned();
            (s.clone(), s)
        }
    };
    match score.analysis() {
        Some(a) => FeedbackFields {
            generated_node_dict,
            generated_members_dict,
            structure_mass,
            generated_max_stress: format_number(a.signed_max_stress()),
            max_member_stress: a.max_stress_member.clone().unwrap_or_else(|| "none".into()),
            generated_stress: scalar_map_literal(&a.member_stress).to_string(),
            member_mass,
        },
        None => {
            let s = sentinel(score).to_owned();
            FeedbackFields {
                generated_node_dict,
                generated_members_dict,
                structure_mass,
                generated_max_stress: s.clone(),
                max_member_stress: s.clone(),
                generated_stress: s,
                member_mass,
            }
        }
    }
}

fn sentinel(score: &SolutionScore) -> &'static str {
    match score.defect {
        Some(Defect::Unparseable { .. }) => UNPARSEABLE_SENTINEL,
        Some(Defect::Invalid { .. }) => INVALID_SENTINEL,
        _ => UNSTABLE_SENTINEL,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MassBreakdown;

    fn metrics(max_abs_stress: f64, total_mass: f64) -> SolutionMetrics {
        let analysis = AnalysisResult {
            displacements: IndexMap::new(),
            member_stress: [("m".to_owned(), -max_abs_stress)].into_iter().collect(),
            member_force: IndexMap::new(),
            member_mass: [("m".to_owned(), total_mass)].into_iter().collect(),
            total_mass,
            reactions: IndexMap::new(),
            max_stress_member: Some("m".into()),
            max_abs_stress,
        };
        SolutionMetrics {
            mass: Some(MassBreakdown {
                member_mass: analysis.member_mass.clone(),
                total: total_mass,
            }),
            analysis: Some(analysis),
            failure: None,
        }
    }

    #[test]
    fn task1_var3_feasible() {
        let r = evaluate(
            &metrics(29.9, 28.0),
            &ConstraintSpec::max_stress(30.0, 30.0),
        );
        assert!(r.feasible);
        assert_eq!(r.stress_ok, Some(true));
        assert_eq!(r.ratio_ok, None);
        assert!((r.mass_margin.unwrap() - 2.0).abs() < 1e-12);
        assert!((r.stress_margin.unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn task1_limits_are_inclusive() {
        let c = ConstraintSpec::max_stress(15.0, 30.0);
        assert!(evaluate(&metrics(15.0, 30.0), &c).feasible);
        let over = evaluate(&metrics(15.000001, 30.0), &c);
        assert!(!over.feasible && over.mass_ok);
        let heavy = evaluate(&metrics(1.0, 30.5), &c);
        assert!(!heavy.feasible && !heavy.mass_ok);
    }

    #[test]
    fn task2_ratio_boundary() {
        let r = evaluate(
            &metrics(12.0, 24.0),
            &ConstraintSpec::stress_to_weight(0.5, 30.0),
        );
        assert_eq!(r.ratio_value, Some(0.5));
        assert_eq!(r.ratio_ok, Some(true));
        assert_eq!(r.stress_ok, None);
        assert!(r.feasible);
    }

    #[test]
    fn task2_optional_stress_cap() {
        let mut c = ConstraintSpec::stress_to_weight(1.0, 30.0);
        c.max_abs_stress = Some(10.0);
        let r = evaluate(&metrics(12.0, 24.0), &c);
        assert_eq!(r.ratio_ok, Some(true));
        assert_eq!(r.stress_ok, Some(false));
        assert!(!r.feasible);
    }

    #[test]
    fn zero_mass_ratio_is_undefined() {
        let r = evaluate(
            &metrics(0.0, 0.0),
            &ConstraintSpec::stress_to_weight(0.5, 30.0),
        );
        assert_eq!(r.ratio_value, None);
        assert_eq!(r.ratio_ok, Some(false));
        assert!(!r.feasible);
    }

    #[test]
    fn unsolvable_is_infeasible() {
        let m = SolutionMetrics {
            analysis: None,
            mass: Some(MassBreakdown {
                member_mass: IndexMap::new(),
                total: 3.0,
            }),
            failure: Some("mechanism".into()),
        };
        let r = evaluate(&m, &ConstraintSpec::max_stress(30.0, 30.0));
        assert!(r.unsolvable);
        assert!(!r.feasible);
        assert!(r.mass_ok);
    }

    #[test]
    fn unsolvable_feedback_uses_sentinel() {
        let score = SolutionScore {
            iteration: 1,
            design: TrussDesign::default(),
            metrics: SolutionMetrics {
                analysis: None,
                mass: None,
                failure: Some("x".into()),
            },
            report: ConstraintReport::unusable(),
            rationale: IndexMap::new(),
            defect: Some(Defect::Unstable { detail: "x".into() }),
            phase: None,
        };
        let f = to_feedback_fields(&score);
        assert_eq!(f.generated_stress, UNSTABLE_SENTINEL);
        assert_eq!(f.generated_max_stress, UNSTABLE_SENTINEL);
        assert_eq!(f.generated_node_dict, "{}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn relaxing_limits_keeps_feasibility(
                stress in 0.0f64..50.0,
                mass in 0.01f64..50.0,
                limit in 1.0f64..50.0,
                cap in 1.0f64..50.0,
                ratio in 0.1f64..3.0,
                bump in 0.0f64..10.0,
            ) {
                let m = metrics(stress, mass);
                let t1 = ConstraintSpec::max_stress(limit, cap);
                let t1_relaxed = ConstraintSpec::max_stress(limit + bump, cap + bump);
                if evaluate(&m, &t1).feasible {
                    prop_assert!(evaluate(&m, &t1_relaxed).feasible);
                }
                let t2 = ConstraintSpec::stress_to_weight(ratio, cap);
                let t2_relaxed = ConstraintSpec::stress_to_weight(ratio + bump, cap + bump);
                if evaluate(&m, &t2).feasible {
                    prop_assert!(evaluate(&m, &t2_relaxed).feasible);
                }
            }

            #[test]
            fn ratio_times_mass_recovers_stress(stress in 0.0f64..1e3, mass in 1e-3f64..1e3) {
                let r = evaluate(&metrics(stress, mass), &ConstraintSpec::stress_to_weight(1.0, 1e4));
                let v = r.ratio_value.unwrap();
                prop_assert!(v >= 0.0);
                prop_assert!((v * mass - stress).abs() <= 1e-15 * stress);
            }
        }
    }
}
