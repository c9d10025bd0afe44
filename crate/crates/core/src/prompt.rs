//! Initial and feedback prompt rendering.
//!
//! Template bodies live in `templates/*.txt`; a run can load replacements
//! from a directory with [`TemplateSet::from_dir`]. Placeholders are
//! `{name}` slots resolved in a single pass, so substituted dict literals are
//! never re-scanned.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::constraints::{to_feedback_fields, SolutionScore};
use crate::design_loop::Phase;
use crate::format::{
    area_table_literal, design_code, format_number, loads_literal, nodes_literal, supports_literal,
};
use crate::model::{ProblemSpec, Task};

const INITIAL_ASSET: &str = include_str!("../templates/initial.txt");
const FEEDBACK_ASSET: &str = include_str!("../templates/feedback.txt");

/// Member-dict shape shown to the proposer in the initial prompt.
pub const DEFAULT_EXAMPLE_MEMBERS: &str =
    "{'member_1': ('node_1', 'node_3', '2'), 'member_2': ('node_3', 'node_2', '2')}";

const INITIAL_STRESS_CLAUSE: &str = "keep the maximum compressive or tensile stress below {max_stress_all} (positive for tensile and negative for compressive) and the total mass under {max_allow_structure_mass}";
const FEEDBACK_STRESS_CLAUSE: &str = "maximum absolute stress (tensile ad compressive) under {max_allow_stress} (positive for tensile and negative for compressive) and total mass under {max_allow_structure_mass}";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template}: no value for placeholder {{{name}}}")]
    UnresolvedPlaceholder {
        template: &'static str,
        name: String,
    },
    #[error("template {template}: unclosed '{{' at byte {offset}")]
    UnclosedBrace {
        template: &'static str,
        offset: usize,
    },
    #[error("feedback rendering needs a latest score")]
    MissingLatest,
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateName {
    Initial,
    Feedback,
}

impl TemplateName {
    pub fn file_name(self) -> &'static str {
        match self {
            TemplateName::Initial => "initial.txt",
            TemplateName::Feedback => "feedback.txt",
        }
    }

    fn label(self) -> &'static str {
        match self {
            TemplateName::Initial => "initial",
            TemplateName::Feedback => "feedback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
}

impl PromptTemplate {
    /// Build from an asset file, dropping the leading `#` header lines.
    pub fn from_asset(name: TemplateName, raw: &str) -> Self {
        let mut rest = raw;
        while rest.starts_with('#') {
            rest = rest.split_once('\n').map_or("", |(_, tail)| tail);
        }
        let body = rest.strip_suffix('\n').unwrap_or(rest);
        Self {
            name,
            body: body.to_owned(),
        }
    }

    /// Placeholder names in order of appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find('{') {
            let tail = &rest[open + 1..];
            match tail.find('}') {
                Some(close) => {
                    out.push(&tail[..close]);
                    rest = &tail[close + 1..];
                }
                None => break,
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub initial: PromptTemplate,
    pub feedback: PromptTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            initial: PromptTemplate::from_asset(TemplateName::Initial, INITIAL_ASSET),
            feedback: PromptTemplate::from_asset(TemplateName::Feedback, FEEDBACK_ASSET),
        }
    }
}

impl TemplateSet {
    /// Load `initial.txt` and `feedback.txt` from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let load = |name: TemplateName| {
            let path = dir.join(name.file_name());
            std::fs::read_to_string(&path)
                .map(|raw| PromptTemplate::from_asset(name, &raw))
                .map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })
        };
        Ok(Self {
            initial: load(TemplateName::Initial)?,
            feedback: load(TemplateName::Feedback)?,
        })
    }
}

/// Everything a feedback prompt can draw on.
#[derive(Debug, Clone, Copy)]
pub struct RenderContext<'a> {
    pub problem: &'a ProblemSpec,
    pub latest: Option<&'a SolutionScore>,
    /// Earlier attempts, oldest first; one summary line each.
    pub history: &'a [SolutionScore],
    pub example_members: &'a str,
    pub phase: Phase,
    pub best: Option<&'a SolutionScore>,
    /// Inline this many of the best earlier designs in full.
    pub history_full_k: usize,
    pub mass_regressed: bool,
    pub corrective: Option<&'a str>,
}

impl<'a> RenderContext<'a> {
    pub fn new(problem: &'a ProblemSpec) -> Self {
        Self {
            problem,
            latest: None,
            history: &[],
            example_members: DEFAULT_EXAMPLE_MEMBERS,
            phase: Phase::Full,
            best: None,
            history_full_k: 0,
            mass_regressed: false,
            corrective: None,
        }
    }
}

fn problem_values(problem: &ProblemSpec, example_members: &str) -> Vec<(&'static str, String)> {
    let c = &problem.constraints;
    let mut v = vec![
        (
            "given_node_dict",
            nodes_literal(&problem.given_nodes).to_string(),
        ),
        ("load", loads_literal(&problem.loads).to_string()),
        ("supports", supports_literal(&problem.supports).to_string()),
        (
            "area_id",
            area_table_literal(&problem.area_table).to_string(),
        ),
        ("example_members", example_members.to_owned()),
        ("max_allow_structure_mass", format_number(c.max_mass)),
    ];
    if let Some(s) = c.max_abs_stress {
        v.push(("max_stress_all", format_number(s)));
        v.push(("max_allow_stress", format_number(s)));
    }
    if let Some(r) = c.ratio_target {
        v.push(("ratio_target", format_number(r)));
    }
    v
}

fn ratio_phrase(initial: bool) -> &'static str {
    if initial {
        "keep the stress-to-weight ratio (maximum absolute stress divided by total mass) at or below {ratio_target}"
    } else {
        "stress-to-weight ratio (maximum absolute stress divided by total mass) under {ratio_target}"
    }
}

/// The constraint clause for this task and phase.
fn clause(problem: &ProblemSpec, phase: Phase, initial: bool) -> Option<String> {
    let c = &problem.constraints;
    if c.task == Task::MaxStress {
        return None;
    }
    let (article, stress_slot) = if initial {
        (
            "the ",
            "the maximum compressive or tensile stress below {max_stress_all}",
        )
    } else {
        ("", "maximum absolute stress under {max_allow_stress}")
    };
    let lead = if initial { "keep " } else { "" };
    let cap = if c.max_abs_stress.is_some() {
        format!(", {stress_slot}")
    } else {
        String::new()
    };
    Some(match phase {
        Phase::MassFirst => format!("{lead}{article}total mass under {{max_allow_structure_mass}}"),
        Phase::RatioFocus => format!(
            "{}{cap} while keeping {article}total mass under {{max_allow_structure_mass}}",
            ratio_phrase(initial)
        ),
        Phase::Full => format!(
            "{}{cap} and {article}total mass under {{max_allow_structure_mass}}",
            ratio_phrase(initial)
        ),
    })
}

fn with_clause(body: &str, original: &str, replacement: Option<String>) -> String {
    match replacement {
        Some(r) => body.replacen(original, &r, 1),
        None => body.to_owned(),
    }
}

/// Single-pass `{name}` substitution.
fn substitute(
    template: &'static str,
    body: &str,
    values: &[(&str, String)],
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(body.len() * 2);
    let mut rest = body;
    let mut consumed = 0;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open + 1..];
        let close = tail.find('}').ok_or(PromptError::UnclosedBrace {
            template,
            offset: consumed + open,
        })?;
        let name = &tail[..close];
        let value = values.iter().find(|(k, _)| *k == name).ok_or_else(|| {
            PromptError::UnresolvedPlaceholder {
                template,
                name: name.to_owned(),
            }
        })?;
        out.push_str(&value.1);
        consumed += open + close + 2;
        rest = &tail[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

pub fn render_initial(problem: &ProblemSpec) -> Result<String, PromptError> {
    render_initial_with(
        &TemplateSet::default(),
        problem,
        Phase::Full,
        DEFAULT_EXAMPLE_MEMBERS,
    )
}

pub fn render_initial_with(
    templates: &TemplateSet,
    problem: &ProblemSpec,
    phase: Phase,
    example_members: &str,
) -> Result<String, PromptError> {
    let body = with_clause(
        &templates.initial.body,
        INITIAL_STRESS_CLAUSE,
        clause(problem, phase, true),
    );
    substitute(
        TemplateName::Initial.label(),
        &body,
        &problem_values(problem, example_members),
    )
}

pub fn render_feedback(ctx: &RenderContext<'_>) -> Result<String, PromptError> {
    render_feedback_with(&TemplateSet::default(), ctx)
}

pub fn render_feedback_with(
    templates: &TemplateSet,
    ctx: &RenderContext<'_>,
) -> Result<String, PromptError> {
    let latest = ctx.latest.ok_or(PromptError::MissingLatest)?;
    let fields = to_feedback_fields(latest);
    let mut values = problem_values(ctx.problem, ctx.example_members);
    values.extend([
        ("generated_node_dict", fields.generated_node_dict),
        ("generated_members_dict", fields.generated_members_dict),
        ("structure_mass", fields.structure_mass),
        ("generated_max_stress", fields.generated_max_stress),
        ("max_member_stress", fields.max_member_stress),
        ("generated_stress", fields.generated_stress),
        ("member_mass", fields.member_mass),
    ]);
    let body = with_clause(
        &templates.feedback.body,
        FEEDBACK_STRESS_CLAUSE,
        clause(ctx.problem, ctx.phase, false),
    );
    let mut out = substitute(TemplateName::Feedback.label(), &body, &values)?;
    append_extras(&mut out, ctx, latest);
    Ok(out)
}

fn append_extras(out: &mut String, ctx: &RenderContext<'_>, latest: &SolutionScore) {
    let c = &ctx.problem.constraints;
    if c.task == Task::StressToWeight {
        let value = latest
            .report
            .ratio_value
            .map_or_else(|| "undefined".to_owned(), format_number);
        let target = c.ratio_target.map_or_else(String::new, format_number);
        let _ = write!(
            out,
            "\nThe stress-to-weight ratio of this structure is {value}; the target is {target} or lower."
        );
    }
    if ctx.mass_regressed {
        let _ = write!(
            out,
            "\nThe total mass is above {} again. Bring it back under the limit while working on the stress-to-weight ratio.",
            format_number(c.max_mass)
        );
    }
    if let Some(best) = ctx.best {
        let _ = write!(out, "\nBest so far: {}", summary_line(best));
    }
    if !ctx.history.is_empty() {
        out.push_str("\nPrevious attempts:");
        for s in ctx.history {
            let _ = write!(out, "\n{}", summary_line(s));
        }
    }
    if ctx.history_full_k > 0 {
        let mut ranked: Vec<&SolutionScore> = ctx
            .history
            .iter()
            .filter(|s| s.metrics.total_mass().is_some())
            .collect();
        ranked.sort_by(|a, b| rank_key(a).partial_cmp(&rank_key(b)).expect("finite keys"));
        for s in ranked.into_iter().take(ctx.history_full_k) {
            let _ = write!(
                out,
                "\nIteration {} design:\n{}",
                s.iteration,
                design_code(&s.design.nodes, &s.design.members).trim_end()
            );
        }
    }
    if let Some(msg) = ctx.corrective {
        let _ = write!(out, "\n{msg}");
    }
}

/// Feasible first, then solvable, then lower mass, then earlier iteration.
fn rank_key(s: &SolutionScore) -> (u8, u8, f64, u32) {
    (
        u8::from(!s.report.feasible),
        u8::from(s.report.unsolvable),
        s.metrics.total_mass().unwrap_or(f64::MAX),
        s.iteration,
    )
}

/// `iteration 3: mass 12.5, max stress -9.8, feasible no`
pub fn summary_line(s: &SolutionScore) -> String {
    let mass = s
        .metrics
        .total_mass()
        .map_or_else(|| "n/a".to_owned(), format_number);
    let stress = s.analysis().map_or_else(
        || "unstable".to_owned(),
        |a| format_number(a.signed_max_stress()),
    );
    let stress = match &s.defect {
        Some(crate::constraints::Defect::Unparseable { .. }) => "unparseable".to_owned(),
        Some(crate::constraints::Defect::Invalid { .. }) => "invalid".to_owned(),
        _ => stress,
    };
    format!(
        "iteration {}: mass {mass}, max stress {stress}, feasible {}",
        s.iteration,
        if s.report.feasible { "yes" } else { "no" }
    )
}
