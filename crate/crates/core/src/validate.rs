//! Structural validation of a candidate design against its problem.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{MemberId, NodeId, ProblemSpec, TrussDesign};

/// One rule a design breaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyId {
        what: String,
    },
    NonFiniteNode {
        node: NodeId,
    },
    MissingEndpoint {
        member: MemberId,
        node: NodeId,
    },
    SelfMember {
        member: MemberId,
    },
    DuplicatePair {
        member: MemberId,
        duplicate_of: MemberId,
    },
    UnknownAreaId {
        member: MemberId,
        area: String,
    },
    MovedGivenNode {
        node: NodeId,
    },
    DeletedGivenNode {
        node: NodeId,
    },
    ZeroLength {
        member: MemberId,
    },
    Disconnected {
        components: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId { what } => write!(f, "empty {what} identifier"),
            Violation::NonFiniteNode { node } => {
                write!(f, "node {node} has non-finite coordinates")
            }
            Violation::MissingEndpoint { member, node } => {
                write!(f, "member {member} references missing node {node}")
            }
            Violation::SelfMember { member } => {
                write!(f, "member {member} connects a node to itself")
            }
            Violation::DuplicatePair {
                member,
                duplicate_of,
            } => write!(
                f,
                "member {member} connects the same pair of nodes as {duplicate_of}"
            ),
            Violation::UnknownAreaId { member, area } => {
                write!(f, "member {member} uses unknown area id '{area}'")
            }
            Violation::MovedGivenNode { node } => {
                write!(f, "given node {node} was moved from its original position")
            }
            Violation::DeletedGivenNode { node } => write!(f, "given node {node} was removed"),
            Violation::ZeroLength { member } => write!(f, "member {member} has zero length"),
            Violation::Disconnected { components } => write!(
                f,
                "structure is not connected ({components} separate parts)"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Rules that make the design unusable.
    pub violations: Vec<Violation>,
    /// Findings that do not block analysis.
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn moved_given_nodes(&self) -> bool {
        self.violations.iter().any(|v| {
            matches!(
                v,
                Violation::MovedGivenNode { .. } | Violation::DeletedGivenNode { .. }
            )
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationOptions {
    /// Treat a disconnected member graph as a violation instead of a warning.
    pub strict_connectivity: bool,
}

pub fn validate_design(design: &TrussDesign, problem: &ProblemSpec) -> ValidationReport {
    validate_design_with(design, problem, ValidationOptions::default())
}

pub fn validate_design_with(
    design: &TrussDesign,
    problem: &ProblemSpec,
    options: ValidationOptions,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let v = &mut report.violations;

    for (id, p) in &design.nodes {
        if id.is_empty() {
            v.push(Violation::EmptyId {
                what: "node".into(),
            });
        }
        if !p.is_finite() {
            v.push(Violation::NonFiniteNode { node: id.clone() });
        }
    }

    for (id, given) in &problem.given_nodes {
        match design.nodes.get(id) {
            None => v.push(Violation::DeletedGivenNode { node: id.clone() }),
            Some(p) if p != given => v.push(Violation::MovedGivenNode { node: id.clone() }),
            Some(_) => {}
        }
    }

    let mut pairs: HashMap<(&str, &str), &MemberId> = HashMap::new();
    for (id, m) in &design.members {
        if id.is_empty() {
            v.push(Violation::EmptyId {
                what: "member".into(),
            });
        }
        let mut endpoints_ok = true;
        for node in [&m.a, &m.b] {
            if !design.nodes.contains_key(node) {
                v.push(Violation::MissingEndpoint {
                    member: id.clone(),
                    node: node.clone(),
                });
                endpoints_ok = false;
            }
        }
        if !problem.area_table.contains(&m.area) {
            v.push(Violation::UnknownAreaId {
                member: id.clone(),
                area: m.area.clone(),
            });
        }
        if m.a == m.b {
            v.push(Violation::SelfMember { member: id.clone() });
            continue;
        }
        if endpoints_ok {
            let len = design.nodes[&m.a].distance(&design.nodes[&m.b]);
            if len.is_nan() || len <= 0.0 {
                v.push(Violation::ZeroLength { member: id.clone() });
            }
        }
        match pairs.get(&m.pair_key()) {
            Some(first) => v.push(Violation::DuplicatePair {
                member: id.clone(),
                duplicate_of: (*first).clone(),
            }),
            None => {
                pairs.insert(m.pair_key(), id);
            }
        }
    }

    let components = member_graph_components(design);
    if components > 1 {
        let finding = Violation::Disconnected { components };
        if options.strict_connectivity {
            report.violations.push(finding);
        } else {
            report.warnings.push(finding);
        }
    }
    report
}

/// Connected components of the graph formed by nodes touched by members.
/// Nodes with no members are ignored.
fn member_graph_components(design: &TrussDesign) -> usize {
    let mut parent: HashMap<&str, &str> = HashMap::new();
    fn find<'a>(parent: &mut HashMap<&'a str, &'a str>, x: &'a str) -> &'a str {
        let mut root = x;
        while let Some(&p) = parent.get(root) {
            if p == root {
                break;
            }
            root = p;
        }
        let mut cur = x;
        while cur != root {
            let next = parent[cur];
            parent.insert(cur, root);
            cur = next;
        }
        root
    }
    for m in design.members.values() {
        if !design.nodes.contains_key(&m.a) || !design.nodes.contains_key(&m.b) {
            continue;
        }
        parent.entry(&m.a).or_insert(&m.a);
        parent.entry(&m.b).or_insert(&m.b);
        let ra = find(&mut parent, &m.a);
        let rb = find(&mut parent, &m.b);
        if ra != rb {
            parent.insert(ra, rb);
        }
    }
    let keys: Vec<&str> = parent.keys().copied().collect();
    let roots: HashSet<&str> = keys.into_iter().map(|k| find(&mut parent, k)).collect();
    roots.len()
}
