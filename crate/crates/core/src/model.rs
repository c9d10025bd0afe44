//! Domain types for truss problems and candidate designs.
//!
//! A [`ProblemSpec`] is the immutable task definition (given nodes, loads,
//! supports, cross-section table, constraints). A [`TrussDesign`] is one
//! candidate answer: a node map plus a member map keyed by string ids.
//! All maps preserve insertion order so that prompts and exports list
//! entries in the order a proposer wrote them.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a joint, e.g. `"node_3"`.
pub type NodeId = String;
/// Identifier of a member, e.g. `"member_7"`.
pub type MemberId = String;
/// Key into an [`AreaTable`], e.g. `"4"`.
pub type AreaId = String;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("identifier must be non-empty ({0})")]
    EmptyId(&'static str),
    #[error("area `{0}` must be strictly positive")]
    NonPositiveArea(AreaId),
    #[error("area table is empty")]
    EmptyAreaTable,
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("unknown member `{0}`")]
    UnknownMember(MemberId),
    #[error("unknown area id `{0}`")]
    UnknownArea(AreaId),
    #[error("node `{0}` has more than one support")]
    DuplicateSupport(NodeId),
    #[error("at least two supported nodes and one pinned support are required")]
    InsufficientSupports,
    #[error("invalid constraints: {0}")]
    Constraints(String),
    #[error("max_iterations must be at least 1")]
    ZeroIterations,
    #[error("elastic modulus must be finite and strictly positive")]
    BadModulus,
    #[error("member `{0}` has zero length")]
    ZeroLength(MemberId),
}

/// A point in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }
}

impl From<(f64, f64)> for Point2 {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

impl From<Point2> for (f64, f64) {
    fn from(p: Point2) -> Self {
        (p.x, p.y)
    }
}

/// Ordered map from area id to cross-sectional area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IndexMap<AreaId, f64>", into = "IndexMap<AreaId, f64>")]
pub struct AreaTable(IndexMap<AreaId, f64>);

/// The benchmark cross-section table.
pub const DEFAULT_AREAS: [(&str, f64); 11] = [
    ("0", 1.0),
    ("1", 0.195),
    ("2", 0.782),
    ("3", 1.759),
    ("4", 3.128),
    ("5", 4.887),
    ("6", 7.037),
    ("7", 9.578),
    ("8", 12.511),
    ("9", 15.834),
    ("10", 19.548),
];

impl AreaTable {
    pub fn new(entries: IndexMap<AreaId, f64>) -> Result<Self, ModelError> {
        if entries.is_empty() {
            return Err(ModelError::EmptyAreaTable);
        }
        for (id, &area) in &entries {
            if id.is_empty() {
                return Err(ModelError::EmptyId("area id"));
            }
            if !area.is_finite() {
                return Err(ModelError::NonFinite(format!("area `{id}`")));
            }
            if area <= 0.0 {
                return Err(ModelError::NonPositiveArea(id.clone()));
            }
        }
        Ok(Self(entries))
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.0.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.0.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AreaId, f64)> {
        self.0.iter().map(|(k, v)| (k, *v))
    }

    pub fn ids(&self) -> impl Iterator<Item = &AreaId> {
        self.0.keys()
    }

    /// Position of `id` in table order.
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.0.get_index_of(id)
    }

    pub fn id_at(&self, index: usize) -> Option<&AreaId> {
        self.0.get_index(index).map(|(k, _)| k)
    }

    /// Every area multiplied by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> Result<Self, ModelError> {
        Self::new(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), v * factor))
                .collect(),
        )
    }
}

impl Default for AreaTable {
    fn default() -> Self {
        Self(
            DEFAULT_AREAS
                .iter()
                .map(|(k, v)| ((*k).to_owned(), *v))
                .collect(),
        )
    }
}

impl TryFrom<IndexMap<AreaId, f64>> for AreaTable {
    type Error = ModelError;

    fn try_from(value: IndexMap<AreaId, f64>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<AreaTable> for IndexMap<AreaId, f64> {
    fn from(t: AreaTable) -> Self {
        t.0
    }
}

/// How a load was written in the problem file.
///
/// Polar loads are `magnitude` along `direction_deg` measured counterclockwise
/// from +x; the magnitude may be negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LoadVector {
    Polar { magnitude: f64, direction_deg: f64 },
    Cartesian { fx: f64, fy: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub node: NodeId,
    #[serde(flatten)]
    pub vector: LoadVector,
}

impl Load {
    pub fn polar(node: impl Into<NodeId>, magnitude: f64, direction_deg: f64) -> Self {
        Self {
            node: node.into(),
            vector: LoadVector::Polar {
                magnitude,
                direction_deg,
            },
        }
    }

    pub fn cartesian(node: impl Into<NodeId>, fx: f64, fy: f64) -> Self {
        Self {
            node: node.into(),
            vector: LoadVector::Cartesian { fx, fy },
        }
    }
}

/// Cartesian components of a load.
pub fn load_components(load: &Load) -> Result<(f64, f64), ModelError> {
    let (fx, fy) = match load.vector {
        LoadVector::Polar {
            magnitude,
            direction_deg,
        } => {
            if !magnitude.is_finite() || !direction_deg.is_finite() {
                return Err(ModelError::NonFinite(format!("load on `{}`", load.node)));
            }
            let theta = direction_deg.to_radians();
            (magnitude * theta.cos(), magnitude * theta.sin())
        }
        LoadVector::Cartesian { fx, fy } => (fx, fy),
    };
    if !fx.is_finite() || !fy.is_finite() {
        return Err(ModelError::NonFinite(format!("load on `{}`", load.node)));
    }
    Ok((fx, fy))
}

/// Support condition at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportKind {
    /// Both translations fixed.
    Pinned,
    /// Vertical translation fixed, horizontal free.
    Roller,
    /// Explicit per-axis restraint.
    Axes { fix_x: bool, fix_y: bool },
}

impl SupportKind {
    pub fn fixes_x(self) -> bool {
        match self {
            SupportKind::Pinned => true,
            SupportKind::Roller => false,
            SupportKind::Axes { fix_x, .. } => fix_x,
        }
    }

    pub fn fixes_y(self) -> bool {
        match self {
            SupportKind::Pinned | SupportKind::Roller => true,
            SupportKind::Axes { fix_y, .. } => fix_y,
        }
    }

    fn is_full(self) -> bool {
        self.fixes_x() && self.fixes_y()
    }

    pub fn label(self) -> String {
        match self {
            SupportKind::Pinned => "pinned".to_owned(),
            SupportKind::Roller => "roller".to_owned(),
            SupportKind::Axes { fix_x, fix_y } => match (fix_x, fix_y) {
                (true, true) => "pinned".to_owned(),
                (true, false) => "roller_x".to_owned(),
                (false, true) => "roller".to_owned(),
                (false, false) => "free".to_owned(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub node: NodeId,
    #[serde(rename = "type")]
    pub kind: SupportKind,
}

impl Support {
    pub fn new(node: impl Into<NodeId>, kind: SupportKind) -> Self {
        Self {
            node: node.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    MaxStress,
    StressToWeight,
}

/// Limits a design must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConstraints")]
pub struct ConstraintSpec {
    pub task: Task,
    /// Required for `MaxStress`; an optional extra cap for `StressToWeight`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_stress: Option<f64>,
    /// Present iff the task is `StressToWeight`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio_target: Option<f64>,
    pub max_mass: f64,
}

#[derive(Deserialize)]
struct RawConstraints {
    task: Task,
    #[serde(default)]
    max_abs_stress: Option<f64>,
    #[serde(default)]
    ratio_target: Option<f64>,
    max_mass: f64,
}

impl TryFrom<RawConstraints> for ConstraintSpec {
    type Error = ModelError;

    fn try_from(r: RawConstraints) -> Result<Self, Self::Error> {
        let spec = ConstraintSpec {
            task: r.task,
            max_abs_stress: r.max_abs_stress,
            ratio_target: r.ratio_target,
            max_mass: r.max_mass,
        };
        spec.check()?;
        Ok(spec)
    }
}

impl ConstraintSpec {
    pub fn max_stress(limit: f64, max_mass: f64) -> Self {
        Self {
            task: Task::MaxStress,
            max_abs_stress: Some(limit),
            ratio_target: None,
            max_mass,
        }
    }

    pub fn stress_to_weight(ratio: f64, max_mass: f64) -> Self {
        Self {
            task: Task::StressToWeight,
            max_abs_stress: None,
            ratio_target: Some(ratio),
            max_mass,
        }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.max_mass) {
            return Err(ModelError::Constraints("max_mass must be > 0".into()));
        }
        if let Some(s) = self.max_abs_stress {
            if !positive(s) {
                return Err(ModelError::Constraints("max_abs_stress must be > 0".into()));
            }
        }
        if let Some(r) = self.ratio_target {
            if !positive(r) {
                return Err(ModelError::Constraints("ratio_target must be > 0".into()));
            }
        }
        match self.task {
            Task::MaxStress => {
                if self.max_abs_stress.is_none() {
                    return Err(ModelError::Constraints(
                        "max_stress task requires max_abs_stress".into(),
                    ));
                }
                if self.ratio_target.is_some() {
                    return Err(ModelError::Constraints(
                        "ratio_target is only valid for stress_to_weight".into(),
                    ));
                }
            }
            Task::StressToWeight => {
                if self.ratio_target.is_none() {
                    return Err(ModelError::Constraints(
                        "stress_to_weight task requires ratio_target".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn default_modulus() -> f64 {
    1.0
}

fn default_max_iterations() -> u32 {
    30
}

/// The immutable task definition.
///
/// Loads keep the form they were written in (polar loads are echoed back to
/// the proposer as written); [`ProblemSpec::resolved_loads`] holds the
/// cartesian components computed once at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblem")]
pub struct ProblemSpec {
    pub given_nodes: IndexMap<NodeId, Point2>,
    pub loads: Vec<Load>,
    pub supports: Vec<Support>,
    pub area_table: AreaTable,
    pub constraints: ConstraintSpec,
    pub max_iterations: u32,
    pub elastic_modulus: f64,
    #[serde(skip)]
    resolved: Vec<(NodeId, f64, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    given_nodes: IndexMap<NodeId, Point2>,
    loads: Vec<Load>,
    supports: Vec<Support>,
    #[serde(default)]
    area_table: AreaTable,
    constraints: ConstraintSpec,
    #[serde(default = "default_max_iterations")]
    max_iterations: u32,
    #[serde(default = "default_modulus")]
    elastic_modulus: f64,
}

impl TryFrom<RawProblem> for ProblemSpec {
    type Error = ModelError;

    fn try_from(r: RawProblem) -> Result<Self, Self::Error> {
        ProblemSpec::new(
            r.given_nodes,
            r.loads,
            r.supports,
            r.area_table,
            r.constraints,
            r.max_iterations,
            r.elastic_modulus,
        )
    }
}

impl ProblemSpec {
    pub fn new(
        given_nodes: IndexMap<NodeId, Point2>,
        loads: Vec<Load>,
        supports: Vec<Support>,
        area_table: AreaTable,
        constraints: ConstraintSpec,
        max_iterations: u32,
        elastic_modulus: f64,
    ) -> Result<Self, ModelError> {
        for (id, p) in &given_nodes {
            if id.is_empty() {
                return Err(ModelError::EmptyId("node id"));
            }
            if !p.is_finite() {
                return Err(ModelError::NonFinite(format!("node `{id}`")));
            }
        }
        let mut resolved = Vec::with_capacity(loads.len());
        for load in &loads {
            if !given_nodes.contains_key(&load.node) {
                return Err(ModelError::UnknownNode(load.node.clone()));
            }
            let (fx, fy) = load_components(load)?;
            resolved.push((load.node.clone(), fx, fy));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &supports {
            if !given_nodes.contains_key(&s.node) {
                return Err(ModelError::UnknownNode(s.node.clone()));
            }
            if !seen.insert(s.node.as_str()) {
                return Err(ModelError::DuplicateSupport(s.node.clone()));
            }
        }
        if supports.len() < 2 || !supports.iter().any(|s| s.kind.is_full()) {
            return Err(ModelError::InsufficientSupports);
        }
        constraints.check()?;
        if max_iterations == 0 {
            return Err(ModelError::ZeroIterations);
        }
        if !(elastic_modulus.is_finite() && elastic_modulus > 0.0) {
            return Err(ModelError::BadModulus);
        }
        Ok(Self {
            given_nodes,
            loads,
            supports,
            area_table,
            constraints,
            max_iterations,
            elastic_modulus,
            resolved,
        })
    }

    /// Cartesian `(node, fx, fy)` for every load, in file order.
    pub fn resolved_loads(&self) -> &[(NodeId, f64, f64)] {
        &self.resolved
    }

    pub fn support_at(&self, node: &str) -> Option<SupportKind> {
        self.supports
            .iter()
            .find(|s| s.node == node)
            .map(|s| s.kind)
    }

    pub fn with_constraints(&self, constraints: ConstraintSpec) -> Result<Self, ModelError> {
        constraints.check()?;
        let mut p = self.clone();
        p.constraints = constraints;
        Ok(p)
    }

    pub fn with_modulus(&self, e: f64) -> Result<Self, ModelError> {
        if !(e.is_finite() && e > 0.0) {
            return Err(ModelError::BadModulus);
        }
        let mut p = self.clone();
        p.elastic_modulus = e;
        Ok(p)
    }

    pub fn with_area_table(&self, table: AreaTable) -> Self {
        let mut p = self.clone();
        p.area_table = table;
        p
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// A member: two end nodes and a cross-section id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(NodeId, NodeId, AreaId)", into = "(NodeId, NodeId, AreaId)")]
pub struct Member {
    pub a: NodeId,
    pub b: NodeId,
    pub area: AreaId,
}

impl Member {
    pub fn new(a: impl Into<NodeId>, b: impl Into<NodeId>, area: impl Into<AreaId>) -> Self {
        Self {
            a: a.into(),
            b: b.into(),
            area: area.into(),
        }
    }

    /// Endpoints as an order-independent key.
    pub fn pair_key(&self) -> (&str, &str) {
        if self.a <= self.b {
            (&self.a, &self.b)
        } else {
            (&self.b, &self.a)
        }
    }
}

impl From<(NodeId, NodeId, AreaId)> for Member {
    fn from((a, b, area): (NodeId, NodeId, AreaId)) -> Self {
        Self { a, b, area }
    }
}

impl From<Member> for (NodeId, NodeId, AreaId) {
    fn from(m: Member) -> Self {
        (m.a, m.b, m.area)
    }
}

/// A candidate truss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrussDesign {
    pub nodes: IndexMap<NodeId, Point2>,
    pub members: IndexMap<MemberId, Member>,
}

impl TrussDesign {
    pub fn new(nodes: IndexMap<NodeId, Point2>, members: IndexMap<MemberId, Member>) -> Self {
        Self { nodes, members }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn endpoints(&self, member: &Member) -> Result<(Point2, Point2), ModelError> {
        let a = self
            .nodes
            .get(&member.a)
            .ok_or_else(|| ModelError::UnknownNode(member.a.clone()))?;
        let b = self
            .nodes
            .get(&member.b)
            .ok_or_else(|| ModelError::UnknownNode(member.b.clone()))?;
        Ok((*a, *b))
    }

    /// Uniformly scale every coordinate by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            nodes: self
                .nodes
                .iter()
                .map(|(id, p)| (id.clone(), Point2::new(p.x * k, p.y * k)))
                .collect(),
            members: self.members.clone(),
        }
    }
}

/// Euclidean length of a member.
pub fn member_length(design: &TrussDesign, id: &str) -> Result<f64, ModelError> {
    let member = design
        .members
        .get(id)
        .ok_or_else(|| ModelError::UnknownMember(id.to_owned()))?;
    let (a, b) = design.endpoints(member)?;
    Ok(a.distance(&b))
}

/// Per-member masses (length × area) and their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassBreakdown {
    pub member_mass: IndexMap<MemberId, f64>,
    pub total: f64,
}

/// Structure mass: the sum over members of length times cross-section area.
pub fn total_mass(design: &TrussDesign, table: &AreaTable) -> Result<MassBreakdown, ModelError> {
    let mut member_mass = IndexMap::with_capacity(design.members.len());
    let mut total = 0.0;
    for (id, member) in &design.members {
        let area = table
            .get(&member.area)
            .ok_or_else(|| ModelError::UnknownArea(member.area.clone()))?;
        let (a, b) = design.endpoints(member)?;
        let m = a.distance(&b) * area;
        total += m;
        member_mass.insert(id.clone(), m);
    }
    Ok(MassBreakdown { member_mass, total })
}

/// Benchmark problems: Task 1 (max stress) and Task 2 (stress-to-weight).
pub mod benchmarks {
    use super::*;

    pub const MASS_CAP: f64 = 30.0;
    pub const TASK1_STRESS_LIMITS: [f64; 3] = [15.0, 20.0, 30.0];
    pub const TASK2_RATIO_TARGETS: [f64; 3] = [0.5, 0.75, 1.0];

    fn given_nodes() -> IndexMap<NodeId, Point2> {
        [
            ("node_1", Point2::new(0.0, 0.0)),
            ("node_2", Point2::new(6.0, 0.0)),
            ("node_3", Point2::new(2.0, 0.0)),
        ]
        .into_iter()
        .map(|(k, p)| (k.to_owned(), p))
        .collect()
    }

    /// Task 1, variation 1..=3.
    pub fn task1(variation: usize) -> ProblemSpec {
        let limit = TASK1_STRESS_LIMITS[variation - 1];
        ProblemSpec::new(
            given_nodes(),
            vec![Load::polar("node_3", -10.0, -45.0)],
            vec![
                Support::new("node_1", SupportKind::Pinned),
                Support::new("node_2", SupportKind::Roller),
            ],
            AreaTable::default(),
            ConstraintSpec::max_stress(limit, MASS_CAP),
            30,
            1.0,
        )
        .expect("benchmark problem is valid")
    }

    /// Task 2, variation 1..=3.
    pub fn task2(variation: usize) -> ProblemSpec {
        let ratio = TASK2_RATIO_TARGETS[variation - 1];
        ProblemSpec::new(
            given_nodes(),
            vec![Load::polar("node_3", -15.0, -30.0)],
            vec![
                Support::new("node_1", SupportKind::Pinned),
                Support::new("node_2", SupportKind::Roller),
                Support::new("node_3", SupportKind::Roller),
            ],
            AreaTable::default(),
            ConstraintSpec::stress_to_weight(ratio, MASS_CAP),
            30,
            1.0,
        )
        .expect("benchmark problem is valid")
    }

    /// All six cells as `(label, problem)`.
    pub fn all() -> Vec<(String, ProblemSpec)> {
        (1..=3)
            .map(|v| (format!("task1_v{v}"), task1(v)))
            .chain((1..=3).map(|v| (format!("task2_v{v}"), task2(v))))
            .collect()
    }
}
