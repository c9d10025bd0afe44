//! Linear-elastic analysis of pin-jointed plane trusses by the direct
//! stiffness method.
//!
//! Each node owns two global degrees of freedom (x then y) in design node
//! order. Supports fix DOFs; nodes that no member touches carry no stiffness
//! and are left out of the solve (their displacement is reported as zero).
//! Loads applied to such a node make the structure a mechanism.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::DenseMatrix;
use crate::model::{
    total_mass, AreaTable, MassBreakdown, MemberId, ModelError, NodeId, ProblemSpec, TrussDesign,
};

/// Pivot floor relative to the largest diagonal entry of the free block.
pub const PIVOT_TOLERANCE: f64 = 1e-10;
/// Pivot-ratio ceiling above which a structure is treated as a near-mechanism.
pub const MAX_CONDITION: f64 = 1e12;
/// Relative band within which two stress magnitudes count as tied.
pub const STRESS_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("structure is unstable (singular stiffness matrix): {detail}")]
    Mechanism { detail: String },
    #[error("load targets node `{0}` which is not in the design")]
    Unloadable(NodeId),
    #[error("member `{0}` has zero length")]
    ZeroLength(MemberId),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

/// Bijection between `(node, axis)` and global DOF indices, partitioned into
/// free, constrained and inactive (member-less node) sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    nodes: Vec<NodeId>,
    pub free: Vec<usize>,
    pub constrained: Vec<usize>,
    pub inactive: Vec<usize>,
}

impl DofMap {
    pub fn new(design: &TrussDesign, problem: &ProblemSpec) -> Self {
        let nodes: Vec<NodeId> = design.nodes.keys().cloned().collect();
        let mut touched = vec![false; nodes.len()];
        for m in design.members.values() {
            for end in [&m.a, &m.b] {
                if let Some(i) = design.nodes.get_index_of(end) {
                    touched[i] = true;
                }
            }
        }
        let mut map = DofMap {
            nodes,
            free: Vec::new(),
            constrained: Vec::new(),
            inactive: Vec::new(),
        };
        for (i, id) in map.nodes.iter().enumerate() {
            let support = problem.support_at(id);
            let fixed = [
                support.is_some_and(|s| s.fixes_x()),
                support.is_some_and(|s| s.fixes_y()),
            ];
            for (axis, is_fixed) in fixed.into_iter().enumerate() {
                let dof = 2 * i + axis;
                if is_fixed {
                    map.constrained.push(dof);
                } else if touched[i] {
                    map.free.push(dof);
                } else {
                    map.inactive.push(dof);
                }
            }
        }
        map
    }

    pub fn len(&self) -> usize {
        2 * self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index(&self, node: &str, axis: Axis) -> Option<usize> {
        let i = self.nodes.iter().position(|n| n == node)?;
        Some(2 * i + matches!(axis, Axis::Y) as usize)
    }

    pub fn dof(&self, index: usize) -> Option<(&NodeId, Axis)> {
        let node = self.nodes.get(index / 2)?;
        Some((
            node,
            if index.is_multiple_of(2) {
                Axis::X
            } else {
                Axis::Y
            },
        ))
    }
}

/// Everything the solver reports about one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub displacements: IndexMap<NodeId, (f64, f64)>,
    /// Axial stress, tension positive.
    pub member_stress: IndexMap<MemberId, f64>,
    pub member_force: IndexMap<MemberId, f64>,
    pub member_mass: IndexMap<MemberId, f64>,
    pub total_mass: f64,
    pub reactions: IndexMap<NodeId, (f64, f64)>,
    /// Member with the largest |stress|; ties go to the smallest id.
    /// Absent only when the design has no members.
    pub max_stress_member: Option<MemberId>,
    pub max_abs_stress: f64,
}

impl AnalysisResult {
    /// Signed stress of [`Self::max_stress_member`].
    pub fn signed_max_stress(&self) -> f64 {
        self.max_stress_member
            .as_ref()
            .map_or(0.0, |m| self.member_stress[m])
    }
}

struct Element {
    dofs: [usize; 4],
    c: f64,
    s: f64,
    length: f64,
    area: f64,
}

fn elements(design: &TrussDesign, table: &AreaTable) -> Result<Vec<(MemberId, Element)>, FemError> {
    design
        .members
        .iter()
        .map(|(id, m)| {
            let ia = design
                .nodes
                .get_index_of(&m.a)
                .ok_or_else(|| ModelError::UnknownNode(m.a.clone()))?;
            let ib = design
                .nodes
                .get_index_of(&m.b)
                .ok_or_else(|| ModelError::UnknownNode(m.b.clone()))?;
            let area = table
                .get(&m.area)
                .ok_or_else(|| ModelError::UnknownArea(m.area.clone()))?;
            let pa = design.nodes[ia];
            let pb = design.nodes[ib];
            let (dx, dy) = (pb.x - pa.x, pb.y - pa.y);
            let length = dx.hypot(dy);
            if length.is_nan() || length <= 0.0 || length.is_infinite() {
                return Err(FemError::ZeroLength(id.clone()));
            }
            Ok((
                id.clone(),
                Element {
                    dofs: [2 * ia, 2 * ia + 1, 2 * ib, 2 * ib + 1],
                    c: dx / length,
                    s: dy / length,
                    length,
                    area,
                },
            ))
        })
        .collect()
}

/// Global stiffness matrix (2n × 2n, design node order).
pub fn assemble_stiffness(
    design: &TrussDesign,
    table: &AreaTable,
    elastic_modulus: f64,
) -> Result<DenseMatrix, FemError> {
    let elems = elements(design, table)?;
    Ok(assemble(design.nodes.len(), &elems, elastic_modulus))
}

fn assemble(n_nodes: usize, elems: &[(MemberId, Element)], e: f64) -> DenseMatrix {
    let mut k = DenseMatrix::zeros(2 * n_nodes);
    for (_, el) in elems {
        let ea_l = e * el.area / el.length;
        let t = [-el.c, -el.s, el.c, el.s];
        for (i, &gi) in el.dofs.iter().enumerate() {
            for (j, &gj) in el.dofs.iter().enumerate() {
                k[(gi, gj)] += ea_l * t[i] * t[j];
            }
        }
    }
    k
}

/// Global load vector (2n, design node order).
pub fn load_vector(design: &TrussDesign, problem: &ProblemSpec) -> Result<Vec<f64>, FemError> {
    let mut f = vec![0.0; 2 * design.nodes.len()];
    for (node, fx, fy) in problem.resolved_loads() {
        let i = design
            .nodes
            .get_index_of(node)
            .ok_or_else(|| FemError::Unloadable(node.clone()))?;
        f[2 * i] += fx;
        f[2 * i + 1] += fy;
    }
    Ok(f)
}

pub fn solve(design: &TrussDesign, problem: &ProblemSpec) -> Result<AnalysisResult, FemError> {
    let e = problem.elastic_modulus;
    let elems = elements(design, &problem.area_table)?;
    let f = load_vector(design, problem)?;
    let dofs = DofMap::new(design, problem);

    for &i in &dofs.inactive {
        if f[i] != 0.0 {
            let (node, _) = dofs.dof(i).expect("dof in range");
            return Err(FemError::Mechanism {
                detail: format!("loaded node {node} is not connected to any member"),
            });
        }
    }

    let k = assemble(design.nodes.len(), &elems, e);
    let k_ff = k.principal(&dofs.free);
    let f_f: Vec<f64> = dofs.free.iter().map(|&i| f[i]).collect();
    let factor = k_ff.ldlt(PIVOT_TOLERANCE).map_err(|p| {
        let (node, axis) = dofs.dof(dofs.free[p.index]).expect("dof in range");
        FemError::Mechanism {
            detail: format!(
                "zero stiffness against {axis:?} motion of {node} (pivot {:.3e})",
                p.pivot
            ),
        }
    })?;
    let cond = factor.condition_estimate();
    if cond > MAX_CONDITION {
        return Err(FemError::Mechanism {
            detail: format!("near-mechanism, pivot ratio {cond:.3e}"),
        });
    }
    let u_f = factor.solve(&f_f);

    let mut u = vec![0.0; dofs.len()];
    for (&i, &v) in dofs.free.iter().zip(&u_f) {
        u[i] = v;
    }

    let displacements = design
        .nodes
        .keys()
        .enumerate()
        .map(|(i, id)| (id.clone(), (u[2 * i], u[2 * i + 1])))
        .collect();

    let mut member_stress = IndexMap::with_capacity(elems.len());
    let mut member_force = IndexMap::with_capacity(elems.len());
    for (id, el) in &elems {
        let t = [-el.c, -el.s, el.c, el.s];
        let elongation: f64 = el.dofs.iter().zip(t).map(|(&d, ti)| ti * u[d]).sum();
        let stress = e / el.length * elongation;
        member_stress.insert(id.clone(), stress);
        member_force.insert(id.clone(), stress * el.area);
    }

    // r_c = K_cf u_f - f_c
    let mut reactions: IndexMap<NodeId, (f64, f64)> = IndexMap::new();
    for s in &problem.supports {
        if design.nodes.contains_key(&s.node) {
            reactions.insert(s.node.clone(), (0.0, 0.0));
        }
    }
    for &c in &dofs.constrained {
        let r: f64 = dofs
            .free
            .iter()
            .zip(&u_f)
            .map(|(&j, &uj)| k[(c, j)] * uj)
            .sum::<f64>()
            - f[c];
        let (node, axis) = dofs.dof(c).expect("dof in range");
        let entry = reactions.entry(node.clone()).or_insert((0.0, 0.0));
        match axis {
            Axis::X => entry.0 = r,
            Axis::Y => entry.1 = r,
        }
    }

    let mass = total_mass(design, &problem.area_table)?;
    let (max_stress_member, max_abs_stress) = extreme_member(&member_stress);

    Ok(AnalysisResult {
        displacements,
        member_stress,
        member_force,
        member_mass: mass.member_mass,
        total_mass: mass.total,
        reactions,
        max_stress_member,
        max_abs_stress,
    })
}

fn extreme_member(stress: &IndexMap<MemberId, f64>) -> (Option<MemberId>, f64) {
    let max = stress.values().map(|s| s.abs()).fold(0.0, f64::max);
    let band = max * (1.0 - STRESS_TIE_TOLERANCE);
    let member = stress
        .iter()
        .filter(|(_, s)| s.abs() >= band)
        .map(|(id, _)| id)
        .min()
        .cloned();
    (member, max)
}

/// Outcome of analysing one design: either a full result or the reason the
/// structure could not be analysed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisResult>,
    /// Known whenever the members and areas are well formed, even if the
    /// structure is a mechanism.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<MassBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl SolutionMetrics {
    pub fn unsolvable(&self) -> bool {
        self.analysis.is_none()
    }

    pub fn total_mass(&self) -> Option<f64> {
        self.mass.as_ref().map(|m| m.total)
    }

    pub fn max_abs_stress(&self) -> Option<f64> {
        self.analysis.as_ref().map(|a| a.max_abs_stress)
    }
}

/// Solve and bundle with the mass; a failed solve becomes an infeasibility
/// record instead of an error.
pub fn analyze(design: &TrussDesign, problem: &ProblemSpec) -> SolutionMetrics {
    match solve(design, problem) {
        Ok(a) => SolutionMetrics {
            mass: Some(MassBreakdown {
                member_mass: a.member_mass.clone(),
                total: a.total_mass,
            }),
            analysis: Some(a),
            failure: None,
        },
        Err(err) => SolutionMetrics {
            analysis: None,
            mass: total_mass(design, &problem.area_table).ok(),
            failure: Some(err.to_string()),
        },
    }
}
