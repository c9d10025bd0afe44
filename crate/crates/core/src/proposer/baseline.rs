//! Random local search used as a non-LLM reference proposer.
//!
//! Each call mutates the best design seen so far by one move and emits it as
//! a code block, so the output goes through the same parser as any other
//! backend.

use std::collections::HashSet;
use std::time::Duration;

use indexmap::IndexMap;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Proposer, ProposerError, ProposerRequest, ProposerResponse};
use crate::constraints::SolutionScore;
use crate::format::design_code;
use crate::model::{Member, NodeId, Point2, ProblemSpec, Task, TrussDesign};

/// Area id used for the cold-start design and for newly added members.
pub const BASELINE_COLD_AREA: &str = "5";

fn mid_area(problem: &ProblemSpec) -> String {
    let t = &problem.area_table;
    if t.contains(BASELINE_COLD_AREA) {
        BASELINE_COLD_AREA.to_owned()
    } else {
        t.id_at(t.len() / 2).cloned().unwrap_or_default()
    }
}

/// All pairs of given nodes.
fn cold_start(problem: &ProblemSpec) -> TrussDesign {
    let area = mid_area(problem);
    let ids: Vec<&NodeId> = problem.given_nodes.keys().collect();
    let mut members = IndexMap::new();
    for i in 0..ids.len() {
        for j in (i + 1)..ids.len() {
            let k = members.len() + 1;
            members.insert(
                format!("member_{k}"),
                Member::new(ids[i].clone(), ids[j].clone(), area.clone()),
            );
        }
    }
    TrussDesign::new(problem.given_nodes.clone(), members)
}

fn next_id(existing: impl Iterator<Item = impl AsRef<str>>, prefix: &str) -> String {
    let taken: HashSet<String> = existing.map(|s| s.as_ref().to_owned()).collect();
    let mut k = taken.len() + 1;
    while taken.contains(&format!("{prefix}{k}")) {
        k += 1;
    }
    format!("{prefix}{k}")
}

/// Given-node bounding box grown by half its larger side in every direction.
fn sample_box(problem: &ProblemSpec) -> (f64, f64, f64, f64) {
    let pts = problem.given_nodes.values();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in pts {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    if x0 > x1 {
        return (-1.0, -1.0, 1.0, 1.0);
    }
    let pad = 0.5 * (x1 - x0).max(y1 - y0).max(1.0);
    (x0 - pad, y0 - pad, x1 + pad, y1 + pad)
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn has_pair(design: &TrussDesign, a: &str, b: &str) -> bool {
    design
        .members
        .values()
        .any(|m| (m.a == a && m.b == b) || (m.a == b && m.b == a))
}

/// Adds a node wired to its `links` nearest neighbours.
fn add_node(
    d: &mut TrussDesign,
    problem: &ProblemSpec,
    links: usize,
    rng: &mut ChaCha8Rng,
) -> bool {
    let (x0, y0, x1, y1) = sample_box(problem);
    for _ in 0..16 {
        let p = Point2::new(
            round2(rng.random_range(x0..=x1)),
            round2(rng.random_range(y0..=y1)),
        );
        if d.nodes.values().any(|q| q.distance(&p) < 1e-6) {
            continue;
        }
        let mut near: Vec<(&NodeId, f64)> =
            d.nodes.iter().map(|(k, q)| (k, q.distance(&p))).collect();
        near.sort_by(|a, b| a.1.total_cmp(&b.1));
        let targets: Vec<NodeId> = near.iter().take(links).map(|(k, _)| (*k).clone()).collect();
        let id = next_id(d.nodes.keys(), "node_");
        d.nodes.insert(id.clone(), p);
        let area = mid_area(problem);
        for t in targets {
            let mid = next_id(d.members.keys(), "member_");
            d.members
                .insert(mid, Member::new(t, id.clone(), area.clone()));
        }
        return true;
    }
    false
}

fn reconnect(d: &mut TrussDesign, problem: &ProblemSpec, rng: &mut ChaCha8Rng) -> bool {
    let ids: Vec<String> = d.members.keys().cloned().collect();
    let Some(mid) = ids.choose(rng) else {
        return false;
    };
    let m = d.members[mid].clone();
    let keep_a = rng.random_bool(0.5);
    let fixed = if keep_a { &m.a } else { &m.b };
    let candidates: Vec<&NodeId> = d
        .nodes
        .keys()
        .filter(|n| *n != &m.a && *n != &m.b && !has_pair(d, fixed, n))
        .filter(|n| d.nodes[*n].distance(&d.nodes[fixed]) > 1e-9)
        .collect();
    let Some(new_end) = candidates.choose(rng).map(|n| (*n).clone()) else {
        return false;
    };
    let member = if keep_a {
        Member::new(m.a.clone(), new_end, m.area.clone())
    } else {
        Member::new(new_end, m.b.clone(), m.area.clone())
    };
    d.members.insert(mid.clone(), member);
    let given: HashSet<&str> = problem.given_nodes.keys().map(String::as_str).collect();
    prune_orphans(d, &given);
    true
}

fn bump_area(d: &mut TrussDesign, problem: &ProblemSpec, rng: &mut ChaCha8Rng) -> bool {
    let ids: Vec<String> = d.members.keys().cloned().collect();
    let Some(mid) = ids.choose(rng) else {
        return false;
    };
    let table = &problem.area_table;
    let m = d.members.get_mut(mid).expect("chosen id exists");
    let idx = table.index_of(&m.area).unwrap_or(table.len() / 2);
    let up = rng.random_bool(0.5);
    let next = if up {
        (idx + 1).min(table.len() - 1)
    } else {
        idx.saturating_sub(1)
    };
    m.area = table.id_at(next).expect("index in range").clone();
    true
}

/// Member-graph components over nodes that have at least one member.
fn connected(d: &TrussDesign) -> bool {
    let mut adj: IndexMap<&str, Vec<&str>> = IndexMap::new();
    for m in d.members.values() {
        adj.entry(&m.a).or_default().push(&m.b);
        adj.entry(&m.b).or_default().push(&m.a);
    }
    let Some(start) = adj.keys().next().copied() else {
        return true;
    };
    let mut seen = HashSet::from([start]);
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        for &next in &adj[n] {
            if seen.insert(next) {
                stack.push(next);
            }
        }
    }
    seen.len() == adj.len()
}

fn prune_orphans(d: &mut TrussDesign, keep: &HashSet<&str>) {
    let used: HashSet<String> = d
        .members
        .values()
        .flat_map(|m| [m.a.clone(), m.b.clone()])
        .collect();
    d.nodes
        .retain(|k, _| used.contains(k) || keep.contains(k.as_str()));
}

fn delete_node(d: &mut TrussDesign, problem: &ProblemSpec, rng: &mut ChaCha8Rng) -> bool {
    let added: Vec<NodeId> = d
        .nodes
        .keys()
        .filter(|k| !problem.given_nodes.contains_key(*k))
        .cloned()
        .collect();
    let removable: Vec<TrussDesign> = added
        .iter()
        .filter_map(|n| {
            let mut trial = d.clone();
            trial.nodes.shift_remove(n);
            trial.members.retain(|_, m| &m.a != n && &m.b != n);
            connected(&trial).then_some(trial)
        })
        .collect();
    match removable.choose(rng) {
        Some(t) => {
            *d = t.clone();
            let given: HashSet<&str> = problem.given_nodes.keys().map(String::as_str).collect();
            prune_orphans(d, &given);
            true
        }
        None => false,
    }
}

/// One mutation of `best` (or the cold-start design when there is none),
/// written as a fenced code block.
pub fn baseline_propose(best: Option<&SolutionScore>, problem: &ProblemSpec, seed: u64) -> String {
    let design = match best {
        Some(s) if !s.design.members.is_empty() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // An unstable base needs bracing more than a light new node.
            let links = if s.report.unsolvable { 3 } else { 2 };
            mutate(&s.design, problem, links, &mut rng)
        }
        _ => cold_start(problem),
    };
    format!(
        "```python\n{}```\n",
        design_code(&design.nodes, &design.members)
    )
}

fn mutate(
    base: &TrussDesign,
    problem: &ProblemSpec,
    links: usize,
    rng: &mut ChaCha8Rng,
) -> TrussDesign {
    let mut d = base.clone();
    for _ in 0..8 {
        let roll: f64 = rng.random();
        let done = if roll < 0.25 {
            add_node(&mut d, problem, links, rng)
        } else if roll < 0.45 {
            reconnect(&mut d, problem, rng)
        } else if roll < 0.85 {
            bump_area(&mut d, problem, rng)
        } else {
            delete_node(&mut d, problem, rng)
        };
        if done {
            break;
        }
    }
    d
}

/// How far a score is from feasibility: summed relative excess over each
/// limit, infinite when it could not be analysed.
fn shortfall(score: &SolutionScore, problem: &ProblemSpec) -> f64 {
    let (Some(a), false) = (score.analysis(), score.report.unsolvable) else {
        return f64::INFINITY;
    };
    let c = &problem.constraints;
    let excess = |value: f64, limit: f64| (value / limit - 1.0).max(0.0);
    let mut s = excess(a.total_mass, c.max_mass);
    if let Some(limit) = c.max_abs_stress {
        s += excess(a.max_abs_stress, limit);
    }
    if c.task == Task::StressToWeight {
        let ratio = score.report.ratio_value.unwrap_or(f64::INFINITY);
        s += excess(ratio, c.ratio_target.unwrap_or(f64::INFINITY));
    }
    s
}

/// Baseline backend: keeps the best observed design and mutates it.
#[derive(Debug, Clone)]
pub struct BaselineProposer {
    problem: ProblemSpec,
    seed: u64,
    calls: u64,
    best: Option<(f64, SolutionScore)>,
}

impl BaselineProposer {
    pub fn new(problem: ProblemSpec, seed: u64) -> Self {
        Self {
            problem,
            seed,
            calls: 0,
            best: None,
        }
    }

    pub fn best(&self) -> Option<&SolutionScore> {
        self.best.as_ref().map(|(_, s)| s)
    }
}

impl Proposer for BaselineProposer {
    fn backend_id(&self) -> String {
        "baseline".to_owned()
    }

    fn propose(&mut self, request: &ProposerRequest) -> Result<ProposerResponse, ProposerError> {
        request.check()?;
        let call_seed = self
            .seed
            .wrapping_add(self.calls.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        self.calls += 1;
        Ok(ProposerResponse {
            raw_text: baseline_propose(self.best(), &self.problem, call_seed),
            backend_id: self.backend_id(),
            latency: Duration::ZERO,
            token_usage: None,
        })
    }

    /// Accept equal-or-better scores so the search can drift across plateaus.
    fn observe(&mut self, score: &SolutionScore) {
        if score.design.members.is_empty() {
            return;
        }
        let s = shortfall(score, &self.problem);
        let better = match &self.best {
            None => true,
            Some((b, _)) => s <= *b,
        };
        if better {
            self.best = Some((s, score.clone()));
        }
    }
}
