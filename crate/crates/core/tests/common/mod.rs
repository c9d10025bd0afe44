//! Fixture builders shared by the integration tests.
#![allow(dead_code)]

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trussloop::model::{
    AreaTable, ConstraintSpec, Load, Member, Point2, ProblemSpec, Support, SupportKind, TrussDesign,
};

pub fn nodes(list: &[(&str, f64, f64)]) -> IndexMap<String, Point2> {
    list.iter()
        .map(|(k, x, y)| ((*k).to_owned(), Point2::new(*x, *y)))
        .collect()
}

pub fn members(list: &[(&str, &str, &str, &str)]) -> IndexMap<String, Member> {
    list.iter()
        .map(|(k, a, b, area)| ((*k).to_owned(), Member::new(*a, *b, *area)))
        .collect()
}

pub fn unit_area_table() -> AreaTable {
    AreaTable::new([("1".to_owned(), 1.0)].into_iter().collect()).unwrap()
}

/// n1 (0,0) pinned, n2 (2,0) roller, n3 (1,1) apex loaded by (0, -1).
pub fn triangle() -> (TrussDesign, ProblemSpec) {
    let n = nodes(&[("n1", 0.0, 0.0), ("n2", 2.0, 0.0), ("n3", 1.0, 1.0)]);
    let problem = ProblemSpec::new(
        n.clone(),
        vec![Load::cartesian("n3", 0.0, -1.0)],
        vec![
            Support::new("n1", SupportKind::Pinned),
            Support::new("n2", SupportKind::Roller),
        ],
        unit_area_table(),
        ConstraintSpec::max_stress(100.0, 100.0),
        10,
        1.0,
    )
    .unwrap();
    let design = TrussDesign::new(
        n,
        members(&[
            ("m13", "n1", "n3", "1"),
            ("m23", "n2", "n3", "1"),
            ("m12", "n1", "n2", "1"),
        ]),
    );
    (design, problem)
}

/// Three collinear nodes joined end to end: a mechanism under any
/// transverse load.
pub fn collinear_chain() -> (TrussDesign, ProblemSpec) {
    let n = nodes(&[("n1", 0.0, 0.0), ("n3", 1.0, 0.0), ("n2", 2.0, 0.0)]);
    let problem = ProblemSpec::new(
        n.clone(),
        vec![Load::cartesian("n3", 0.0, -1.0)],
        vec![
            Support::new("n1", SupportKind::Pinned),
            Support::new("n2", SupportKind::Roller),
        ],
        unit_area_table(),
        ConstraintSpec::max_stress(100.0, 100.0),
        10,
        1.0,
    )
    .unwrap();
    let design = TrussDesign::new(
        n,
        members(&[("a", "n1", "n3", "1"), ("b", "n3", "n2", "1")]),
    );
    (design, problem)
}

pub struct RandomTruss {
    pub design: TrussDesign,
    pub problem: ProblemSpec,
    /// Exactly 2n - 3 members on a pin and a roller.
    pub determinate: bool,
}

/// A stable truss grown by attaching each new node to two earlier ones,
/// with optional redundant members.
pub fn random_truss(rng: &mut ChaCha8Rng, node_count: usize, redundant: usize) -> RandomTruss {
    let span = rng.random_range(2.0..8.0);
    let mut pts: Vec<(f64, f64)> = vec![(0.0, 0.0), (span, 0.0)];
    let mut bars: Vec<(usize, usize)> = Vec::new();
    while pts.len() < node_count {
        let p = (
            rng.random_range(-1.0..span + 1.0),
            rng.random_range(0.5..4.0),
        );
        if pts.iter().any(|q| (p.0 - q.0).hypot(p.1 - q.1) < 0.3) {
            continue;
        }
        let a = rng.random_range(0..pts.len());
        let b = rng.random_range(0..pts.len());
        if a == b {
            continue;
        }
        let (ax, ay) = (pts[a].0 - p.0, pts[a].1 - p.1);
        let (bx, by) = (pts[b].0 - p.0, pts[b].1 - p.1);
        let sin = (ax * by - ay * bx).abs() / (ax.hypot(ay) * bx.hypot(by));
        if sin < 0.2 {
            continue;
        }
        let k = pts.len();
        pts.push(p);
        bars.push((a, k));
        bars.push((b, k));
    }
    // Close the base so the two supports plus growth stay determinate.
    bars.push((0, 1));
    let mut extra = 0;
    let mut guard = 0;
    while extra < redundant && guard < 100 {
        guard += 1;
        let a = rng.random_range(0..pts.len());
        let b = rng.random_range(0..pts.len());
        if a == b
            || bars
                .iter()
                .any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a))
        {
            continue;
        }
        bars.push((a, b));
        extra += 1;
    }

    let node_map: IndexMap<String, Point2> = pts
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| (format!("node_{}", i + 1), Point2::new(x, y)))
        .collect();
    let member_map: IndexMap<String, Member> = bars
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let area = rng.random_range(1..=10).to_string();
            (
                format!("member_{}", i + 1),
                Member::new(format!("node_{}", a + 1), format!("node_{}", b + 1), area),
            )
        })
        .collect();
    let load_count = rng.random_range(1..=3);
    let loads = (0..load_count)
        .map(|_| {
            let n = rng.random_range(0..pts.len());
            Load::cartesian(
                format!("node_{}", n + 1),
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
            )
        })
        .collect();
    let problem = ProblemSpec::new(
        node_map.clone(),
        loads,
        vec![
            Support::new("node_1", SupportKind::Pinned),
            Support::new("node_2", SupportKind::Roller),
        ],
        AreaTable::default(),
        ConstraintSpec::max_stress(1e9, 1e9),
        30,
        1.0,
    )
    .unwrap();
    RandomTruss {
        design: TrussDesign::new(node_map, member_map),
        problem,
        determinate: extra == 0,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A response holding `design` in a fenced block.
pub fn response_for(design: &TrussDesign) -> String {
    format!(
        "```python\n{}```\n",
        trussloop::format::design_code(&design.nodes, &design.members)
    )
}

/// The triangle over the benchmark's loaded node, every member at `area`.
pub fn benchmark_triangle(area: &str, apex_y: f64) -> TrussDesign {
    TrussDesign::new(
        nodes(&[
            ("node_1", 0.0, 0.0),
            ("node_2", 6.0, 0.0),
            ("node_3", 2.0, 0.0),
            ("node_4", 2.0, apex_y),
        ]),
        members(&[
            ("member_1", "node_1", "node_3", area),
            ("member_2", "node_3", "node_2", area),
            ("member_3", "node_1", "node_4", area),
            ("member_4", "node_4", "node_2", area),
            ("member_5", "node_3", "node_4", area),
        ]),
    )
}
