//! Dict-literal rendering of designs and problem data, in the style the
//! proposer is asked to answer in: `{'node_1': (0, 0), 'node_2': (6, 0)}`.
//!
//! Numbers are printed with at most six significant digits and no trailing
//! zeros; the response parser reads the same syntax back.

use std::fmt::{self, Write as _};

use indexmap::IndexMap;

use crate::model::{AreaTable, Load, LoadVector, Member, MemberId, NodeId, Point2, Support};

/// Significant digits used for every number in a prompt.
pub const SIGNIFICANT_DIGITS: usize = 6;

/// A literal value tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Str(String),
    Num(f64),
    Tuple(Vec<Literal>),
    Dict(Vec<(String, Literal)>),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Str(s) => write_quoted(f, s),
            Literal::Num(v) => f.write_str(&format_number(*v)),
            Literal::Tuple(items) => {
                f.write_char('(')?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                if items.len() == 1 {
                    f.write_char(',')?;
                }
                f.write_char(')')
            }
            Literal::Dict(entries) => {
                f.write_char('{')?;
                for (i, (k, v)) in entries.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write_quoted(f, k)?;
                    write!(f, ": {v}")?;
                }
                f.write_char('}')
            }
        }
    }
}

fn write_quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_char('\'')?;
    for c in s.chars() {
        match c {
            '\'' => f.write_str("\\'")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\r' => f.write_str("\\r")?,
            '\t' => f.write_str("\\t")?,
            c => f.write_char(c)?,
        }
    }
    f.write_char('\'')
}

/// `%g`-style rendering with [`SIGNIFICANT_DIGITS`] digits.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_owned();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.to_owned();
    }
    if v == 0.0 {
        return "0".to_owned();
    }
    let p = SIGNIFICANT_DIGITS;
    // Rounding decides the exponent, so format in scientific form first.
    let sci = format!("{:.*e}", p - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, v);
        let s = trim_fraction(&s);
        if s == "-0" {
            "0".to_owned()
        } else {
            s.to_owned()
        }
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// The value a number takes after a render/parse cycle.
pub fn rounded(v: f64) -> f64 {
    format_number(v).parse().unwrap_or(v)
}

pub fn nodes_literal(nodes: &IndexMap<NodeId, Point2>) -> Literal {
    Literal::Dict(
        nodes
            .iter()
            .map(|(k, p)| {
                (
                    k.clone(),
                    Literal::Tuple(vec![Literal::Num(p.x), Literal::Num(p.y)]),
                )
            })
            .collect(),
    )
}

pub fn members_literal(members: &IndexMap<MemberId, Member>) -> Literal {
    Literal::Dict(
        members
            .iter()
            .map(|(k, m)| {
                (
                    k.clone(),
                    Literal::Tuple(vec![
                        Literal::Str(m.a.clone()),
                        Literal::Str(m.b.clone()),
                        Literal::Str(m.area.clone()),
                    ]),
                )
            })
            .collect(),
    )
}

/// Loads as written: `(magnitude, direction)` or `(fx, fy)`.
pub fn loads_literal(loads: &[Load]) -> Literal {
    Literal::Dict(
        loads
            .iter()
            .map(|l| {
                let (a, b) = match l.vector {
                    LoadVector::Polar {
                        magnitude,
                        direction_deg,
                    } => (magnitude, direction_deg),
                    LoadVector::Cartesian { fx, fy } => (fx, fy),
                };
                (
                    l.node.clone(),
                    Literal::Tuple(vec![Literal::Num(a), Literal::Num(b)]),
                )
            })
            .collect(),
    )
}

pub fn supports_literal(supports: &[Support]) -> Literal {
    Literal::Dict(
        supports
            .iter()
            .map(|s| (s.node.clone(), Literal::Str(s.kind.label())))
            .collect(),
    )
}

pub fn area_table_literal(table: &AreaTable) -> Literal {
    Literal::Dict(
        table
            .iter()
            .map(|(k, v)| (k.clone(), Literal::Num(v)))
            .collect(),
    )
}

pub fn scalar_map_literal(map: &IndexMap<String, f64>) -> Literal {
    Literal::Dict(
        map.iter()
            .map(|(k, v)| (k.clone(), Literal::Num(*v)))
            .collect(),
    )
}

/// A design as the two assignments a proposer is asked to write.
pub fn design_code(
    nodes: &IndexMap<NodeId, Point2>,
    members: &IndexMap<MemberId, Member>,
) -> String {
    format!(
        "node_dict = {}\nmember_dict = {}\n",
        nodes_literal(nodes),
        members_literal(members)
    )
}
