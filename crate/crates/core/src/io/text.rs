use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::Matrix3;

use crate::pose_graph::{normalize_angle, Edge, EdgeKind, NodeId, Pose2};
use crate::Error;

/// Vertices and edges as listed in a file, node ids as written.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawGraph {
    pub vertices: Vec<(NodeId, Pose2)>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dialect {
    G2o,
    Toro,
}

impl Dialect {
    fn tags(self) -> (&'static str, &'static str) {
        match self {
            Dialect::G2o => ("VERTEX_SE2", "EDGE_SE2"),
            Dialect::Toro => ("VERTEX2", "EDGE2"),
        }
    }

    /// Maps the six stored information entries to the upper triangle.
    fn info(self, v: &[f64]) -> Matrix3<f64> {
        let (i11, i12, i13, i22, i23, i33) = match self {
            Dialect::G2o => (v[0], v[1], v[2], v[3], v[4], v[5]),
            Dialect::Toro => (v[0], v[1], v[4], v[2], v[5], v[3]),
        };
        Matrix3::new(i11, i12, i13, i12, i22, i23, i13, i23, i33)
    }

    fn info_fields(self, m: &Matrix3<f64>) -> [f64; 6] {
        match self {
            Dialect::G2o => [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 1)], m[(1, 2)], m[(2, 2)]],
            Dialect::Toro => [m[(0, 0)], m[(0, 1)], m[(1, 1)], m[(2, 2)], m[(0, 2)], m[(1, 2)]],
        }
    }
}

fn field<T: FromStr>(tok: &str, line: usize) -> Result<T, Error> {
    tok.parse().map_err(|_| Error::MalformedRecord {
        line,
        reason: format!("cannot parse field {tok:?}"),
    })
}

fn floats(toks: &[&str], line: usize) -> Result<Vec<f64>, Error> {
    toks.iter()
        .map(|t| {
            let v: f64 = field(t, line)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::MalformedRecord {
                    line,
                    reason: format!("non-finite field {t:?}"),
                })
            }
        })
        .collect()
}

fn parse(text: &str, dialect: Dialect) -> Result<RawGraph, Error> {
    let (vtag, etag) = dialect.tags();
    let mut out = RawGraph::default();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        let Some(&tag) = toks.first() else { continue };
        if tag.starts_with('#') {
            continue;
        }
        let expect = if tag == vtag {
            5
        } else if tag == etag {
            12
        } else {
            log::warn!("line {line}: skipping unsupported record {tag}");
            continue;
        };
        if toks.len() != expect {
            return Err(Error::MalformedRecord {
                line,
                reason: format!("{tag} expects {} fields, found {}", expect - 1, toks.len() - 1),
            });
        }
        if tag == vtag {
            let id: usize = field(toks[1], line)?;
            let v = floats(&toks[2..5], line)?;
            out.vertices.push((NodeId(id), Pose2::new(v[0], v[1], normalize_angle(v[2]))));
        } else {
            let from: usize = field(toks[1], line)?;
            let to: usize = field(toks[2], line)?;
            let v = floats(&toks[3..12], line)?;
            let edge = Edge::relative(NodeId(from), NodeId(to), Pose2::new(v[0], v[1], v[2]), dialect.info(&v[3..]))
                .map_err(|e| Error::MalformedRecord {
                    line,
                    reason: e.to_string(),
                })?;
            out.edges.push(edge);
        }
    }
    Ok(out)
}

/// Parses `VERTEX_SE2` / `EDGE_SE2` records; other tags are skipped.
pub fn parse_g2o(text: &str) -> Result<RawGraph, Error> {
    parse(text, Dialect::G2o)
}

/// Parses `VERTEX2` / `EDGE2` records; other tags are skipped.
pub fn parse_toro(text: &str) -> Result<RawGraph, Error> {
    parse(text, Dialect::Toro)
}

fn write(g: &RawGraph, dialect: Dialect) -> Result<String, Error> {
    let (vtag, etag) = dialect.tags();
    let mut s = String::new();
    for (id, p) in &g.vertices {
        writeln!(s, "{vtag} {id} {} {} {}", p.x, p.y, p.theta).unwrap();
    }
    for e in &g.edges {
        let EdgeKind::RelativePose2 { from, to, meas, info } = &e.kind else {
            return Err(Error::WrongEdgeKind("text formats hold relative-pose edges only"));
        };
        write!(s, "{etag} {from} {to} {} {} {}", meas.x, meas.y, meas.theta).unwrap();
        for v in dialect.info_fields(info) {
            write!(s, " {v}").unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

/// Writes g2o text; values use the shortest round-tripping decimal form.
pub fn write_g2o(g: &RawGraph) -> Result<String, Error> {
    write(g, Dialect::G2o)
}

pub fn write_toro(g: &RawGraph) -> Result<String, Error> {
    write(g, Dialect::Toro)
}
