use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use super::playback::DatasetStream;
use crate::pose_graph::{Edge, EdgeKind, NodeId, Pose2};
use crate::Error;

/// One line of the JSON-lines stream format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Header {
        name: String,
        num_poses: usize,
    },
    Vertex {
        id: usize,
        original_id: usize,
        pose: [f64; 3],
    },
    Relative {
        from: usize,
        to: usize,
        meas: [f64; 3],
        info: [[f64; 3]; 3],
    },
    PositionPrior {
        node: usize,
        meas: [f64; 2],
        info: [[f64; 2]; 2],
    },
    Anchor {
        node: usize,
        meas: [f64; 3],
        info: [[f64; 3]; 3],
    },
}

fn rows3(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

fn rows2(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

impl From<&Edge> for Record {
    fn from(e: &Edge) -> Self {
        match &e.kind {
            EdgeKind::RelativePose2 { from, to, meas, info } => Record::Relative {
                from: from.0,
                to: to.0,
                meas: meas.to_array(),
                info: rows3(info),
            },
            EdgeKind::PositionPrior2 { node, meas, info } => Record::PositionPrior {
                node: node.0,
                meas: *meas,
                info: rows2(info),
            },
            EdgeKind::AnchorPrior2 { node, meas, info } => Record::Anchor {
                node: node.0,
                meas: meas.to_array(),
                info: rows3(info),
            },
        }
    }
}

/// Writes the stream, header and vertices first, one record per line.
pub fn write_jsonl(stream: &DatasetStream) -> String {
    let mut lines = Vec::with_capacity(stream.edges.len() + stream.initial.len() + 1);
    lines.push(Record::Header {
        name: stream.name.clone(),
        num_poses: stream.num_poses,
    });
    for (i, p) in stream.initial.iter().enumerate() {
        lines.push(Record::Vertex {
            id: i,
            original_id: stream.original_ids.get(i).copied().unwrap_or(i),
            pose: p.to_array(),
        });
    }
    lines.extend(stream.edges.iter().map(Record::from));
    let mut out = String::new();
    for r in &lines {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Reads a stream written by [`write_jsonl`] and checks that it plays back.
pub fn parse_jsonl(text: &str) -> Result<DatasetStream, Error> {
    let mut s = DatasetStream {
        name: String::new(),
        edges: Vec::new(),
        num_poses: 0,
        initial: Vec::new(),
        original_ids: Vec::new(),
    };
    let mut header = false;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::MalformedRecord { line, reason };
        let rec: Record = serde_json::from_str(raw).map_err(|e| bad(e.to_string()))?;
        let edge = match rec {
            Record::Header { name, num_poses } => {
                if header {
                    return Err(bad("duplicate header".into()));
                }
                header = true;
                s.name = name;
                s.num_poses = num_poses;
                continue;
            }
            Record::Vertex { id, original_id, pose } => {
                if id != s.initial.len() {
                    return Err(bad(format!("vertex {id} out of sequence")));
                }
                s.initial.push(Pose2::from_array(pose));
                s.original_ids.push(original_id);
                continue;
            }
            Record::Relative { from, to, meas, info } => {
                Edge::relative(NodeId(from), NodeId(to), Pose2::from_array(meas), Matrix3::from_fn(|r, c| info[r][c]))
            }
            Record::PositionPrior { node, meas, info } => {
                Edge::position_prior(NodeId(node), meas, Matrix2::from_fn(|r, c| info[r][c]))
            }
            Record::Anchor { node, meas, info } => {
                Edge::anchor(NodeId(node), Pose2::from_array(meas), Matrix3::from_fn(|r, c| info[r][c]))
            }
        };
        s.edges.push(edge.map_err(|e| bad(e.to_string()))?);
    }
    if !header {
        return Err(Error::MalformedRecord {
            line: 1,
            reason: "missing header record".into(),
        });
    }
    if s.initial.len() != s.num_poses {
        return Err(Error::MalformedRecord {
            line: 1,
            reason: format!("header declares {} poses, found {} vertices", s.num_poses, s.initial.len()),
        });
    }
    s.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::playback::{inject_priors, playback_order};
    use crate::io::text::RawGraph;

    fn stream() -> DatasetStream {
        let info = Matrix3::new(2.0, 0.1, 0.0, 0.1, 3.0, 0.2, 0.0, 0.2, 40.0);
        let raw = RawGraph {
            vertices: vec![(NodeId(0), Pose2::new(0.1, 0.2, 0.3))],
            edges: (0..120)
                .map(|i| Edge::relative(NodeId(i), NodeId(i + 1), Pose2::new(1.0 / 3.0, 0.1, 0.02), info).unwrap())
                .collect(),
        };
        let s = playback_order(&raw, "ring").unwrap();
        let reference = s.initial.clone();
        inject_priors(&s, &reference, 50, 0.7, 11)
    }

    #[test]
    fn round_trip_is_exact() {
        let s = stream();
        let text = write_jsonl(&s);
        let back = parse_jsonl(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(write_jsonl(&back), text);
        assert_eq!(text.lines().filter(|l| l.contains("\"position_prior\"")).count(), 3);
    }

    #[test]
    fn malformed_lines() {
        let text = write_jsonl(&stream());
        let mut lines: Vec<&str> = text.lines().collect();
        lines[3] = "{\"kind\":\"vertex\",\"id\":2}";
        assert!(matches!(parse_jsonl(&lines.join("\n")), Err(Error::MalformedRecord { line: 4, .. })));
        assert!(matches!(parse_jsonl(""), Err(Error::MalformedRecord { .. })));
    }
}
