//! Plain-text graph dump:
//!
//! ```text
//! VERTEX id tx ty tz qx qy qz qw
//! EDGE id_from id_to tx ty tz qx qy qz qw i11 i12 .. i16 i22 .. i66
//! ```
//!
//! Vertex ids are keyframe frame indices; the first vertex is the fixed
//! gauge node. The information matrix is written as its upper triangle in
//! row-major order (21 values). Numbers use the shortest representation that
//! parses back to the same `f64`, so a write-read cycle is bit exact. Edges
//! between vertices adjacent in file order are odometry edges, all others
//! loop closures. Blank lines and lines starting with `#` are ignored.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix6;

use super::{EdgeKind, PoseEdge, PoseGraph};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

fn push_pose(line: &mut String, pose: &RigidTransform) {
    let (t, q) = pose.to_tum();
    for v in t.iter().chain(q.iter()) {
        let _ = write!(line, " {v}");
    }
}

pub fn format_graph(graph: &PoseGraph) -> String {
    let mut out = String::new();
    for n in &graph.nodes {
        let _ = write!(out, "VERTEX {}", n.keyframe_index);
        push_pose(&mut out, &n.pose);
        out.push('\n');
    }
    for e in &graph.edges {
        let _ = write!(
            out,
            "EDGE {} {}",
            graph.nodes[e.from].keyframe_index, graph.nodes[e.to].keyframe_index
        );
        push_pose(&mut out, &e.measurement);
        for r in 0..6 {
            for c in r..6 {
                let _ = write!(out, " {}", e.information[(r, c)]);
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_graph(path: &Path, graph: &PoseGraph) -> Result<()> {
    std::fs::write(path, format_graph(graph)).map_err(|e| Error::io(path, e))
}

fn parse_numbers(path: &Path, lineno: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format(path, format!("line {lineno}: bad number '{f}'")))
        })
        .collect()
}

fn parse_pose(path: &Path, lineno: usize, v: &[f64]) -> Result<RigidTransform> {
    let qn = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
    if (qn - 1.0).abs() > 1e-6 {
        return Err(Error::format(path, format!("line {lineno}: quaternion norm {qn} is not 1")));
    }
    Ok(RigidTransform::from_tum([v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]]))
}

fn parse_id(path: &Path, lineno: usize, f: &str) -> Result<usize> {
    f.parse()
        .map_err(|_| Error::format(path, format!("line {lineno}: bad vertex id '{f}'")))
}

/// Parses a graph dump; `path` is only used in error messages.
pub fn parse_graph(path: &Path, text: &str) -> Result<PoseGraph> {
    let mut graph = PoseGraph::default();
    let mut ids: HashMap<usize, usize> = HashMap::new();
    let mut raw_edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "VERTEX" => {
                if fields.len() != 9 {
                    return Err(Error::format(path, format!("line {lineno}: VERTEX needs 8 fields")));
                }
                let id = parse_id(path, lineno, fields[1])?;
                let v = parse_numbers(path, lineno, &fields[2..])?;
                let pose = parse_pose(path, lineno, &v)?;
                if ids.insert(id, graph.nodes.len()).is_some() {
                    return Err(Error::format(path, format!("line {lineno}: duplicate vertex {id}")));
                }
                graph.add_node(id, pose);
            }
            "EDGE" => {
                if fields.len() != 31 {
                    return Err(Error::format(path, format!("line {lineno}: EDGE needs 30 fields")));
                }
                let from = parse_id(path, lineno, fields[1])?;
                let to = parse_id(path, lineno, fields[2])?;
                let v = parse_numbers(path, lineno, &fields[3..])?;
                let measurement = parse_pose(path, lineno, &v[..7])?;
                let mut info = Matrix6::zeros();
                let mut k = 7;
                for r in 0..6 {
                    for c in r..6 {
                        info[(r, c)] = v[k];
                        info[(c, r)] = v[k];
                        k += 1;
                    }
                }
                raw_edges.push((lineno, from, to, measurement, info));
            }
            other => return Err(Error::format(path, format!("line {lineno}: unknown record '{other}'"))),
        }
    }
    for (lineno, from, to, measurement, info) in raw_edges {
        let lookup = |id: usize| {
            ids.get(&id)
                .copied()
                .ok_or_else(|| Error::format(path, format!("line {lineno}: edge references unknown vertex {id}")))
        };
        let (a, b) = (lookup(from)?, lookup(to)?);
        let kind = if a.abs_diff(b) == 1 { EdgeKind::Odometry } else { EdgeKind::LoopClosure };
        graph
            .add_edge(PoseEdge::new(a, b, measurement, info, kind))
            .map_err(|e| Error::format(path, format!("line {lineno}: {e}")))?;
    }
    Ok(graph)
}

pub fn read_graph(path: &Path) -> Result<PoseGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_graph(path, &text)
}
