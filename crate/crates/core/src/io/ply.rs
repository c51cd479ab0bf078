//! Binary little-endian PLY for point clouds.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let n = cloud.len();
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {n}\n");
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.has_colors() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if cloud.has_normals() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for i in 0..n {
        for c in cloud.points[i].coords.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        if let Some(colors) = &cloud.colors {
            out.extend_from_slice(&colors[i]);
        }
        if let Some(normals) = &cloud.normals {
            for c in normals[i].iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_ply(cloud)).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, PartialEq)]
enum Scalar {
    F32,
    F64,
    U8,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "float" | "float32" => Some(Scalar::F32),
            "double" | "float64" => Some(Scalar::F64),
            "uchar" | "uint8" => Some(Scalar::U8),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            Scalar::F32 => 4,
            Scalar::F64 => 8,
            Scalar::U8 => 1,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
            Scalar::U8 => b[0] as f64,
        }
    }
}

/// Reads binary little-endian vertex clouds with float/double/uchar properties.
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |m: &str| Error::format(path, m.to_string());
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<std::fs::File>| -> Result<String> {
        line.clear();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut r)? != "ply" {
        return Err(bad("missing ply magic"));
    }
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    loop {
        let l = next_line(&mut r)?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => {}
            ["format", ..] => return Err(bad("only binary_little_endian is supported")),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| bad("unsupported property type"))?;
                props.push((name.to_string(), s));
            }
            ["property", ..] => {}
            [] => return Err(bad("unexpected end of header")),
            _ => return Err(bad("unrecognized header line")),
        }
    }
    let n = count.ok_or_else(|| bad("no vertex element"))?;
    let find = |name: &str| props.iter().position(|(p, _)| p == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(bad("vertex element lacks x/y/z")),
    };
    let color_idx = match (find("red"), find("green"), find("blue")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    let normal_idx = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    let offsets: Vec<usize> = props
        .iter()
        .scan(0, |acc, (_, s)| {
            let o = *acc;
            *acc += s.size();
            Some(o)
        })
        .collect();
    let stride: usize = props.iter().map(|(_, s)| s.size()).sum();
    let mut body = vec![0u8; n * stride];
    r.read_exact(&mut body).map_err(|_| bad("truncated vertex data"))?;
    let field = |rec: &[u8], k: usize| props[k].1.read(&rec[offsets[k]..offsets[k] + props[k].1.size()]);
    let mut cloud = PointCloud {
        points: Vec::with_capacity(n),
        colors: color_idx.map(|_| Vec::with_capacity(n)),
        normals: normal_idx.map(|_| Vec::with_capacity(n)),
    };
    for rec in body.chunks_exact(stride.max(1)).take(n) {
        cloud.points.push(Point3::new(field(rec, ix), field(rec, iy), field(rec, iz)));
        if let (Some(c), Some(idx)) = (cloud.colors.as_mut(), color_idx) {
            c.push(idx.map(|k| field(rec, k) as u8));
        }
        if let (Some(nv), Some(idx)) = (cloud.normals.as_mut(), normal_idx) {
            nv.push(Vector3::new(field(rec, idx[0]), field(rec, idx[1]), field(rec, idx[2])));
        }
    }
    Ok(cloud)
}
