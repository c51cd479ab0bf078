//! On-disk RGB-D sequence layout:
//!
//! ```text
//! seq/
//!   intrinsics.txt        key-value lines: width height fx fy cx cy depth_min depth_max
//!   depth/000000.png      16-bit millimeters, 0 = invalid
//!   color/000000.png      optional 8-bit RGB, registered to depth
//!   groundtruth.txt       optional TUM trajectory
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::png_io::{read_color_png, read_depth_png, write_color_png, write_depth_png};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, ColorFrame, DepthFrame, RgbdFrame};

pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";
pub const SCENE_FILE: &str = "scene.json";

/// Nominal frame rate used to stamp frames.
pub const FRAME_RATE_HZ: f64 = 30.0;

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

pub fn frame_timestamp(index: usize) -> f64 {
    index as f64 / FRAME_RATE_HZ
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    let text = format!(
        "width {}\nheight {}\nfx {}\nfy {}\ncx {}\ncy {}\ndepth_min {}\ndepth_max {}\n",
        k.width, k.height, k.fx, k.fy, k.cx, k.cy, k.depth_min, k.depth_max
    );
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format(path, "missing intrinsics file"),
        _ => Error::io(path, e),
    })?;
    let mut vals: [Option<f64>; 8] = [None; 8];
    const KEYS: [&str; 8] = ["width", "height", "fx", "fy", "cx", "cy", "depth_min", "depth_max"];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(key), Some(val), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::format(path, format!("line {}: expected `key value`", lineno + 1)));
        };
        let slot = KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| Error::format(path, format!("unknown key `{key}`")))?;
        let v: f64 = val
            .parse()
            .map_err(|_| Error::format(path, format!("bad number for `{key}`: {val}")))?;
        vals[slot] = Some(v);
    }
    let get = |i: usize| vals[i].ok_or_else(|| Error::format(path, format!("missing key `{}`", KEYS[i])));
    let k = CameraIntrinsics {
        width: get(0)? as usize,
        height: get(1)? as usize,
        fx: get(2)?,
        fy: get(3)?,
        cx: get(4)?,
        cy: get(5)?,
        depth_min: get(6)?,
        depth_max: get(7)?,
    };
    k.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(k)
}

/// Writes one frame's depth (and color when present) into a sequence directory.
pub fn write_frame(dir: &Path, frame: &RgbdFrame) -> Result<()> {
    let name = frame_file_name(frame.frame_index);
    let depth_dir = dir.join("depth");
    std::fs::create_dir_all(&depth_dir).map_err(|e| Error::io(&depth_dir, e))?;
    let d = &frame.depth;
    write_depth_png(&depth_dir.join(&name), d.width(), d.height(), &d.depth)?;
    if let Some(c) = &frame.color {
        let color_dir = dir.join("color");
        std::fs::create_dir_all(&color_dir).map_err(|e| Error::io(&color_dir, e))?;
        write_color_png(&color_dir.join(&name), c.width, c.height, &c.rgb)?;
    }
    Ok(())
}

fn frame_indices(dir: &Path) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let Some(stem) = name.strip_suffix(".png") else {
            continue;
        };
        if stem.len() != 6 || !stem.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::format(entry.path(), "frame files must be named NNNNNN.png"));
        }
        out.insert(stem.parse().expect("six digits"));
    }
    Ok(out)
}

/// Validated handle on a sequence directory; iterate to decode frames in order.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub root: PathBuf,
    pub intrinsics: CameraIntrinsics,
    pub frame_count: usize,
    color: BTreeSet<usize>,
}

impl Sequence {
    pub fn has_color(&self, index: usize) -> bool {
        self.color.contains(&index)
    }

    pub fn groundtruth_path(&self) -> Option<PathBuf> {
        let p = self.root.join(GROUNDTRUTH_FILE);
        p.is_file().then_some(p)
    }

    pub fn read_frame(&self, index: usize) -> Result<RgbdFrame> {
        let name = frame_file_name(index);
        let dpath = self.root.join("depth").join(&name);
        let (w, h, depth) = read_depth_png(&dpath)?;
        if w != self.intrinsics.width || h != self.intrinsics.height {
            return Err(Error::format(&dpath, format!("frame is {w}x{h}, intrinsics say {}x{}", self.intrinsics.width, self.intrinsics.height)));
        }
        let ts = frame_timestamp(index);
        let depth = DepthFrame::new(self.intrinsics, depth, ts)?;
        let color = if self.has_color(index) {
            let cpath = self.root.join("color").join(&name);
            let (cw, ch, rgb) = read_color_png(&cpath)?;
            Some(ColorFrame::new(cw, ch, rgb, ts).map_err(|e| Error::format(&cpath, e.to_string()))?)
        } else {
            None
        };
        RgbdFrame::new(depth, color, index).map_err(|e| Error::format(&dpath, e.to_string()))
    }

    pub fn frames(&self) -> impl Iterator<Item = Result<RgbdFrame>> + '_ {
        (0..self.frame_count).map(move |i| self.read_frame(i))
    }
}

/// Opens and validates a sequence directory.
pub fn read_sequence(path: &Path) -> Result<Sequence> {
    if !path.is_dir() {
        return Err(Error::format(path, "sequence directory does not exist"));
    }
    let intrinsics = read_intrinsics(&path.join(INTRINSICS_FILE))?;
    let depth = frame_indices(&path.join("depth"))?;
    if depth.is_empty() {
        return Err(Error::format(path, "sequence has no depth frames"));
    }
    if let Some(missing) = (0..).zip(depth.iter()).find(|(want, got)| want != *got).map(|(want, _)| want) {
        return Err(Error::format(path, format!("missing depth frame {}", frame_file_name(missing).trim_end_matches(".png"))));
    }
    let color = frame_indices(&path.join("color"))?;
    if let Some(orphan) = color.iter().find(|i| !depth.contains(i)) {
        return Err(Error::format(path, format!("color frame {orphan:06} has no matching depth frame")));
    }
    Ok(Sequence {
        root: path.to_path_buf(),
        intrinsics,
        frame_count: depth.len(),
        color,
    })
}
