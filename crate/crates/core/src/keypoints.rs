//! Scale-space segment-test keypoints on the depth image, lifted to 3D.
//!
//! Depth is mapped linearly to an 8-bit intensity image. Each pyramid octave
//! (2×2 box downsampling) is scored with a 9-of-16 segment test on the
//! radius-3 Bresenham circle; the score is the largest threshold for which
//! the test still passes, with the summed absolute contrast on the ring and
//! then on the 8-neighborhood as tie-breaking keys. Candidates must be maxima in their 3×3 spatial
//! neighborhood and against the adjacent octaves, then a radius suppression
//! keeps at most one keypoint per `nonmax_radius` disc per octave. Coarse
//! detections are relocated to the strongest response at the finest octave
//! below them before the radius suppression is repeated.
//!
//! Intensity 0 marks invalid depth: such pixels are never scored as centers
//! and are skipped when building the pyramid.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DepthFrame;

/// Maximum 3×3 depth span (mm) around a keypoint before it is rejected as
/// sitting on a depth discontinuity.
pub const MAX_NEIGHBORHOOD_SPAN_MM: u16 = 100;

const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];
const ARC: usize = 9;
const BORDER: usize = 3;
/// Smallest pyramid layer the detector accepts, in pixels per side.
pub const MIN_LAYER_SIZE: usize = 16;
pub const MIN_IMAGE_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> u8 {
        self.data[v * self.width + u]
    }

    fn half(&self) -> GrayImage {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                let px = [
                    self.at(2 * u, 2 * v),
                    self.at(2 * u + 1, 2 * v),
                    self.at(2 * u, 2 * v + 1),
                    self.at(2 * u + 1, 2 * v + 1),
                ];
                let n = px.iter().filter(|&&p| p > 0).count() as u32;
                let s: u32 = px.iter().map(|&p| p as u32).sum();
                data.push(if n == 0 { 0 } else { ((s + n / 2) / n) as u8 });
            }
        }
        GrayImage::new(w, h, data)
    }

    /// The image rotated by 90° clockwise: `(u, v) -> (h - 1 - v, u)`.
    pub fn rotated_cw(&self) -> GrayImage {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0u8; w * h];
        for v in 0..h {
            for u in 0..w {
                let (nu, nv) = (h - 1 - v, u);
                data[nv * h + nu] = self.at(u, v);
            }
        }
        GrayImage::new(h, w, data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    pub threshold: u8,
    pub octaves: usize,
    pub nonmax_radius: f64,
    /// 3×3 median filter on depth before detection.
    pub median_filter: bool,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            threshold: 30,
            octaves: 4,
            nonmax_radius: 3.0,
            median_filter: false,
        }
    }
}

/// Detector output before lifting. `u`, `v` are full-resolution pixel
/// coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint2d {
    pub u: f64,
    pub v: f64,
    pub octave: usize,
    /// Size relative to the base image (2^octave).
    pub scale: f64,
    pub score: u8,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub octave: usize,
    pub scale: f64,
    pub score: u8,
    /// Camera-frame position in meters.
    pub position: Point3<f64>,
}

/// Linear map of `[depth_min, depth_max]` onto `[1, 255]`; invalid pixels are 0.
pub fn depth_to_intensity(frame: &DepthFrame) -> GrayImage {
    let k = &frame.intrinsics;
    let (lo, hi) = (k.depth_min, k.depth_max);
    let data = frame
        .depth
        .iter()
        .map(|&mm| {
            if !frame.is_valid_mm(mm) {
                return 0;
            }
            let z = mm as f64 / 1000.0;
            (1.0 + ((z - lo) / (hi - lo) * 254.0).round()).clamp(1.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(k.width, k.height, data)
}

/// Segment-test key at `(u, v)`. Bits 23.. hold the score, the largest `t`
/// such that 9 contiguous circle pixels are all brighter than `center + t` or
/// all darker than `center - t`. Bits 11..23 hold the summed absolute ring
/// contrast and bits 0..11 the summed absolute contrast to the 8 neighbors.
/// 0 when no arc has positive contrast.
fn segment_key(img: &GrayImage, u: usize, v: usize) -> u32 {
    let c = img.at(u, v) as i16;
    if c == 0 {
        return 0;
    }
    let mut diff = [0i16; 16];
    for (k, (du, dv)) in CIRCLE.iter().enumerate() {
        diff[k] = img.at((u as i32 + du) as usize, (v as i32 + dv) as usize) as i16 - c;
    }
    // any 9-arc covers at least two of the four compass pixels
    let bright = [0, 4, 8, 12].iter().filter(|&&k| diff[k] > 0).count();
    let dark = [0, 4, 8, 12].iter().filter(|&&k| diff[k] < 0).count();
    if bright < 2 && dark < 2 {
        return 0;
    }
    let mut best = 0i16;
    for start in 0..16 {
        let mut min_b = i16::MAX;
        let mut min_d = i16::MAX;
        for j in 0..ARC {
            let d = diff[(start + j) % 16];
            min_b = min_b.min(d);
            min_d = min_d.min(-d);
        }
        best = best.max(min_b).max(min_d);
    }
    if best > 0 {
        let ring: u32 = diff.iter().map(|d| d.unsigned_abs() as u32).sum();
        let mut inner = 0u32;
        for dv in -1i32..=1 {
            for du in -1i32..=1 {
                let n = img.at((u as i32 + du) as usize, (v as i32 + dv) as usize) as i16;
                inner += (n - c).unsigned_abs() as u32;
            }
        }
        ((best as u32) << 23) | (ring << 11) | inner
    } else {
        0
    }
}

fn key_score(key: u32) -> u8 {
    (key >> 23) as u8
}

fn key_map(img: &GrayImage) -> Vec<u32> {
    let (w, h) = (img.width, img.height);
    let mut out = vec![0u32; w * h];
    for v in BORDER..h - BORDER {
        for u in BORDER..w - BORDER {
            out[v * w + u] = segment_key(img, u, v);
        }
    }
    out
}

struct Layer {
    width: usize,
    height: usize,
    keys: Vec<u32>,
}

impl Layer {
    fn at(&self, u: i64, v: i64) -> u32 {
        if u < 0 || v < 0 || u >= self.width as i64 || v >= self.height as i64 {
            0
        } else {
            self.keys[v as usize * self.width + u as usize]
        }
    }

    fn window_max(&self, u0: i64, u1: i64, v0: i64, v1: i64) -> u32 {
        let mut m = 0;
        for v in v0..=v1 {
            for u in u0..=u1 {
                m = m.max(self.at(u, v));
            }
        }
        m
    }
}

struct Candidate {
    x: f64,
    y: f64,
    key: u32,
}

pub fn check_detector_params(width: usize, height: usize, params: &DetectorParams) -> Result<()> {
    if params.octaves == 0 {
        return Err(Error::Parameter("detector needs at least one octave".into()));
    }
    if width < MIN_IMAGE_SIZE || height < MIN_IMAGE_SIZE {
        return Err(Error::Parameter(format!(
            "image {width}x{height} is smaller than the {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE} minimum"
        )));
    }
    let shrink = 1usize << (params.octaves - 1);
    if width / shrink < MIN_LAYER_SIZE || height / shrink < MIN_LAYER_SIZE {
        return Err(Error::Parameter(format!(
            "image {width}x{height} is too small for {} octaves",
            params.octaves
        )));
    }
    if !(params.nonmax_radius >= 0.0) {
        return Err(Error::Parameter("nonmax_radius must be non-negative".into()));
    }
    Ok(())
}

/// Detects keypoints, sorted by descending score.
pub fn detect_keypoints(image: &GrayImage, params: &DetectorParams) -> Result<Vec<Keypoint2d>> {
    detect_keypoints_masked(image, None, params)
}

/// Like [`detect_keypoints`], but responses whose full-resolution pixel is
/// `false` in `mask` are discarded before the spatial and scale comparisons,
/// so they cannot suppress usable neighbors.
pub fn detect_keypoints_masked(image: &GrayImage, mask: Option<&[bool]>, params: &DetectorParams) -> Result<Vec<Keypoint2d>> {
    check_detector_params(image.width, image.height, params)?;
    if let Some(m) = mask {
        if m.len() != image.width * image.height {
            return Err(Error::Dimension(format!(
                "mask has {} entries for a {}x{} image",
                m.len(),
                image.width,
                image.height
            )));
        }
    }
    let usable = |u: i64, v: i64| -> bool {
        match mask {
            None => true,
            Some(m) => {
                u >= 0 && v >= 0 && u < image.width as i64 && v < image.height as i64 && m[v as usize * image.width + u as usize]
            }
        }
    };
    let mut images = vec![image.clone()];
    for _ in 1..params.octaves {
        let next = images.last().unwrap().half();
        images.push(next);
    }
    let layers: Vec<Layer> = images
        .iter()
        .enumerate()
        .map(|(o, img)| {
            let mut keys = key_map(img);
            if mask.is_some() {
                for v in 0..img.height {
                    for u in 0..img.width {
                        let (pu, pv) = base_pixel(o, u as i64, v as i64);
                        if keys[v * img.width + u] != 0 && !usable(pu, pv) {
                            keys[v * img.width + u] = 0;
                        }
                    }
                }
            }
            Layer {
                width: img.width,
                height: img.height,
                keys,
            }
        })
        .collect();

    let mut out = Vec::new();
    for (o, layer) in layers.iter().enumerate() {
        let mut cands = Vec::new();
        for v in 0..layer.height as i64 {
            for u in 0..layer.width as i64 {
                let s = layer.at(u, v);
                if key_score(s) <= params.threshold || layer.window_max(u - 1, u + 1, v - 1, v + 1) > s {
                    continue;
                }
                // across octaves only the score counts; the finer octave wins ties
                let score = key_score(s);
                if o > 0 && key_score(layers[o - 1].window_max(2 * u - 2, 2 * u + 3, 2 * v - 2, 2 * v + 3)) >= score {
                    continue;
                }
                if o + 1 < layers.len() {
                    let (cu, cv) = (u.div_euclid(2), v.div_euclid(2));
                    if key_score(layers[o + 1].window_max(cu - 1, cu + 1, cv - 1, cv + 1)) > score {
                        continue;
                    }
                }
                cands.push(Candidate {
                    x: u as f64,
                    y: v as f64,
                    key: s,
                });
            }
        }
        let scale = (1usize << o) as f64;
        let refined: Vec<Candidate> = suppress_radius(cands, params.nonmax_radius)
            .into_iter()
            .map(|c| {
                let (u, v) = refine_location(&layers, o, c.x as i64, c.y as i64);
                Candidate {
                    x: (u + 0.5) / scale - 0.5,
                    y: (v + 0.5) / scale - 0.5,
                    key: c.key,
                }
            })
            .collect();
        for c in suppress_radius(refined, params.nonmax_radius) {
            out.push(Keypoint2d {
                u: (c.x + 0.5) * scale - 0.5,
                v: (c.y + 0.5) * scale - 0.5,
                octave: o,
                scale,
                score: key_score(c.key),
            });
        }
    }
    out.sort_by(|a, b| {
        b.score
            .cmp(&a.score)
            .then(a.octave.cmp(&b.octave))
            .then(a.v.total_cmp(&b.v))
            .then(a.u.total_cmp(&b.u))
    });
    Ok(out)
}

/// Full-resolution pixel nearest to the center of cell `(x, y)` of `octave`.
fn base_pixel(octave: usize, x: i64, y: i64) -> (i64, i64) {
    let s = (1usize << octave) as f64;
    (((x as f64 + 0.5) * s - 0.5).round() as i64, ((y as f64 + 0.5) * s - 0.5).round() as i64)
}

/// Follows a detection at `(x, y)` of `octave` down the pyramid, moving to the
/// strongest response among the finer pixels it covers (plus a one-pixel
/// margin), and returns full-resolution pixel coordinates. Stops early when
/// the finer layer has no response there.
fn refine_location(layers: &[Layer], octave: usize, x: i64, y: i64) -> (f64, f64) {
    let (mut x, mut y, mut level) = (x, y, octave);
    while level > 0 {
        let finer = &layers[level - 1];
        let mut best = (0u32, 0i64, 0i64);
        for v in 2 * y - 1..=2 * y + 2 {
            for u in 2 * x - 1..=2 * x + 2 {
                let k = finer.at(u, v);
                if k > best.0 {
                    best = (k, u, v);
                }
            }
        }
        if best.0 == 0 {
            break;
        }
        (x, y, level) = (best.1, best.2, level - 1);
    }
    let s = (1usize << level) as f64;
    ((x as f64 + 0.5) * s - 0.5, (y as f64 + 0.5) * s - 0.5)
}

/// Greedy suppression in descending key order; candidates arrive in raster
/// order, which breaks exact ties.
fn suppress_radius(mut cands: Vec<Candidate>, radius: f64) -> Vec<Candidate> {
    cands.sort_by(|a, b| b.key.cmp(&a.key));
    let r2 = radius * radius;
    let mut kept: Vec<Candidate> = Vec::new();
    for c in cands {
        if kept.iter().all(|k| (k.x - c.x).powi(2) + (k.y - c.y).powi(2) > r2) {
            kept.push(c);
        }
    }
    kept
}

/// Whether a keypoint at `(u, v)` can be lifted: valid depth whose valid 3×3
/// neighbors span at most 100 mm.
fn liftable(frame: &DepthFrame, u: i64, v: i64) -> bool {
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    if u < 0 || v < 0 || u >= w || v >= h {
        return false;
    }
    let mm = frame.at(u as usize, v as usize);
    if !frame.is_valid_mm(mm) {
        return false;
    }
    let (mut lo, mut hi) = (mm, mm);
    for dv in -1..=1 {
        for du in -1..=1 {
            let (uu, vv) = (u + du, v + dv);
            if uu < 0 || vv < 0 || uu >= w || vv >= h {
                continue;
            }
            let d = frame.at(uu as usize, vv as usize);
            if frame.is_valid_mm(d) {
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
    }
    hi - lo <= MAX_NEIGHBORHOOD_SPAN_MM
}

/// Per-pixel result of the lifting rule, row-major.
pub fn liftable_mask(frame: &DepthFrame) -> Vec<bool> {
    let (w, h) = (frame.width(), frame.height());
    (0..w * h).map(|i| liftable(frame, (i % w) as i64, (i / w) as i64)).collect()
}

/// Attaches camera-frame positions. Keypoints over invalid depth or whose
/// 3×3 neighborhood spans more than 100 mm are dropped.
pub fn lift_to_3d(keypoints: &[Keypoint2d], frame: &DepthFrame) -> Vec<Keypoint> {
    keypoints
        .iter()
        .filter_map(|kp| {
            let (u, v) = (kp.u.round() as i64, kp.v.round() as i64);
            if !liftable(frame, u, v) {
                return None;
            }
            let mm = frame.at(u as usize, v as usize);
            let position = frame.intrinsics.unproject(u as f64, v as f64, mm as f64 / 1000.0);
            Some(Keypoint {
                u: kp.u,
                v: kp.v,
                octave: kp.octave,
                scale: kp.scale,
                score: kp.score,
                position,
            })
        })
        .collect()
}

/// Intensity mapping, detection and lifting for one depth frame.
pub fn frame_keypoints(frame: &DepthFrame, params: &DetectorParams) -> Result<Vec<Keypoint>> {
    let filtered;
    let frame = if params.median_filter {
        filtered = frame.median_filtered();
        &filtered
    } else {
        frame
    };
    let image = depth_to_intensity(frame);
    let mask = liftable_mask(frame);
    let kps = detect_keypoints_masked(&image, Some(&mask), params)?;
    Ok(lift_to_3d(&kps, frame))
}
