use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::cloud::{PointCloud, Rgb};
use crate::error::{Error, Result};

/// Pinhole intrinsics plus the sensor's valid depth range (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub depth_min: f64,
    pub depth_max: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::kinect_v2()
    }
}

impl CameraIntrinsics {
    /// Kinect V2 depth camera: 512×424, 70°×60° field of view, 0.5–4.5 m.
    /// Square pixels, focal length from the horizontal FOV, principal point
    /// at the image center.
    pub fn kinect_v2() -> Self {
        let width = 512;
        let height = 424;
        let f = (width as f64 / 2.0) / 35f64.to_radians().tan();
        Self {
            width,
            height,
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            depth_min: 0.5,
            depth_max: 4.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Parameter("image dimensions must be positive".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Parameter("focal lengths must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::Parameter("principal point outside the image".into()));
        }
        if !(self.depth_min > 0.0 && self.depth_min < self.depth_max) {
            return Err(Error::Parameter("depth range must satisfy 0 < min < max".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Point3<f64> {
        Point3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }

    /// Pixel coordinates of a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Radial pixel distance from the principal point normalized so the
    /// farthest image corner is 1.
    pub fn normalized_radius(&self, u: f64, v: f64) -> f64 {
        let corner_u = self.cx.max(self.width as f64 - 1.0 - self.cx);
        let corner_v = self.cy.max(self.height as f64 - 1.0 - self.cy);
        let max_r = corner_u.hypot(corner_v);
        ((u - self.cx).hypot(v - self.cy) / max_r).min(1.0)
    }

    pub fn depth_min_mm(&self) -> u16 {
        (self.depth_min * 1000.0).round() as u16
    }

    pub fn depth_max_mm(&self) -> u16 {
        (self.depth_max * 1000.0).round().min(u16::MAX as f64) as u16
    }
}

/// 16-bit depth image in millimeters; 0 marks a pixel without a return.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthFrame {
    pub intrinsics: CameraIntrinsics,
    pub depth: Vec<u16>,
    pub timestamp: f64,
}

impl DepthFrame {
    pub fn new(intrinsics: CameraIntrinsics, depth: Vec<u16>, timestamp: f64) -> Result<Self> {
        intrinsics.validate()?;
        if depth.len() != intrinsics.pixel_count() {
            return Err(Error::Dimension(format!(
                "depth buffer has {} values, expected {}x{}",
                depth.len(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        Ok(Self {
            intrinsics,
            depth,
            timestamp,
        })
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn at(&self, u: usize, v: usize) -> u16 {
        self.depth[v * self.intrinsics.width + u]
    }

    /// True when the value is a return inside the sensor range.
    pub fn is_valid_mm(&self, mm: u16) -> bool {
        mm != 0 && mm >= self.intrinsics.depth_min_mm() && mm <= self.intrinsics.depth_max_mm()
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|&&d| self.is_valid_mm(d)).count()
    }

    /// 3×3 median over valid neighbours; invalid pixels stay invalid.
    pub fn median_filtered(&self) -> DepthFrame {
        let (w, h) = (self.width(), self.height());
        let mut out = self.depth.clone();
        let mut window = Vec::with_capacity(9);
        for v in 0..h {
            for u in 0..w {
                let c = self.at(u, v);
                if !self.is_valid_mm(c) {
                    continue;
                }
                window.clear();
                for dv in -1i64..=1 {
                    for du in -1i64..=1 {
                        let (uu, vv) = (u as i64 + du, v as i64 + dv);
                        if uu < 0 || vv < 0 || uu >= w as i64 || vv >= h as i64 {
                            continue;
                        }
                        let d = self.at(uu as usize, vv as usize);
                        if self.is_valid_mm(d) {
                            window.push(d);
                        }
                    }
                }
                window.sort_unstable();
                out[v * w + u] = window[window.len() / 2];
            }
        }
        DepthFrame {
            intrinsics: self.intrinsics,
            depth: out,
            timestamp: self.timestamp,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColorFrame {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<Rgb>,
    pub timestamp: f64,
}

impl ColorFrame {
    pub fn new(width: usize, height: usize, rgb: Vec<Rgb>, timestamp: f64) -> Result<Self> {
        if rgb.len() != width * height {
            return Err(Error::Dimension(format!(
                "color buffer has {} pixels, expected {width}x{height}",
                rgb.len()
            )));
        }
        Ok(Self {
            width,
            height,
            rgb,
            timestamp,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgbdFrame {
    pub depth: DepthFrame,
    pub color: Option<ColorFrame>,
    pub frame_index: usize,
}

impl RgbdFrame {
    pub fn new(depth: DepthFrame, color: Option<ColorFrame>, frame_index: usize) -> Result<Self> {
        if let Some(c) = &color {
            check_color_dims(&depth, c)?;
        }
        Ok(Self {
            depth,
            color,
            frame_index,
        })
    }

    /// Same frame with the color image withheld.
    pub fn without_color(mut self) -> Self {
        self.color = None;
        self
    }
}

fn check_color_dims(depth: &DepthFrame, color: &ColorFrame) -> Result<()> {
    if color.width != depth.width() || color.height != depth.height() {
        return Err(Error::Dimension(format!(
            "color frame {}x{} does not match depth frame {}x{}",
            color.width,
            color.height,
            depth.width(),
            depth.height()
        )));
    }
    Ok(())
}

/// One point per valid pixel via the inverse pinhole model, in raster order.
pub fn backproject(frame: &DepthFrame, color: Option<&ColorFrame>) -> Result<PointCloud> {
    if let Some(c) = color {
        check_color_dims(frame, c)?;
    }
    let k = &frame.intrinsics;
    let mut points = Vec::with_capacity(k.pixel_count());
    let mut colors = color.map(|_| Vec::with_capacity(k.pixel_count()));
    for v in 0..k.height {
        for u in 0..k.width {
            let idx = v * k.width + u;
            let mm = frame.depth[idx];
            if !frame.is_valid_mm(mm) {
                continue;
            }
            points.push(k.unproject(u as f64, v as f64, mm as f64 / 1000.0));
            if let (Some(out), Some(c)) = (colors.as_mut(), color) {
                out.push(c.rgb[idx]);
            }
        }
    }
    Ok(PointCloud {
        points,
        colors,
        normals: None,
    })
}
