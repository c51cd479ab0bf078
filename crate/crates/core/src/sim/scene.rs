use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rgb;

const RAY_EPS: f64 = 1e-9;

/// A scene surface. Boxes are axis-aligned and rendered from either side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    /// Rectangle centered at `center`, spanned by `u_axis` and `normal × u_axis`.
    Plane {
        center: [f64; 3],
        normal: [f64; 3],
        u_axis: [f64; 3],
        half_extents: [f64; 2],
        albedo: Rgb,
    },
    Box {
        min: [f64; 3],
        max: [f64; 3],
        albedo: Rgb,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        albedo: Rgb,
    },
}

/// Axis-aligned world-frame box naming a part of the scene (e.g. a wall).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedRegion {
    pub name: String,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl NamedRegion {
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

fn default_bounds() -> [[f64; 3]; 2] {
    [[-100.0; 3], [100.0; 3]]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneModel {
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub regions: Vec<NamedRegion>,
    #[serde(default = "default_bounds")]
    pub bounds: [[f64; 3]; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub albedo: Rgb,
}

fn v(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl Primitive {
    pub fn albedo(&self) -> Rgb {
        match self {
            Primitive::Plane { albedo, .. } | Primitive::Box { albedo, .. } | Primitive::Sphere { albedo, .. } => {
                *albedo
            }
        }
    }

    fn validate(&self, bounds: &[[f64; 3]; 2]) -> Result<()> {
        let inside = |p: Vector3<f64>| (0..3).all(|k| p[k] >= bounds[0][k] && p[k] <= bounds[1][k]);
        match self {
            Primitive::Plane {
                center,
                normal,
                u_axis,
                half_extents,
                ..
            } => {
                let n = v(*normal);
                let u = v(*u_axis);
                if n.norm() < 1e-12 || u.norm() < 1e-12 || n.normalize().dot(&u.normalize()).abs() > 1e-6 {
                    return Err(Error::Parameter("plane normal and u_axis must be non-zero and orthogonal".into()));
                }
                if half_extents.iter().any(|&h| !(h > 0.0)) {
                    return Err(Error::Parameter("plane extents must be positive".into()));
                }
                if !inside(v(*center)) {
                    return Err(Error::Parameter("plane center outside scene bounds".into()));
                }
            }
            Primitive::Box { min, max, .. } => {
                if (0..3).any(|k| !(max[k] > min[k])) {
                    return Err(Error::Parameter("box extents must be positive".into()));
                }
                if !inside(v(*min)) || !inside(v(*max)) {
                    return Err(Error::Parameter("box outside scene bounds".into()));
                }
            }
            Primitive::Sphere { center, radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::Parameter("sphere radius must be positive".into()));
                }
                if !inside(v(*center)) {
                    return Err(Error::Parameter("sphere center outside scene bounds".into()));
                }
            }
        }
        Ok(())
    }

    /// Nearest ray parameter `t > 0` along `origin + t·dir`.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::Plane {
                center,
                normal,
                u_axis,
                half_extents,
                ..
            } => {
                let n = v(*normal).normalize();
                let u = v(*u_axis).normalize();
                let w = n.cross(&u);
                let denom = n.dot(dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let c = Point3::from(v(*center));
                let t = n.dot(&(c - origin)) / denom;
                if t <= RAY_EPS {
                    return None;
                }
                let local = origin + dir * t - c;
                (local.dot(&u).abs() <= half_extents[0] && local.dot(&w).abs() <= half_extents[1]).then_some(t)
            }
            Primitive::Box { min, max, .. } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for k in 0..3 {
                    if dir[k].abs() < 1e-15 {
                        if origin[k] < min[k] || origin[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[k] - origin[k]) / dir[k];
                    let b = (max[k] - origin[k]) / dir[k];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t1 < t0 {
                    return None;
                }
                if t0 > RAY_EPS {
                    Some(t0)
                } else if t1 > RAY_EPS {
                    Some(t1)
                } else {
                    None
                }
            }
            Primitive::Sphere { center, radius, .. } => {
                let oc = origin - Point3::from(v(*center));
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let near = (-b - sq) / a;
                let far = (-b + sq) / a;
                if near > RAY_EPS {
                    Some(near)
                } else if far > RAY_EPS {
                    Some(far)
                } else {
                    None
                }
            }
        }
    }

    /// Unsigned distance from `p` to the primitive's surface.
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        match self {
            Primitive::Plane {
                center,
                normal,
                u_axis,
                half_extents,
                ..
            } => {
                let n = v(*normal).normalize();
                let u = v(*u_axis).normalize();
                let w = n.cross(&u);
                let d = p - Point3::from(v(*center));
                let du = (d.dot(&u).abs() - half_extents[0]).max(0.0);
                let dw = (d.dot(&w).abs() - half_extents[1]).max(0.0);
                let dn = d.dot(&n);
                (du * du + dw * dw + dn * dn).sqrt()
            }
            Primitive::Box { min, max, .. } => {
                let mut outside = Vector3::zeros();
                let mut inside_gap = f64::INFINITY;
                let mut is_inside = true;
                for k in 0..3 {
                    if p[k] < min[k] {
                        outside[k] = min[k] - p[k];
                        is_inside = false;
                    } else if p[k] > max[k] {
                        outside[k] = p[k] - max[k];
                        is_inside = false;
                    } else {
                        inside_gap = inside_gap.min((p[k] - min[k]).min(max[k] - p[k]));
                    }
                }
                if is_inside {
                    inside_gap
                } else {
                    outside.norm()
                }
            }
            Primitive::Sphere { center, radius, .. } => ((p - Point3::from(v(*center))).norm() - radius).abs(),
        }
    }
}

impl SceneModel {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::Parameter("scene has no primitives".into()));
        }
        for prim in &self.primitives {
            prim.validate(&self.bounds)?;
        }
        Ok(())
    }

    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for prim in &self.primitives {
            if let Some(t) = prim.intersect(origin, dir) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit {
                        t,
                        albedo: prim.albedo(),
                    });
                }
            }
        }
        best
    }

    pub fn region(&self, name: &str) -> Option<&NamedRegion> {
        self.regions.iter().find(|r| r.name == name)
    }

    pub fn region_names(&self) -> Vec<&str> {
        self.regions.iter().map(|r| r.name.as_str()).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scene: SceneModel = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        scene.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("scene serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Unsigned distance from `point` to the nearest primitive surface.
pub fn scene_truth_distance(scene: &SceneModel, point: &Point3<f64>) -> f64 {
    scene
        .primitives
        .iter()
        .map(|p| p.distance(point))
        .fold(f64::INFINITY, f64::min)
}

fn wall(center: [f64; 3], normal: [f64; 3], u_axis: [f64; 3], half: [f64; 2], albedo: Rgb) -> Primitive {
    Primitive::Plane {
        center,
        normal,
        u_axis,
        half_extents: half,
        albedo,
    }
}

fn aabb(min: [f64; 3], max: [f64; 3], albedo: Rgb) -> Primitive {
    Primitive::Box { min, max, albedo }
}

/// 4 m × 3 m room with 2.5 m walls, a floor, two boxes and a mannequin built
/// from boxes, all near the room center. World z is up.
///
/// Corners are numbered 1 `(-2,-1.5)`, 2 `(2,-1.5)`, 3 `(2,1.5)`, 4 `(-2,1.5)`;
/// the wall between corners i and j is region `wall_ij`.
pub fn room_preset() -> SceneModel {
    let (hx, hy, h) = (2.0, 1.5, 2.5);
    let mut primitives = vec![
        wall([0.0, -hy, h / 2.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [hx, h / 2.0], [200, 180, 160]),
        wall([hx, 0.0, h / 2.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [hy, h / 2.0], [170, 200, 170]),
        wall([0.0, hy, h / 2.0], [0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [hx, h / 2.0], [160, 170, 210]),
        wall([-hx, 0.0, h / 2.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [hy, h / 2.0], [210, 200, 140]),
        wall([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [hx, hy], [120, 110, 100]),
        // two crates
        aabb([0.45, 0.30, 0.0], [0.80, 0.65, 0.55], [180, 60, 40]),
        aabb([-0.85, -0.65, 0.0], [-0.50, -0.25, 0.80], [40, 90, 170]),
    ];
    // box mannequin near the center, right arm out to the side and left arm
    // reaching forward so its silhouette has corners from every direction
    let skin = [220, 180, 150];
    let cloth = [60, 140, 80];
    let shoes = [50, 40, 40];
    let mannequin = [
        aabb([-0.16, 0.02, 0.0], [-0.04, 0.26, 0.07], shoes),
        aabb([0.04, 0.02, 0.0], [0.16, 0.26, 0.07], shoes),
        aabb([-0.14, 0.09, 0.07], [-0.06, 0.17, 0.45], cloth),
        aabb([0.06, 0.09, 0.07], [0.14, 0.17, 0.45], cloth),
        aabb([-0.16, 0.07, 0.45], [-0.03, 0.19, 0.85], cloth),
        aabb([0.03, 0.07, 0.45], [0.16, 0.19, 0.85], cloth),
        aabb([-0.17, 0.05, 0.85], [0.17, 0.21, 1.05], cloth),
        aabb([-0.14, 0.06, 1.05], [0.14, 0.20, 1.25], cloth),
        aabb([-0.21, 0.04, 1.25], [0.21, 0.22, 1.45], cloth),
        aabb([-0.30, -0.22, 1.33], [-0.21, 0.04, 1.43], skin),
        aabb([0.21, 0.09, 1.33], [0.45, 0.17, 1.43], skin),
        aabb([-0.30, -0.30, 1.10], [-0.21, -0.22, 1.43], skin),
        aabb([0.45, 0.09, 1.10], [0.53, 0.17, 1.43], skin),
        aabb([-0.32, -0.33, 0.98], [-0.19, -0.20, 1.10], skin),
        aabb([0.43, 0.07, 0.98], [0.55, 0.19, 1.10], skin),
        aabb([-0.05, 0.09, 1.45], [0.05, 0.16, 1.51], skin),
        aabb([-0.10, 0.03, 1.51], [0.10, 0.22, 1.73], skin),
    ];
    primitives.extend(mannequin);
    let (m, t) = (0.35, 0.15);
    let regions = vec![
        NamedRegion {
            name: "wall_12".into(),
            min: [-hx + m, -hy - t, m],
            max: [hx - m, -hy + t, h - m],
        },
        NamedRegion {
            name: "wall_23".into(),
            min: [hx - t, -hy + m, m],
            max: [hx + t, hy - m, h - m],
        },
        NamedRegion {
            name: "wall_34".into(),
            min: [-hx + m, hy - t, m],
            max: [hx - m, hy + t, h - m],
        },
        NamedRegion {
            name: "wall_41".into(),
            min: [-hx - t, -hy + m, m],
            max: [-hx + t, hy - m, h - m],
        },
    ];
    SceneModel {
        primitives,
        regions,
        bounds: [[-hx - 1.0, -hy - 1.0, -1.0], [hx + 1.0, hy + 1.0, h + 1.0]],
    }
}

/// 9 m × 3 m × 2 m recessed pool: floor and four inner walls, rim at z = 0.
pub fn pool_preset() -> SceneModel {
    let (hx, hy, d) = (4.5, 1.5, 2.0);
    let primitives = vec![
        wall([0.0, 0.0, -d], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [hx, hy], [90, 120, 130]),
        wall([0.0, -hy, -d / 2.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [hx, d / 2.0], [150, 140, 120]),
        wall([0.0, hy, -d / 2.0], [0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [hx, d / 2.0], [140, 150, 120]),
        wall([-hx, 0.0, -d / 2.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [hy, d / 2.0], [130, 130, 150]),
        wall([hx, 0.0, -d / 2.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [hy, d / 2.0], [150, 130, 130]),
    ];
    SceneModel {
        primitives,
        regions: vec![NamedRegion {
            name: "far_wall".into(),
            min: [-hx + 0.3, hy - 0.15, -d + 0.3],
            max: [hx - 0.3, hy + 0.15, -0.3],
        }],
        bounds: [[-hx - 1.0, -hy - 1.0, -d - 1.0], [hx + 1.0, hy + 1.0, 1.0]],
    }
}

/// A single textureless wall, used to provoke track loss.
pub fn wall_preset() -> SceneModel {
    SceneModel {
        primitives: vec![wall([0.0, 3.0, 1.5], [0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [10.0, 10.0], [200, 200, 200])],
        regions: vec![],
        bounds: default_bounds(),
    }
}

pub fn preset(name: &str) -> Option<SceneModel> {
    match name {
        "room" => Some(room_preset()),
        "pool" => Some(pool_preset()),
        "wall" => Some(wall_preset()),
        _ => None,
    }
}

pub const PRESET_NAMES: [&str; 3] = ["room", "pool", "wall"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESET_NAMES {
            preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn wall_distances() {
        let scene = room_preset();
        assert!(scene_truth_distance(&scene, &Point3::new(-1.5, -1.5, 1.8)) < 1e-12);
        let d = scene_truth_distance(&scene, &Point3::new(-1.5, -1.49, 1.8));
        assert!((d - 0.01).abs() < 1e-12);
    }

    #[test]
    fn box_ray_from_outside_and_inside() {
        let b = aabb([-1.0; 3], [1.0; 3], [0, 0, 0]);
        let t = b.intersect(&Point3::new(0.0, 0.0, -5.0), &Vector3::z()).unwrap();
        assert!((t - 4.0).abs() < 1e-12);
        let t = b.intersect(&Point3::origin(), &Vector3::z()).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scene_json_round_trip_and_unknown_keys() {
        let scene = room_preset();
        let text = serde_json::to_string(&scene).unwrap();
        let back: SceneModel = serde_json::from_str(&text).unwrap();
        assert_eq!(scene, back);
        let bad = r#"{"primitives": [], "colour": 1}"#;
        assert!(serde_json::from_str::<SceneModel>(bad).is_err());
    }

    #[test]
    fn empty_scene_fails_validation() {
        let scene = SceneModel {
            primitives: vec![],
            regions: vec![],
            bounds: default_bounds(),
        };
        assert!(scene.validate().is_err());
    }
}
