//! Synthetic ground-truth scenes: procedural primitives rendered through a
//! pinhole camera into depth and albedo maps.
//!
//! A scene is a list of primitives (infinite planes, axis-aligned boxes,
//! spheres) with diffuse albedos, plus an optional frontoparallel far plane
//! that catches rays which miss everything else. Rendering casts one ray per
//! pixel and keeps the nearest hit; pixels that hit nothing receive a
//! negative "no return" sentinel.
//!
//! Conventions: the camera sits at the origin looking down +z, rays pass
//! through integer pixel coordinates `(u, v)`, and all stored depths are
//! z-depths (a frontoparallel plane at 2 m reads 2.0 at every pixel).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio;
use crate::error::{Error, Result};

/// Rays must travel at least this far before a hit counts, so that surfaces
/// through the origin do not shadow the whole image.
const HIT_EPSILON: f64 = 1e-9;

/// Sentinel depth/albedo for pixels with no return. Any negative value in a
/// map file means the same thing.
pub const NO_RETURN: f64 = -1.0;

// ── camera ────────────────────────────────────────────────────────────

/// Pinhole camera intrinsics in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    /// Intrinsics with the default focal model: `fx = fy = width`,
    /// principal point at the image center (~53 degree horizontal FOV).
    pub fn with_defaults(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            fx: width as f64,
            fy: width as f64,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.height < 1 {
            return Err(Error::invalid("image dimensions must be at least 1x1"));
        }
        if self.width > u16::MAX as u32 || self.height > u16::MAX as u32 {
            return Err(Error::invalid("image dimensions must fit in 16 bits"));
        }
        if !(self.fx > 0.0) || !(self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::invalid("principal point must be finite"));
        }
        Ok(())
    }

    /// Project a camera-space point to `(u, v, depth)`.
    ///
    /// `depth` is the z coordinate; points at or behind the camera are a
    /// domain error.
    pub fn project(&self, p: [f64; 3]) -> Result<(f64, f64, f64)> {
        let [x, y, z] = p;
        if z <= 0.0 {
            return Err(Error::domain("cannot project a point with z <= 0"));
        }
        Ok((self.fx * x / z + self.cx, self.fy * y / z + self.cy, z))
    }

    /// Invert [`project`](Self::project): place a point on the ray through
    /// pixel `(u, v)` at z-depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Result<[f64; 3]> {
        if depth <= 0.0 {
            return Err(Error::domain("cannot unproject a non-positive depth"));
        }
        Ok([
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        ])
    }

    /// Direction of the ray through pixel `(u, v)`, scaled so that the ray
    /// parameter equals z-depth.
    fn ray_direction(&self, u: u32, v: u32) -> [f64; 3] {
        [
            (u as f64 - self.cx) / self.fx,
            (v as f64 - self.cy) / self.fy,
            1.0,
        ]
    }
}

// ── primitives ────────────────────────────────────────────────────────

/// A diffuse scene primitive.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Infinite plane through `point` with the given `normal`.
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        albedo: f64,
    },
    /// Axis-aligned box with full edge lengths `size`.
    Box {
        center: [f64; 3],
        size: [f64; 3],
        albedo: f64,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        albedo: f64,
    },
}

impl Primitive {
    pub fn albedo(&self) -> f64 {
        match self {
            Primitive::Plane { albedo, .. }
            | Primitive::Box { albedo, .. }
            | Primitive::Sphere { albedo, .. } => *albedo,
        }
    }

    fn validate(&self) -> Result<()> {
        let albedo = self.albedo();
        if !(albedo > 0.0 && albedo <= 1.0) {
            return Err(Error::invalid(format!(
                "albedo must be in (0, 1], got {albedo}"
            )));
        }
        match self {
            Primitive::Plane { normal, .. } => {
                let n2 = dot(*normal, *normal);
                if !(n2 > 0.0) || !n2.is_finite() {
                    return Err(Error::invalid("plane normal must be nonzero"));
                }
            }
            Primitive::Box { size, .. } => {
                if size.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::invalid("box extents must be positive"));
                }
            }
            Primitive::Sphere { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::invalid("sphere radius must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Smallest ray parameter `t > HIT_EPSILON` at which the ray `t * dir`
    /// (origin at the camera) meets this primitive.
    fn intersect(&self, dir: [f64; 3]) -> Option<f64> {
        match self {
            Primitive::Plane { point, normal, .. } => {
                let denom = dot(*normal, dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = dot(*normal, *point) / denom;
                (t > HIT_EPSILON).then_some(t)
            }
            Primitive::Sphere { center, radius, .. } => {
                let a = dot(dir, dir);
                let b = -2.0 * dot(dir, *center);
                let c = dot(*center, *center) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = (-b - sq) / (2.0 * a);
                let t1 = (-b + sq) / (2.0 * a);
                if t0 > HIT_EPSILON {
                    Some(t0)
                } else if t1 > HIT_EPSILON {
                    Some(t1)
                } else {
                    None
                }
            }
            Primitive::Box { center, size, .. } => {
                let mut t_enter = f64::NEG_INFINITY;
                let mut t_exit = f64::INFINITY;
                for axis in 0..3 {
                    let half = size[axis] / 2.0;
                    let lo = center[axis] - half;
                    let hi = center[axis] + half;
                    if dir[axis].abs() < 1e-15 {
                        // Ray parallel to this slab: origin must lie inside.
                        if 0.0 < lo || 0.0 > hi {
                            return None;
                        }
                    } else {
                        let inv = 1.0 / dir[axis];
                        let (t0, t1) = {
                            let a = lo * inv;
                            let b = hi * inv;
                            if a <= b {
                                (a, b)
                            } else {
                                (b, a)
                            }
                        };
                        t_enter = t_enter.max(t0);
                        t_exit = t_exit.min(t1);
                    }
                }
                if t_enter > t_exit {
                    return None;
                }
                if t_enter > HIT_EPSILON {
                    Some(t_enter)
                } else if t_exit > HIT_EPSILON {
                    Some(t_exit)
                } else {
                    None
                }
            }
        }
    }

    /// Absolute distance from `p` to the primitive's surface (implicit
    /// function residual). Used to verify that rendered depths land on
    /// geometry.
    pub fn surface_distance(&self, p: [f64; 3]) -> f64 {
        match self {
            Primitive::Plane { point, normal, .. } => {
                let n_len = dot(*normal, *normal).sqrt();
                (dot(*normal, sub(p, *point)) / n_len).abs()
            }
            Primitive::Sphere { center, radius, .. } => {
                let d = sub(p, *center);
                (dot(d, d).sqrt() - radius).abs()
            }
            Primitive::Box { center, size, .. } => {
                let q = [
                    (p[0] - center[0]).abs() - size[0] / 2.0,
                    (p[1] - center[1]).abs() - size[1] / 2.0,
                    (p[2] - center[2]).abs() - size[2] / 2.0,
                ];
                let outside = [q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)];
                let outside_len = dot(outside, outside).sqrt();
                let inside = q[0].max(q[1]).max(q[2]).min(0.0);
                (outside_len + inside).abs()
            }
        }
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

// ── scene ─────────────────────────────────────────────────────────────

/// What rays see when they miss every primitive.
#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    /// No return: the pixel gets the sentinel.
    None,
    /// A frontoparallel plane at `distance` meters.
    FarPlane { distance: f64, albedo: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub background: Background,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        for p in &self.primitives {
            p.validate()?;
        }
        if let Background::FarPlane { distance, albedo } = self.background {
            if !(distance > 0.0) {
                return Err(Error::invalid("far plane distance must be positive"));
            }
            if !(albedo > 0.0 && albedo <= 1.0) {
                return Err(Error::invalid("far plane albedo must be in (0, 1]"));
            }
        }
        Ok(())
    }
}

/// H x W grid of z-depths in meters; negative entries mean no return.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

/// H x W grid of reflectance values in (0, 1], aligned with a [`DepthMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct AlbedoMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn depth_at(&self, u: u32, v: u32) -> Option<f64> {
        let d = self.values[(v * self.width + u) as usize];
        (d >= 0.0).then_some(d)
    }

    /// Number of pixels with a return.
    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|d| **d >= 0.0).count()
    }
}

impl AlbedoMap {
    pub fn albedo_at(&self, u: u32, v: u32) -> Option<f64> {
        let a = self.values[(v * self.width + u) as usize];
        (a >= 0.0).then_some(a)
    }
}

/// Cast one ray per pixel and record the nearest hit.
///
/// Deterministic: identical inputs produce bit-identical maps. Ties between
/// equally distant primitives resolve in declaration order.
pub fn render_scene(spec: &SceneSpec, intrinsics: &CameraIntrinsics) -> Result<(DepthMap, AlbedoMap)> {
    spec.validate()?;
    intrinsics.validate()?;

    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut depth = vec![NO_RETURN; (w * h) as usize];
    let mut albedo = vec![NO_RETURN; (w * h) as usize];

    for v in 0..h {
        for u in 0..w {
            let dir = intrinsics.ray_direction(u, v);
            let mut best: Option<(f64, f64)> = None; // (t, albedo)
            for prim in &spec.primitives {
                if let Some(t) = prim.intersect(dir) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, prim.albedo()));
                    }
                }
            }
            let hit = best.or(match spec.background {
                Background::FarPlane { distance, albedo } => Some((distance, albedo)),
                Background::None => None,
            });
            if let Some((t, a)) = hit {
                let idx = (v * w + u) as usize;
                depth[idx] = t;
                albedo[idx] = a;
            }
        }
    }

    Ok((
        DepthMap { width: w, height: h, values: depth },
        AlbedoMap { width: w, height: h, values: albedo },
    ))
}

/// The furnished room used throughout the test and benchmark suites: a
/// back wall at 5.8 m, a floor slab, a cabinet near the wall, and three
/// objects between 1.7 m and 4.5 m. Depths span roughly 1.7-6.3 m, giving
/// a strong 1/d^2 signal spread across the frame.
pub fn standard_room() -> SceneSpec {
    SceneSpec {
        primitives: vec![
            Primitive::Sphere {
                center: [-0.5, 0.3, 1.7],
                radius: 0.35,
                albedo: 0.85,
            },
            Primitive::Box {
                center: [0.6, 0.35, 2.3],
                size: [0.6, 0.7, 0.5],
                albedo: 0.55,
            },
            Primitive::Box {
                center: [0.0, -0.45, 4.3],
                size: [0.5, 0.4, 0.4],
                albedo: 0.7,
            },
            // Cabinet against the back wall.
            Primitive::Box {
                center: [-1.1, 0.1, 4.9],
                size: [0.9, 1.6, 0.4],
                albedo: 0.65,
            },
            // Floor slab; bounded so grazing rays cannot run off to
            // unreachable depths.
            Primitive::Box {
                center: [0.0, 1.1, 3.3],
                size: [30.0, 0.2, 6.0],
                albedo: 0.4,
            },
        ],
        background: Background::FarPlane { distance: 5.8, albedo: 0.85 },
    }
}

/// A longer-range hall used by the runtime benchmarks: a ground slab,
/// pillar- and vehicle-sized boxes between 5.5 m and 11 m, and a back
/// wall at 13 m. At these distances a full-resolution frame produces
/// surface point spacing comparable to mid-range LiDAR captures.
pub fn benchmark_hall() -> SceneSpec {
    SceneSpec {
        primitives: vec![
            Primitive::Sphere {
                center: [-1.8, 0.2, 6.5],
                radius: 0.8,
                albedo: 0.85,
            },
            Primitive::Box {
                center: [2.0, 0.4, 8.0],
                size: [1.8, 1.5, 4.0],
                albedo: 0.55,
            },
            Primitive::Box {
                center: [-0.6, -0.8, 10.5],
                size: [1.2, 2.6, 1.2],
                albedo: 0.7,
            },
            Primitive::Box {
                center: [0.4, 0.7, 5.6],
                size: [0.9, 0.9, 0.9],
                albedo: 0.6,
            },
            // Ground slab.
            Primitive::Box {
                center: [0.0, 1.8, 7.5],
                size: [60.0, 0.2, 11.0],
                albedo: 0.4,
            },
        ],
        background: Background::FarPlane { distance: 13.0, albedo: 0.8 },
    }
}

// ── map files ─────────────────────────────────────────────────────────

const DEPTH_MAGIC: &[u8; 8] = b"DPTHMAP1";
const ALBEDO_MAGIC: &[u8; 8] = b"ALBMAP01";

fn write_map<W: Write>(w: &mut W, magic: &[u8; 8], width: u32, height: u32, values: &[f64]) -> Result<()> {
    w.write_all(magic)?;
    binio::write_u32(w, height)?;
    binio::write_u32(w, width)?;
    for v in values {
        binio::write_f32(w, *v as f32)?;
    }
    Ok(())
}

fn read_map<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<(u32, u32, Vec<f64>)> {
    binio::expect_magic(r, magic)?;
    let height = binio::read_u32(r)?;
    let width = binio::read_u32(r)?;
    let n = (height as usize)
        .checked_mul(width as usize)
        .ok_or_else(|| Error::parse("map dimensions overflow"))?;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(binio::read_f32(r)? as f64);
    }
    Ok((width, height, values))
}

pub fn write_depth_map(map: &DepthMap, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_map(&mut w, DEPTH_MAGIC, map.width, map.height, &map.values)
}

pub fn read_depth_map(path: &Path) -> Result<DepthMap> {
    let mut r = BufReader::new(File::open(path)?);
    let (width, height, values) = read_map(&mut r, DEPTH_MAGIC)?;
    Ok(DepthMap { width, height, values })
}

pub fn write_albedo_map(map: &AlbedoMap, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_map(&mut w, ALBEDO_MAGIC, map.width, map.height, &map.values)
}

pub fn read_albedo_map(path: &Path) -> Result<AlbedoMap> {
    let mut r = BufReader::new(File::open(path)?);
    let (width, height, values) = read_map(&mut r, ALBEDO_MAGIC)?;
    for v in &values {
        if *v >= 0.0 && !(*v > 0.0 && *v <= 1.0) {
            return Err(Error::parse(format!("albedo value {v} outside (0, 1]")));
        }
    }
    Ok(AlbedoMap { width, height, values })
}

// ── scene text format ─────────────────────────────────────────────────

/// Parse the plain-text scene grammar.
///
/// The format is line based: `[section]` headers open a primitive (or the
/// `[camera]` / `[background]` sections), `key = value` lines fill it, and
/// `#` starts a comment. Vector values are whitespace-separated numbers.
///
/// ```text
/// [camera]            # optional; width/height required when present
/// width = 128
/// height = 96
///
/// [sphere]
/// center = -0.55 0.25 2.1
/// radius = 0.35
/// albedo = 0.85
///
/// [background]        # optional; omit for "no return"
/// far_plane = 7.5
/// albedo = 0.9
/// ```
pub fn parse_scene(text: &str) -> Result<(SceneSpec, Option<CameraIntrinsics>)> {
    let mut sections: Vec<(String, Vec<(String, String)>)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            sections.push((name.trim().to_ascii_lowercase(), Vec::new()));
        } else if let Some((key, value)) = line.split_once('=') {
            let Some(section) = sections.last_mut() else {
                return Err(Error::parse(format!(
                    "line {}: key outside any [section]",
                    lineno + 1
                )));
            };
            section
                .1
                .push((key.trim().to_ascii_lowercase(), value.trim().to_string()));
        } else {
            return Err(Error::parse(format!("line {}: expected key = value", lineno + 1)));
        }
    }

    let mut primitives = Vec::new();
    let mut background = Background::None;
    let mut camera = None;

    for (name, keys) in &sections {
        let get = |key: &str| -> Option<&str> {
            keys.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
        };
        let require = |key: &str| -> Result<&str> {
            get(key).ok_or_else(|| Error::parse(format!("[{name}] is missing `{key}`")))
        };
        match name.as_str() {
            "sphere" => primitives.push(Primitive::Sphere {
                center: parse_vec3(require("center")?)?,
                radius: parse_num(require("radius")?)?,
                albedo: parse_num(require("albedo")?)?,
            }),
            "box" => primitives.push(Primitive::Box {
                center: parse_vec3(require("center")?)?,
                size: parse_vec3(require("size")?)?,
                albedo: parse_num(require("albedo")?)?,
            }),
            "plane" => primitives.push(Primitive::Plane {
                point: parse_vec3(require("point")?)?,
                normal: parse_vec3(require("normal")?)?,
                albedo: parse_num(require("albedo")?)?,
            }),
            "background" => {
                let distance = parse_num(require("far_plane")?)?;
                let albedo = match get("albedo") {
                    Some(v) => parse_num(v)?,
                    None => 1.0,
                };
                background = Background::FarPlane { distance, albedo };
            }
            "camera" => {
                let width: u32 = require("width")?
                    .parse()
                    .map_err(|_| Error::parse("camera width must be an integer"))?;
                let height: u32 = require("height")?
                    .parse()
                    .map_err(|_| Error::parse("camera height must be an integer"))?;
                let mut intr = CameraIntrinsics::with_defaults(width, height);
                if let Some(v) = get("fx") {
                    intr.fx = parse_num(v)?;
                }
                if let Some(v) = get("fy") {
                    intr.fy = parse_num(v)?;
                }
                if let Some(v) = get("cx") {
                    intr.cx = parse_num(v)?;
                }
                if let Some(v) = get("cy") {
                    intr.cy = parse_num(v)?;
                }
                camera = Some(intr);
            }
            other => {
                return Err(Error::parse(format!("unknown section [{other}]")));
            }
        }
    }

    let spec = SceneSpec { primitives, background };
    spec.validate()?;
    if let Some(c) = &camera {
        c.validate()?;
    }
    Ok((spec, camera))
}

pub fn read_scene_file(path: &Path) -> Result<(SceneSpec, Option<CameraIntrinsics>)> {
    let text = std::fs::read_to_string(path)?;
    parse_scene(&text)
}

fn parse_num(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::parse(format!("expected a number, got `{s}`")))
}

fn parse_vec3(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split_whitespace()
        .map(parse_num)
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        return Err(Error::parse(format!("expected 3 numbers, got `{s}`")));
    }
    Ok([parts[0], parts[1], parts[2]])
}

// ══════════════════════════════════════════════════════════════════════
// Tests
// ══════════════════════════════════════════════════════════════════════

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frontoparallel_plane(z: f64, albedo: f64) -> Primitive {
        Primitive::Plane {
            point: [0.0, 0.0, z],
            normal: [0.0, 0.0, -1.0],
            albedo,
        }
    }

    #[test]
    fn frontoparallel_plane_has_constant_depth() {
        let spec = SceneSpec {
            primitives: vec![frontoparallel_plane(2.0, 0.8)],
            background: Background::None,
        };
        let intr = CameraIntrinsics::with_defaults(16, 12);
        let (depth, albedo) = render_scene(&spec, &intr).unwrap();
        for v in 0..12 {
            for u in 0..16 {
                assert!((depth.depth_at(u, v).unwrap() - 2.0).abs() < 1e-12);
                assert_eq!(albedo.albedo_at(u, v).unwrap(), 0.8);
            }
        }
    }

    #[test]
    fn empty_scene_is_all_sentinel() {
        let spec = SceneSpec { primitives: vec![], background: Background::None };
        let intr = CameraIntrinsics::with_defaults(8, 8);
        let (depth, _) = render_scene(&spec, &intr).unwrap();
        assert_eq!(depth.valid_count(), 0);
        assert!(depth.values.iter().all(|d| *d < 0.0));
    }

    #[test]
    fn on_axis_sphere_center_pixel() {
        let spec = SceneSpec {
            primitives: vec![Primitive::Sphere {
                center: [0.0, 0.0, 3.0],
                radius: 0.5,
                albedo: 0.9,
            }],
            background: Background::None,
        };
        let intr = CameraIntrinsics::with_defaults(64, 64);
        let (depth, _) = render_scene(&spec, &intr).unwrap();
        // cx = cy = 32, so pixel (32, 32) looks straight down the axis.
        let d = depth.depth_at(32, 32).unwrap();
        assert!((d - 2.5).abs() < 1e-9, "depth was {d}");
    }

    #[test]
    fn project_hand_example() {
        let intr = CameraIntrinsics {
            width: 640,
            height: 480,
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
        };
        let (u, _, d) = intr.project([1.0, 0.0, 2.0]).unwrap();
        assert!((u - 570.0).abs() < 1e-12);
        assert_eq!(d, 2.0);

        let intr0 = CameraIntrinsics { cx: 0.0, cy: 0.0, ..intr };
        let (u, v, d) = intr0.project([0.0, 0.0, 2.0]).unwrap();
        assert_eq!((u, v, d), (0.0, 0.0, 2.0));
    }

    #[test]
    fn project_rejects_nonpositive_depth() {
        let intr = CameraIntrinsics::with_defaults(4, 4);
        assert!(intr.project([0.0, 0.0, 0.0]).is_err());
        assert!(intr.project([1.0, 1.0, -2.0]).is_err());
        assert!(intr.unproject(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn project_unproject_roundtrip_on_random_frustum_points() {
        let intr = CameraIntrinsics::with_defaults(128, 96);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let u = rng.gen_range(0.0..128.0);
            let v = rng.gen_range(0.0..96.0);
            let d = rng.gen_range(0.1..14.0);
            let p = intr.unproject(u, v, d).unwrap();
            let (u2, v2, d2) = intr.project(p).unwrap();
            let p2 = intr.unproject(u2, v2, d2).unwrap();
            for k in 0..3 {
                assert!((p[k] - p2[k]).abs() < 1e-6, "{:?} vs {:?}", p, p2);
            }
            assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = standard_room();
        let intr = CameraIntrinsics::with_defaults(64, 48);
        let (d1, a1) = render_scene(&spec, &intr).unwrap();
        let (d2, a2) = render_scene(&spec, &intr).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(a1, a2);
    }

    #[test]
    fn rendered_depths_lie_on_surfaces() {
        let spec = standard_room();
        let intr = CameraIntrinsics::with_defaults(64, 48);
        let (depth, _) = render_scene(&spec, &intr).unwrap();
        for v in 0..48 {
            for u in 0..64 {
                let Some(d) = depth.depth_at(u, v) else { continue };
                let p = intr.unproject(u as f64, v as f64, d).unwrap();
                let on_far_plane = matches!(
                    spec.background,
                    Background::FarPlane { distance, .. } if (d - distance).abs() < 1e-9
                );
                if on_far_plane {
                    continue;
                }
                let closest = spec
                    .primitives
                    .iter()
                    .map(|prim| prim.surface_distance(p))
                    .fold(f64::INFINITY, f64::min);
                assert!(closest < 1e-4, "pixel ({u},{v}) depth {d}: residual {closest}");
            }
        }
    }

    #[test]
    fn degenerate_primitives_are_rejected() {
        let bad = SceneSpec {
            primitives: vec![Primitive::Sphere {
                center: [0.0, 0.0, 1.0],
                radius: 0.0,
                albedo: 0.5,
            }],
            background: Background::None,
        };
        assert!(render_scene(&bad, &CameraIntrinsics::with_defaults(4, 4)).is_err());

        let bad_albedo = SceneSpec {
            primitives: vec![frontoparallel_plane(1.0, 1.5)],
            background: Background::None,
        };
        assert!(bad_albedo.validate().is_err());
    }

    #[test]
    fn coincident_surfaces_resolve_in_declaration_order() {
        let spec = SceneSpec {
            primitives: vec![frontoparallel_plane(2.0, 0.3), frontoparallel_plane(2.0, 0.7)],
            background: Background::None,
        };
        let intr = CameraIntrinsics::with_defaults(4, 4);
        let (_, albedo) = render_scene(&spec, &intr).unwrap();
        assert_eq!(albedo.albedo_at(1, 1).unwrap(), 0.3);
    }

    #[test]
    fn background_far_plane_fills_misses() {
        let spec = SceneSpec {
            primitives: vec![],
            background: Background::FarPlane { distance: 6.0, albedo: 0.9 },
        };
        let intr = CameraIntrinsics::with_defaults(4, 4);
        let (depth, albedo) = render_scene(&spec, &intr).unwrap();
        assert!(depth.values.iter().all(|d| (*d - 6.0).abs() < 1e-12));
        assert!(albedo.values.iter().all(|a| *a == 0.9));
    }

    #[test]
    fn map_files_roundtrip_with_sentinels() {
        let dir = tempfile::tempdir().unwrap();
        let depth = DepthMap {
            width: 3,
            height: 2,
            values: vec![1.5, NO_RETURN, 2.25, 0.5, 7.0, NO_RETURN],
        };
        let path = dir.path().join("x.dpth");
        write_depth_map(&depth, &path).unwrap();
        let back = read_depth_map(&path).unwrap();
        assert_eq!(back, depth);

        let albedo = AlbedoMap {
            width: 3,
            height: 2,
            values: vec![0.25, NO_RETURN, 1.0, 0.5, 0.75, NO_RETURN],
        };
        let apath = dir.path().join("x.albm");
        write_albedo_map(&albedo, &apath).unwrap();
        assert_eq!(read_albedo_map(&apath).unwrap(), albedo);
    }

    #[test]
    fn scene_text_parses_and_validates() {
        let text = "\
# a test scene
[camera]
width = 32
height = 24

[sphere]
center = 0 0 3
radius = 0.5
albedo = 0.9

[box]
center = 1 0 2
size = 0.5 0.5 0.5
albedo = 0.6

[plane]
point = 0 0 9
normal = 0 0 -1
albedo = 0.4

[background]
far_plane = 8.0
";
        let (spec, camera) = parse_scene(text).unwrap();
        assert_eq!(spec.primitives.len(), 3);
        assert_eq!(
            spec.background,
            Background::FarPlane { distance: 8.0, albedo: 1.0 }
        );
        let camera = camera.unwrap();
        assert_eq!((camera.width, camera.height), (32, 24));
        assert_eq!(camera.fx, 32.0);
        assert_eq!(camera.cx, 16.0);

        assert!(parse_scene("[sphere]\nradius = 1\nalbedo = 0.5\n").is_err());
        assert!(parse_scene("stray = 1\n").is_err());
        assert!(parse_scene("[warp]\nx = 1\n").is_err());
    }
}
