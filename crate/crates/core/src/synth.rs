//! Synthetic LiDAR sequences and a range-dependent mock labeler.
//!
//! Surfaces are tiled into small patches; each patch receives a number of
//! points proportional to `area / r²`, where `r` is the patch distance from
//! the sensor. No ray casting and no occlusion: the point is to reproduce
//! the density fall-off with range, not a faithful sensor.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{bucket_of, Point3, Pose, RangeBucket};
use crate::rng;
use crate::seqio::{self, MovingMask};

/// Class ids used by the built-in street scene (SemanticKITTI training ids).
pub mod class {
    pub const CAR: u16 = 1;
    pub const PERSON: u16 = 6;
    pub const ROAD: u16 = 9;
    pub const SIDEWALK: u16 = 11;
    pub const BUILDING: u16 = 13;
    pub const FENCE: u16 = 14;
    pub const VEGETATION: u16 = 15;
    pub const TRUNK: u16 = 16;
    pub const TERRAIN: u16 = 17;
    pub const POLE: u16 = 18;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Path2 {
    Straight,
    /// Constant left turn of the given radius, meters.
    Arc { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub path: Path2,
    /// Meters per second.
    pub speed: f64,
    /// Scans per second.
    pub rate_hz: f64,
    pub scans: usize,
    /// Initial heading, radians from +x.
    #[serde(default)]
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModel {
    pub max_range: f64,
    /// Returns per square meter of surface seen at 1 m.
    pub density: f64,
    /// Sensor height above the ground plane, meters.
    pub height: f64,
    /// Returns closer than this (the vehicle itself) are discarded.
    #[serde(default = "default_min_range")]
    pub min_range: f64,
}

fn default_min_range() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    /// Axis-aligned box; the bottom face is not sampled.
    Box { center: [f64; 3], size: [f64; 3], class: u16 },
    /// Horizontal rectangle at height `center[2]`.
    Plane { center: [f64; 3], size: [f64; 2], class: u16 },
}

impl Primitive {
    pub fn class(&self) -> u16 {
        match *self {
            Primitive::Box { class, .. } | Primitive::Plane { class, .. } => class,
        }
    }

    fn shifted(&self, d: [f64; 3]) -> Primitive {
        let add = |c: [f64; 3]| [c[0] + d[0], c[1] + d[1], c[2] + d[2]];
        match *self {
            Primitive::Box { center, size, class } => Primitive::Box { center: add(center), size, class },
            Primitive::Plane { center, size, class } => Primitive::Plane { center: add(center), size, class },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mover {
    pub body: Primitive,
    /// Meters per second, world frame.
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub trajectory: Trajectory,
    pub sensor: SensorModel,
    #[serde(default)]
    pub statics: Vec<Primitive>,
    #[serde(default)]
    pub movers: Vec<Mover>,
    /// Edge length of the sampling patches, meters.
    #[serde(default = "default_patch")]
    pub patch_size: f64,
}

fn positive(x: f64) -> bool {
    x > 0.0
}

fn default_patch() -> f64 {
    1.0
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.into()));
        if self.trajectory.scans == 0 {
            return bad("scene needs at least one scan");
        }
        if !positive(self.sensor.max_range) {
            return bad("sensor max_range must be positive");
        }
        if !positive(self.trajectory.rate_hz) || !positive(self.sensor.density) || !positive(self.patch_size) {
            return bad("rate_hz, density and patch_size must be positive");
        }
        if let Path2::Arc { radius } = self.trajectory.path {
            if !positive(radius) {
                return bad("arc radius must be positive");
            }
        }
        Ok(())
    }

    /// A straight street lined with buildings, parked cars, poles and trees,
    /// with two moving cars. `scans` scans at 10 Hz, 10 m/s, 120 m range.
    pub fn street(seed: u64, scans: usize) -> Self {
        use class::*;
        let length = scans as f64 + 260.0;
        let x0 = -130.0;
        let xc = x0 + length / 2.0;
        let mut statics = vec![
            Primitive::Plane { center: [xc, 0.0, 0.0], size: [length, 12.0], class: ROAD },
            Primitive::Plane { center: [xc, 7.5, 0.1], size: [length, 3.0], class: SIDEWALK },
            Primitive::Plane { center: [xc, -7.5, 0.1], size: [length, 3.0], class: SIDEWALK },
            Primitive::Plane { center: [xc, 14.0, 0.0], size: [length, 10.0], class: TERRAIN },
            Primitive::Plane { center: [xc, -14.0, 0.0], size: [length, 10.0], class: TERRAIN },
        ];
        let mut x = x0 + 5.0;
        let mut k = 0u32;
        while x < x0 + length - 5.0 {
            let side = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
            statics.push(Primitive::Box { center: [x, side * 24.0, 4.0], size: [12.0, 8.0, 8.0], class: BUILDING });
            statics.push(Primitive::Box { center: [x + 7.0, -side * 4.8, 0.8], size: [4.2, 1.8, 1.6], class: CAR });
            statics.push(Primitive::Box { center: [x + 3.0, side * 9.3, 0.6], size: [6.0, 0.1, 1.2], class: FENCE });
            statics.push(Primitive::Box { center: [x + 10.0, side * 6.6, 3.0], size: [0.25, 0.25, 6.0], class: POLE });
            statics.push(Primitive::Box { center: [x + 13.0, -side * 12.0, 1.5], size: [0.5, 0.5, 3.0], class: TRUNK });
            statics.push(Primitive::Box { center: [x + 13.0, -side * 12.0, 5.0], size: [4.0, 4.0, 4.0], class: VEGETATION });
            statics.push(Primitive::Box { center: [x + 4.0, -side * 7.5, 1.0], size: [0.5, 0.5, 1.8], class: PERSON });
            x += 16.0;
            k += 1;
        }
        SceneSpec {
            seed,
            trajectory: Trajectory {
                path: Path2::Straight,
                speed: 10.0,
                rate_hz: 10.0,
                scans,
                heading: 0.0,
            },
            sensor: SensorModel {
                max_range: 120.0,
                density: 600.0,
                height: 1.8,
                min_range: 2.0,
            },
            statics,
            movers: vec![
                Mover {
                    body: Primitive::Box { center: [60.0, -2.0, 0.8], size: [4.5, 1.9, 1.6], class: CAR },
                    velocity: [-12.0, 0.0, 0.0],
                },
                Mover {
                    body: Primitive::Box { center: [15.0, 2.5, 0.8], size: [4.5, 1.9, 1.6], class: CAR },
                    velocity: [14.0, 0.0, 0.0],
                },
            ],
            patch_size: 1.0,
        }
    }

    pub fn time_of(&self, scan: usize) -> f64 {
        scan as f64 / self.trajectory.rate_hz
    }

    /// Sensor pose of scan `scan`; the sensor sits `height` above ground.
    pub fn pose(&self, scan: usize) -> Pose {
        let t = self.time_of(scan);
        let tr = &self.trajectory;
        let h = tr.heading;
        let d = tr.speed * t;
        let (x, y, yaw) = match tr.path {
            Path2::Straight => (d * h.cos(), d * h.sin(), h),
            Path2::Arc { radius } => {
                let yaw = h + d / radius;
                (radius * (yaw.sin() - h.sin()), -radius * (yaw.cos() - h.cos()), yaw)
            }
        };
        Pose::from_yaw(yaw, [x, y, self.sensor.height])
    }
}

/// One generated scan in sensor coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScan {
    pub points: Vec<Point3>,
    pub labels: Vec<u16>,
    pub mask: MovingMask,
    pub pose: Pose,
}

const INTENSITY: f32 = 0.5;

/// A flat rectangular patch: origin corner plus two edge vectors.
struct Patch {
    origin: [f64; 3],
    u: [f64; 3],
    v: [f64; 3],
}

impl Patch {
    fn area(&self) -> f64 {
        let c = cross(self.u, self.v);
        (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
    }

    fn at(&self, a: f64, b: f64) -> [f64; 3] {
        std::array::from_fn(|i| self.origin[i] + a * self.u[i] + b * self.v[i])
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Splits a rectangle into tiles no longer than `step` along either edge.
fn tile(origin: [f64; 3], u: [f64; 3], v: [f64; 3], step: f64, out: &mut Vec<Patch>) {
    let len = |w: [f64; 3]| (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let nu = (len(u) / step).ceil().max(1.0) as usize;
    let nv = (len(v) / step).ceil().max(1.0) as usize;
    let du = u.map(|c| c / nu as f64);
    let dv = v.map(|c| c / nv as f64);
    for a in 0..nu {
        for b in 0..nv {
            out.push(Patch {
                origin: std::array::from_fn(|i| origin[i] + a as f64 * du[i] + b as f64 * dv[i]),
                u: du,
                v: dv,
            });
        }
    }
}

fn surface_patches(p: &Primitive, step: f64) -> Vec<Patch> {
    let mut out = Vec::new();
    match *p {
        Primitive::Plane { center, size, .. } => {
            let o = [center[0] - size[0] / 2.0, center[1] - size[1] / 2.0, center[2]];
            tile(o, [size[0], 0.0, 0.0], [0.0, size[1], 0.0], step, &mut out);
        }
        Primitive::Box { center, size, .. } => {
            let [hx, hy, hz] = size.map(|s| s / 2.0);
            let [cx, cy, cz] = center;
            let (x0, y0, z0) = (cx - hx, cy - hy, cz - hz);
            let (x1, y1, z1) = (cx + hx, cy + hy, cz + hz);
            let ex = [size[0], 0.0, 0.0];
            let ey = [0.0, size[1], 0.0];
            let ez = [0.0, 0.0, size[2]];
            tile([x0, y0, z1], ex, ey, step, &mut out);
            tile([x0, y0, z0], ey, ez, step, &mut out);
            tile([x1, y0, z0], ey, ez, step, &mut out);
            tile([x0, y0, z0], ex, ez, step, &mut out);
            tile([x0, y1, z0], ex, ez, step, &mut out);
        }
    }
    out
}

/// Samples one primitive as seen from `sensor` (world position). Returns
/// world-frame points.
fn sample_primitive(
    prim: &Primitive,
    sensor: [f64; 3],
    spec: &SceneSpec,
    rng_keys: [u64; 3],
    out: &mut Vec<[f64; 3]>,
) {
    let sm = &spec.sensor;
    for (pi, patch) in surface_patches(prim, spec.patch_size).iter().enumerate() {
        let c = patch.at(0.5, 0.5);
        let d: [f64; 3] = std::array::from_fn(|i| c[i] - sensor[i]);
        let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let reach = sm.max_range + spec.patch_size;
        if r2 > reach * reach {
            continue;
        }
        let expected = sm.density * patch.area() / r2.max(1.0);
        let mut rng = rng::keyed(spec.seed, &[rng_keys[0], rng_keys[1], rng_keys[2], pi as u64]);
        let mut n = expected.floor() as usize;
        if rng.random::<f64>() < expected.fract() {
            n += 1;
        }
        for _ in 0..n {
            let p = patch.at(rng.random(), rng.random());
            let r = ((p[0] - sensor[0]).powi(2) + (p[1] - sensor[1]).powi(2) + (p[2] - sensor[2]).powi(2)).sqrt();
            if r <= sm.max_range && r >= sm.min_range {
                out.push(p);
            }
        }
    }
}

const KIND_STATIC: u64 = 0;
const KIND_MOVER: u64 = 1;

pub fn generate_scan(spec: &SceneSpec, scan: usize) -> SyntheticScan {
    let pose = spec.pose(scan);
    let sensor = pose.translation_vector();
    let to_sensor = pose.invert();
    let t = spec.time_of(scan);

    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut mask = Vec::new();
    let mut world = Vec::new();
    let mut emit = |world: &mut Vec<[f64; 3]>, class: u16, moving: bool| {
        for w in world.drain(..) {
            points.push(to_sensor.transform_point(&Point3::with_intensity(w[0], w[1], w[2], INTENSITY)));
            labels.push(class);
            mask.push(moving);
        }
    };
    for (i, prim) in spec.statics.iter().enumerate() {
        sample_primitive(prim, sensor, spec, [scan as u64, KIND_STATIC, i as u64], &mut world);
        emit(&mut world, prim.class(), false);
    }
    for (i, mover) in spec.movers.iter().enumerate() {
        let body = mover.body.shifted(mover.velocity.map(|v| v * t));
        sample_primitive(&body, sensor, spec, [scan as u64, KIND_MOVER, i as u64], &mut world);
        emit(&mut world, body.class(), true);
    }
    // Stored files are 32-bit; round here so in-memory scans match disk.
    for p in &mut points {
        p.x = p.x as f32 as f64;
        p.y = p.y as f32 as f64;
        p.z = p.z as f32 as f64;
    }
    SyntheticScan {
        points,
        labels,
        mask: MovingMask(mask),
        pose,
    }
}

/// Writes the sequence in the standard layout: `velodyne/`, `labels/`,
/// `masks/`, `poses.txt`, plus `manifest.toml` and the `scene.toml` used.
pub fn generate_sequence(spec: &SceneSpec, out_dir: &Path) -> Result<()> {
    spec.validate()?;
    let n = spec.trajectory.scans;
    (0..n).into_par_iter().try_for_each(|i| {
        let scan = generate_scan(spec, i);
        let name = seqio::frame_name(i as u32);
        seqio::write_points(out_dir.join("velodyne").join(format!("{name}.bin")), &scan.points)?;
        seqio::write_labels(out_dir.join("labels").join(format!("{name}.label")), &scan.labels)?;
        seqio::write_mask(out_dir.join("masks").join(format!("{name}.mask")), &scan.mask)
    })?;
    let poses: Vec<Pose> = (0..n).map(|i| spec.pose(i)).collect();
    seqio::write_poses(out_dir.join("poses.txt"), &poses)?;
    let manifest = "poses = \"poses.txt\"\nscan_dir = \"velodyne\"\nlabels = \"labels\"\nmasks = \"masks\"\n";
    std::fs::write(out_dir.join(seqio::MANIFEST_FILE), manifest).map_err(|e| Error::io(out_dir, e))?;
    let scene = toml::to_string(spec).map_err(|e| Error::InvalidParams(e.to_string()))?;
    std::fs::write(out_dir.join("scene.toml"), scene).map_err(|e| Error::io(out_dir, e))
}

/// Per-range probability that the mock labeler reproduces the true class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelerSpec {
    pub p_close: f64,
    pub p_medium: f64,
    pub p_far: f64,
    pub seed: u64,
}

impl LabelerSpec {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_close, self.p_medium, self.p_far];
        if probs.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::InvalidParams(format!("labeler probabilities must lie in (0, 1], got {probs:?}")));
        }
        if self.p_close < self.p_medium || self.p_medium < self.p_far {
            return Err(Error::InvalidParams(format!("labeler probabilities must not increase with range, got {probs:?}")));
        }
        Ok(())
    }

    pub fn accuracy(&self, bucket: RangeBucket) -> f64 {
        match bucket {
            RangeBucket::Close => self.p_close,
            RangeBucket::Medium => self.p_medium,
            RangeBucket::Far => self.p_far,
        }
    }
}

/// Keeps each true label with its range bucket's probability, otherwise
/// substitutes a uniformly drawn different class from `classes`. `stream`
/// separates independent prediction runs (e.g. one per frame).
pub fn mock_predict(gt: &[u16], radii: &[f64], spec: &LabelerSpec, classes: &[u16], stream: u64) -> Result<Vec<u16>> {
    spec.validate()?;
    if gt.len() != radii.len() {
        return Err(Error::LengthMismatch {
            what: "radii for mock prediction".into(),
            expected: gt.len(),
            found: radii.len(),
        });
    }
    let mut rng = rng::keyed(spec.seed, &[stream]);
    let mut wrong = Vec::with_capacity(classes.len());
    Ok(gt
        .iter()
        .zip(radii)
        .map(|(&truth, &r)| {
            let p = spec.accuracy(bucket_of(r));
            if rng.random::<f64>() < p {
                return truth;
            }
            wrong.clear();
            wrong.extend(classes.iter().copied().filter(|&c| c != truth));
            if wrong.is_empty() {
                truth
            } else {
                wrong[rng.random_range(0..wrong.len())]
            }
        })
        .collect())
}
