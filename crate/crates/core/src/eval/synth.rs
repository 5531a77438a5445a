//! Synthetic LiDAR-like tracklets.
//!
//! Targets are boxes seen from a sensor at `(0, 0, SENSOR_HEIGHT)`. Points are
//! sampled on the sensor-facing faces plus the roof, area weighted, with a
//! little range noise. Non-rigid targets get extra per-point jitter every
//! frame. Clutter adds static blobs, scattered background returns and, at the
//! high level, a second object moving alongside the target. All coordinates
//! are rounded to `f32` so the binary frame format stores them exactly.

use rayon::prelude::*;

use super::{Category, ClutterLevel, DensityLevel, EvalError, Frame, Tracklet, TrackletMeta};
use crate::geom::{Box3D, Point3};
use crate::rng::SplitMix64;

const SENSOR_HEIGHT: f64 = 1.8;
const SURFACE_INSET: f64 = 0.05;
const RANGE_NOISE: f64 = 0.015;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionProfile {
    /// Metres per frame along the heading.
    pub speed: f64,
    /// Radians per frame.
    pub yaw_rate: f64,
    /// Per-frame positional noise (standard deviation, metres).
    pub noise: f64,
}

impl MotionProfile {
    pub const STATIC: MotionProfile = MotionProfile { speed: 0.0, yaw_rate: 0.0, noise: 0.0 };

    pub fn typical(category: Category, rng: &mut SplitMix64) -> Self {
        match category {
            Category::Rigid => Self {
                speed: rng.uniform(0.2, 1.0),
                yaw_rate: rng.uniform(-0.03, 0.03),
                noise: 0.03,
            },
            Category::Nonrigid => Self {
                speed: rng.uniform(0.05, 0.25),
                yaw_rate: rng.uniform(-0.05, 0.05),
                noise: 0.02,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackletSpec {
    pub name: String,
    pub category: Category,
    pub frames: usize,
    pub motion: MotionProfile,
    pub density: DensityLevel,
    pub clutter: ClutterLevel,
    /// Per-point Gaussian displacement applied to non-rigid targets.
    pub shape_jitter: f64,
    pub seed: u64,
}

impl TrackletSpec {
    pub fn new(name: impl Into<String>, category: Category, frames: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            category,
            frames,
            motion: MotionProfile::STATIC,
            density: DensityLevel::Medium,
            clutter: ClutterLevel::Clean,
            shape_jitter: 0.05,
            seed,
        }
    }
}

fn object_size(category: Category, rng: &mut SplitMix64) -> (f64, f64, f64) {
    match category {
        Category::Rigid => (rng.uniform(1.6, 2.0), rng.uniform(1.4, 1.7), rng.uniform(3.8, 4.6)),
        Category::Nonrigid => (rng.uniform(0.55, 0.8), rng.uniform(1.6, 1.9), rng.uniform(0.6, 0.9)),
    }
}

/// Point count on the object in the first frame.
fn base_count(density: DensityLevel, rng: &mut SplitMix64) -> usize {
    match density {
        DensityLevel::Sparse => rng.below(46),
        DensityLevel::Medium => 50 + rng.below(101),
        DensityLevel::Dense => 150 + rng.below(251),
    }
}

fn f32_round(p: Point3) -> Point3 {
    Point3::new(p.x as f32 as f64, p.y as f32 as f64, p.z as f32 as f64)
}

/// Samples `n` surface points of `b`, in world coordinates.
fn shell_points(b: &Box3D, n: usize, jitter: f64, rng: &mut SplitMix64, out: &mut Vec<Point3>) {
    if n == 0 {
        return;
    }
    let (w, h, l) = b.size();
    let hx = (l / 2.0 - SURFACE_INSET).max(0.01);
    let hy = (w / 2.0 - SURFACE_INSET).max(0.01);
    let hz = (h / 2.0 - SURFACE_INSET).max(0.01);
    let sensor = b.to_local(Point3::new(0.0, 0.0, SENSOR_HEIGHT));
    // (axis, sign, area); the roof is always included
    let mut faces: Vec<(usize, f64, f64)> = vec![(2, 1.0, 4.0 * hx * hy)];
    for (axis, half, area) in [(0, hx, 4.0 * hy * hz), (1, hy, 4.0 * hx * hz)] {
        let s = [sensor.x, sensor.y][axis];
        if s > half {
            faces.push((axis, 1.0, area));
        } else if s < -half {
            faces.push((axis, -1.0, area));
        }
    }
    let total: f64 = faces.iter().map(|f| f.2).sum();
    for _ in 0..n {
        let mut pick = rng.uniform(0.0, total);
        let mut face = faces[faces.len() - 1];
        for f in &faces {
            if pick < f.2 {
                face = *f;
                break;
            }
            pick -= f.2;
        }
        let mut q = [rng.uniform(-hx, hx), rng.uniform(-hy, hy), rng.uniform(-hz, hz)];
        q[face.0] = face.1 * [hx, hy, hz][face.0];
        let mut p = Point3::new(q[0], q[1], q[2]);
        p = p + Point3::new(rng.normal(), rng.normal(), rng.normal()) * RANGE_NOISE;
        if jitter > 0.0 {
            p = p + Point3::new(rng.normal(), rng.normal(), rng.normal()) * jitter;
        }
        out.push(f32_round(b.to_world(p)));
    }
}

struct Blob {
    center: Point3,
    count: usize,
}

fn advance(b: &Box3D, m: &MotionProfile, rng: &mut SplitMix64) -> Box3D {
    let wobble = if m.speed > 0.0 { 0.01 * rng.normal() } else { 0.0 };
    let ry = b.ry() + m.yaw_rate + wobble;
    let step = Point3::new(ry.cos(), ry.sin(), 0.0) * m.speed;
    let noise = Point3::new(rng.normal(), rng.normal(), 0.2 * rng.normal()) * m.noise;
    let (w, h, l) = b.size();
    Box3D::new(b.center() + step + noise, w, h, l, ry).expect("positive size")
}

pub fn gen_tracklet(spec: &TrackletSpec) -> Result<Tracklet, EvalError> {
    if spec.frames == 0 {
        return Err(EvalError::Empty);
    }
    let mut rng = SplitMix64::new(spec.seed);
    let (w, h, l) = object_size(spec.category, &mut rng);
    let range = rng.uniform(8.0, 25.0);
    let bearing = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
    let yaw = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
    let start = Point3::new(range * bearing.cos(), range * bearing.sin(), h / 2.0);
    let first = Box3D::new(start, w, h, l, yaw)?;
    let base = base_count(spec.density, &mut rng);

    let mut boxes = vec![first];
    for _ in 1..spec.frames {
        let next = advance(boxes.last().expect("non-empty"), &spec.motion, &mut rng);
        boxes.push(next);
    }

    let mut clutter_rng = rng.substream("clutter");
    let (n_blobs, n_scatter) = match spec.clutter {
        ClutterLevel::Clean => (0, 0),
        ClutterLevel::Low => (3, 20),
        ClutterLevel::High => (6, 60),
    };
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| {
            let anchor = boxes[clutter_rng.below(boxes.len())];
            let side = if clutter_rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
            let local = Point3::new(clutter_rng.uniform(-2.0, 2.0), side * clutter_rng.uniform(1.5 + w / 2.0, 4.5), 0.0);
            let mut center = anchor.to_world(local);
            center.z = clutter_rng.uniform(0.4, 1.5);
            Blob { center, count: 15 + clutter_rng.below(20) }
        })
        .collect();
    let distractor = if spec.clutter == ClutterLevel::High {
        let (dw, dh, dl) = object_size(spec.category, &mut clutter_rng);
        let side = if clutter_rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
        let lateral = side * clutter_rng.uniform(2.8, 4.5).max((w + dw) / 2.0 + 0.8);
        let offset = first.to_world(Point3::new(clutter_rng.uniform(-1.0, 1.0), lateral, 0.0)) - first.center();
        let count = base_count(spec.density, &mut clutter_rng).max(10);
        Some((offset, (dw, dh, dl), count))
    } else {
        None
    };

    let jitter = match spec.category {
        Category::Rigid => 0.0,
        Category::Nonrigid => spec.shape_jitter,
    };
    let mut frames = Vec::with_capacity(spec.frames);
    for (t, gt) in boxes.iter().enumerate() {
        let mut frng = rng.substream_index(t as u64);
        let n = if t == 0 { base } else { (base as f64 * frng.uniform(0.8, 1.2)).round() as usize };
        let mut points = Vec::new();
        shell_points(gt, n, jitter, &mut frng, &mut points);
        for blob in &blobs {
            for _ in 0..blob.count {
                let d = Point3::new(frng.gaussian(0.0, 0.25), frng.gaussian(0.0, 0.25), frng.gaussian(0.0, 0.3));
                points.push(f32_round(blob.center + d));
            }
        }
        for _ in 0..n_scatter {
            let c = gt.center();
            let p = Point3::new(c.x + frng.uniform(-10.0, 10.0), c.y + frng.uniform(-10.0, 10.0), frng.uniform(0.0, 2.5));
            points.push(f32_round(p));
        }
        if let Some((offset, (dw, dh, dl), count)) = distractor {
            let mut center = gt.center() + offset;
            center.z = dh / 2.0;
            let other = Box3D::new(center, dw, dh, dl, gt.ry())?;
            let dn = (count as f64 * frng.uniform(0.8, 1.2)).round() as usize;
            shell_points(&other, dn, jitter, &mut frng, &mut points);
        }
        frames.push(Frame { points, gt: *gt });
    }
    let meta = TrackletMeta {
        name: spec.name.clone(),
        category: spec.category,
        density: spec.density,
        clutter: spec.clutter,
        seed: spec.seed,
    };
    Tracklet::new(meta, frames)
}

/// Proportions of density levels in a generated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DensityMix {
    #[default]
    Mixed,
    SparseHeavy,
    DenseHeavy,
}

impl DensityMix {
    fn weights(self) -> [f64; 3] {
        match self {
            DensityMix::Mixed => [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            DensityMix::SparseHeavy => [0.6, 0.25, 0.15],
            DensityMix::DenseHeavy => [0.15, 0.25, 0.6],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DensityMix::Mixed => "mixed",
            DensityMix::SparseHeavy => "sparse-heavy",
            DensityMix::DenseHeavy => "dense-heavy",
        }
    }
}

impl std::str::FromStr for DensityMix {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mixed" | "uniform" => Ok(DensityMix::Mixed),
            "sparse-heavy" => Ok(DensityMix::SparseHeavy),
            "dense-heavy" => Ok(DensityMix::DenseHeavy),
            other => Err(format!("unknown density mix {other:?}")),
        }
    }
}

/// Density levels for `count` tracklets in exact proportion (sparse rounded
/// up, dense down), shuffled.
fn density_plan(count: usize, mix: DensityMix, rng: &mut SplitMix64) -> Vec<DensityLevel> {
    let [ws, _, wd] = mix.weights();
    let n_sparse = ((count as f64 * ws).ceil() as usize).min(count);
    let n_dense = ((count as f64 * wd).floor() as usize).min(count - n_sparse);
    let mut plan = vec![DensityLevel::Sparse; n_sparse];
    plan.extend(std::iter::repeat_n(DensityLevel::Medium, count - n_sparse - n_dense));
    plan.extend(std::iter::repeat_n(DensityLevel::Dense, n_dense));
    for i in (1..plan.len()).rev() {
        plan.swap(i, rng.below(i + 1));
    }
    plan
}

/// A corpus of `count` tracklets named `t0000`, `t0001`, …
pub fn gen_corpus(
    count: usize,
    frames: usize,
    categories: &[Category],
    mix: DensityMix,
    seed: u64,
) -> Result<Vec<Tracklet>, EvalError> {
    if categories.is_empty() {
        return Err(EvalError::Format("no categories requested".into()));
    }
    let root = SplitMix64::new(seed);
    let plan = density_plan(count, mix, &mut root.substream("density"));
    plan.par_iter()
        .enumerate()
        .map(|(i, &density)| {
            let mut rng = root.substream_index(i as u64);
            let category = categories[rng.below(categories.len())];
            let clutter = ClutterLevel::ALL[rng.below(ClutterLevel::ALL.len())];
            let motion = MotionProfile::typical(category, &mut rng);
            let spec = TrackletSpec {
                motion,
                density,
                clutter,
                ..TrackletSpec::new(format!("t{i:04}"), category, frames, rng.next_u64())
            };
            gen_tracklet(&spec)
        })
        .collect()
}
