//! Coordinates, oriented 3D boxes, rigid motions and rotated 3D IoU.
//!
//! The vertical axis is `z`. A [`Box3D`] is centred on its geometric centre;
//! its length `l` runs along the local x axis (the heading), its width `w`
//! along the local y axis and its height `h` along z. Yaw `ry` rotates the
//! box about the vertical axis, counter-clockwise seen from above.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Polygon intersections smaller than this (m²) are treated as empty.
pub const AREA_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("box size must be strictly positive, got w={w} h={h} l={l}")]
    DegenerateBox { w: f64, h: f64, l: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(self, other: Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn dist(self, other: Point3) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotates about the vertical axis by `angle` radians.
    pub fn rotate_z(self, angle: f64) -> Point3 {
        let (s, c) = angle.sin_cos();
        Point3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut r = (angle + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid may round up to exactly 2π
    if r >= PI {
        r -= 2.0 * PI;
    }
    r
}

/// Oriented 3D bounding box. Construction validates the size and wraps the yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    center: Point3,
    w: f64,
    h: f64,
    l: f64,
    ry: f64,
}

impl Box3D {
    pub fn new(center: Point3, w: f64, h: f64, l: f64, ry: f64) -> Result<Self, GeomError> {
        if !center.is_finite() || !ry.is_finite() {
            return Err(GeomError::NonFinite("box pose"));
        }
        if !(w > 0.0 && h > 0.0 && l > 0.0) || !(w.is_finite() && h.is_finite() && l.is_finite()) {
            return Err(GeomError::DegenerateBox { w, h, l });
        }
        Ok(Self { center, w, h, l, ry: normalize_angle(ry) })
    }

    /// Builds from the `(x, y, z, w, h, l, ry)` tuple order used in files.
    pub fn from_array(v: [f64; 7]) -> Result<Self, GeomError> {
        Self::new(Point3::new(v[0], v[1], v[2]), v[3], v[4], v[5], v[6])
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.center.x, self.center.y, self.center.z, self.w, self.h, self.l, self.ry]
    }

    pub fn center(&self) -> Point3 {
        self.center
    }

    /// `(w, h, l)`.
    pub fn size(&self) -> (f64, f64, f64) {
        (self.w, self.h, self.l)
    }

    pub fn ry(&self) -> f64 {
        self.ry
    }

    pub fn volume(&self) -> f64 {
        self.w * self.h * self.l
    }

    /// Same pose, new size.
    pub fn with_size(&self, w: f64, h: f64, l: f64) -> Result<Self, GeomError> {
        Self::new(self.center, w, h, l, self.ry)
    }

    /// Maps a world point into the box frame (origin at the centre, x along the heading).
    pub fn to_local(&self, p: Point3) -> Point3 {
        (p - self.center).rotate_z(-self.ry)
    }

    /// Inverse of [`Box3D::to_local`].
    pub fn to_world(&self, p: Point3) -> Point3 {
        p.rotate_z(self.ry) + self.center
    }

    /// Expresses `other` in this box's frame.
    pub fn box_to_local(&self, other: &Box3D) -> Box3D {
        Box3D {
            center: self.to_local(other.center),
            ry: normalize_angle(other.ry - self.ry),
            ..*other
        }
    }

    /// Inverse of [`Box3D::box_to_local`].
    pub fn box_to_world(&self, local: &Box3D) -> Box3D {
        Box3D {
            center: self.to_world(local.center),
            ry: normalize_angle(local.ry + self.ry),
            ..*local
        }
    }

    /// Containment in the box enlarged by `margin` on each horizontal side.
    /// Boundaries are inclusive.
    pub fn contains_with_margin(&self, p: Point3, margin: f64) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= self.l / 2.0 + margin
            && q.y.abs() <= self.w / 2.0 + margin
            && q.z.abs() <= self.h / 2.0
    }

    /// Horizontal footprint containment, ignoring z.
    pub fn footprint_contains(&self, p: Point3) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= self.l / 2.0 && q.y.abs() <= self.w / 2.0
    }

    /// Footprint corners, counter-clockwise.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.ry.sin_cos();
        let hl = self.l / 2.0;
        let hw = self.w / 2.0;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        let mut out = [[0.0; 2]; 4];
        for (o, [x, y]) in out.iter_mut().zip(local) {
            *o = [c * x - s * y + self.center.x, s * x + c * y + self.center.y];
        }
        out
    }

    fn z_range(&self) -> (f64, f64) {
        (self.center.z - self.h / 2.0, self.center.z + self.h / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidMotion {
    pub translation: Point3,
    pub rotation: f64,
}

impl RigidMotion {
    pub fn new(translation: Point3, rotation: f64) -> Result<Self, GeomError> {
        if !translation.is_finite() || !rotation.is_finite() {
            return Err(GeomError::NonFinite("rigid motion"));
        }
        Ok(Self { translation, rotation: normalize_angle(rotation) })
    }

    pub fn translation(t: Point3) -> Self {
        Self { translation: t, rotation: 0.0 }
    }

    /// Rotates a point about the vertical axis through the origin, then translates.
    pub fn apply_point(&self, p: Point3) -> Point3 {
        p.rotate_z(self.rotation) + self.translation
    }

    /// Applies the motion to a whole box as a rigid body (centre and heading).
    pub fn apply_box(&self, b: &Box3D) -> Box3D {
        Box3D {
            center: self.apply_point(b.center),
            ry: normalize_angle(b.ry + self.rotation),
            ..*b
        }
    }
}

/// Translates the box centre and increments its yaw; the size is unchanged.
pub fn apply_motion(b: &Box3D, m: &RigidMotion) -> Box3D {
    Box3D {
        center: b.center + m.translation,
        ry: normalize_angle(b.ry + m.rotation),
        ..*b
    }
}

pub fn center_error(a: &Box3D, b: &Box3D) -> f64 {
    a.center.dist(b.center)
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    acc.abs() / 2.0
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland–Hodgman clipping of `subject` against the convex, counter-clockwise `clip`.
pub fn clip_convex_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn segment_line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let denom = dp - dq;
    if denom.abs() < f64::MIN_POSITIVE {
        return q;
    }
    let t = dp / denom;
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Intersection area of the two horizontal footprints.
pub fn footprint_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let area = polygon_area(&clip_convex_polygon(&a.footprint(), &b.footprint()));
    if area < AREA_EPS {
        0.0
    } else {
        area
    }
}

/// Volumetric IoU of two oriented boxes: footprint overlap area times vertical
/// overlap, over the union volume.
pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = (a1.min(b1) - a0.max(b0)).max(0.0);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = footprint_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Bird's-eye-view IoU of the footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = footprint_intersection_area(a, b);
    let union = a.w * a.l + b.w * b.l - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Which overlap measure the metrics use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IouKind {
    #[default]
    Volumetric,
    BirdsEye,
}

impl IouKind {
    pub fn eval(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            IouKind::Volumetric => iou3d(a, b),
            IouKind::BirdsEye => iou_bev(a, b),
        }
    }
}

/// Points cropped out of a cloud together with their source indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Crop {
    pub indices: Vec<usize>,
    pub points: Vec<Point3>,
}

impl Crop {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Keeps the points inside `b` enlarged horizontally by `margin`, in input order.
pub fn crop_points(cloud: &[Point3], b: &Box3D, margin: f64) -> Crop {
    let mut crop = Crop::default();
    for (i, &p) in cloud.iter().enumerate() {
        if b.contains_with_margin(p, margin) {
            crop.indices.push(i);
            crop.points.push(p);
        }
    }
    crop
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(x: f64, ry: f64) -> Box3D {
        Box3D::new(Point3::new(x, 0.0, 0.0), 1.0, 1.0, 1.0, ry).unwrap()
    }

    #[test]
    fn identical_boxes_have_unit_iou() {
        let b = Box3D::new(Point3::new(1.0, -2.0, 0.5), 1.7, 1.5, 4.2, 0.7).unwrap();
        assert!((iou3d(&b, &b) - 1.0).abs() < 1e-12);
        assert!((iou_bev(&b, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_shifted_unit_cubes() {
        let iou = iou3d(&cube(0.0, 0.0), &cube(0.5, 0.0));
        assert!((iou - 1.0 / 3.0).abs() < 1e-12, "{iou}");
    }

    #[test]
    fn disjoint_boxes_have_zero_iou() {
        assert_eq!(iou3d(&cube(0.0, 0.0), &cube(3.0, 0.3)), 0.0);
        let high = Box3D::new(Point3::new(0.0, 0.0, 5.0), 1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(iou3d(&cube(0.0, 0.0), &high), 0.0);
    }

    #[test]
    fn touching_boxes_have_zero_iou() {
        assert_eq!(iou3d(&cube(0.0, 0.0), &cube(1.0, 0.0)), 0.0);
    }

    #[test]
    fn half_turn_is_the_same_solid() {
        let a = Box3D::new(Point3::new(0.3, 0.1, 0.0), 1.2, 1.0, 3.0, 0.4).unwrap();
        let b = Box3D::new(a.center(), 1.2, 1.0, 3.0, 0.4 + PI).unwrap();
        assert!((iou3d(&a, &b) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_sizes_are_rejected() {
        assert!(matches!(
            Box3D::new(Point3::ORIGIN, 0.0, 1.0, 1.0, 0.0),
            Err(GeomError::DegenerateBox { .. })
        ));
        assert!(Box3D::new(Point3::ORIGIN, 1.0, -1.0, 1.0, 0.0).is_err());
        assert!(Box3D::new(Point3::ORIGIN, 1.0, 1.0, f64::NAN, 0.0).is_err());
        assert!(Box3D::new(Point3::new(f64::INFINITY, 0.0, 0.0), 1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn center_error_examples() {
        let at = |x, y, z| Box3D::new(Point3::new(x, y, z), 1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(center_error(&at(0.0, 0.0, 0.0), &at(0.0, 0.0, 0.0)), 0.0);
        assert_eq!(center_error(&at(0.0, 0.0, 0.0), &at(3.0, 4.0, 0.0)), 5.0);
        assert!((center_error(&at(1.0, 1.0, 1.0), &at(2.0, 3.0, 4.0)) - 14f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn apply_motion_examples() {
        let b = cube(0.0, 0.3);
        assert_eq!(apply_motion(&b, &RigidMotion::default()), b);
        let moved = apply_motion(&b, &RigidMotion::translation(Point3::new(1.0, 0.0, 0.0)));
        assert_eq!(moved.center(), Point3::new(1.0, 0.0, 0.0));
        assert_eq!(moved.size(), b.size());
        let spun = apply_motion(&b, &RigidMotion { translation: Point3::ORIGIN, rotation: 2.0 * PI });
        assert!((spun.ry() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn angle_normalization_range() {
        for a in [-PI, PI, 3.0 * PI, -7.5, 0.0, 1e3, -1e3] {
            let r = normalize_angle(a);
            assert!((-PI..PI).contains(&r), "{a} -> {r}");
        }
        assert_eq!(normalize_angle(PI), -PI);
    }

    #[test]
    fn crop_examples() {
        let b = Box3D::new(Point3::new(2.0, 1.0, 0.5), 1.0, 1.0, 2.0, 0.5).unwrap();
        assert!(crop_points(&[], &b, 1.0).is_empty());
        for margin in [0.0, 0.5, 3.0] {
            let c = crop_points(&[Point3::new(9.0, 9.0, 9.0), b.center()], &b, margin);
            assert_eq!(c.indices, vec![1]);
        }
    }

    #[test]
    fn local_world_round_trip() {
        let b = Box3D::new(Point3::new(2.0, -1.0, 0.5), 1.0, 1.0, 2.0, 1.1).unwrap();
        let p = Point3::new(0.3, 0.7, -0.2);
        let q = b.to_world(b.to_local(p));
        assert!(p.dist(q) < 1e-12);
        let other = Box3D::new(Point3::new(3.0, 0.0, 0.4), 1.5, 1.2, 3.0, -0.4).unwrap();
        let back = b.box_to_world(&b.box_to_local(&other));
        assert!(back.center().dist(other.center()) < 1e-12);
        assert!((back.ry() - other.ry()).abs() < 1e-12);
    }
}
