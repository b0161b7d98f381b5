//! Angle arithmetic and oriented-box geometry.
//!
//! Angles are carried in radians inside the crate and converted to degrees
//! only at the edges (files, CLI output, metric values).

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A planar angle, stored in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct Angle(f64);

impl Angle {
    pub const ZERO: Angle = Angle(0.0);
    pub const HALF_TURN: Angle = Angle(PI);

    pub fn from_radians(rad: f64) -> Self {
        Angle(rad)
    }

    pub fn from_degrees(deg: f64) -> Self {
        Angle(deg.to_radians())
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    /// Direction of the vector `(cos, sin)`; `None` when the pair is zero.
    pub fn from_sin_cos(sin: f64, cos: f64) -> Option<Self> {
        if sin == 0.0 && cos == 0.0 {
            None
        } else {
            Some(Angle(sin.atan2(cos)))
        }
    }

    /// Full-range canonical form in (−π, π]. Non-finite input stays non-finite.
    pub fn full(self) -> Self {
        let r = self.0.rem_euclid(TAU);
        Angle(if r > PI { r - TAU } else { r })
    }

    /// Half-range canonical form in (−π/2, π/2].
    pub fn half(self) -> Self {
        let r = self.0.rem_euclid(PI);
        Angle(if r > FRAC_PI_2 { r - PI } else { r })
    }

    /// The opposite heading, canonicalized to full range.
    pub fn flipped(self) -> Self {
        Angle(self.0 + PI).full()
    }
}

impl std::ops::Add for Angle {
    type Output = Angle;
    fn add(self, rhs: Angle) -> Angle {
        Angle(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Angle {
    type Output = Angle;
    fn sub(self, rhs: Angle) -> Angle {
        Angle(self.0 - rhs.0)
    }
}

impl std::ops::Neg for Angle {
    type Output = Angle;
    fn neg(self) -> Angle {
        Angle(-self.0)
    }
}

/// Wraps into (−180°, 180°].
pub fn wrap_full(a: Angle) -> Result<Angle> {
    if !a.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(a.full())
}

/// Wraps into (−90°, 90°].
pub fn wrap_half(a: Angle) -> Result<Angle> {
    if !a.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(a.half())
}

/// Full-range orientation error in degrees, in [0, 180].
pub fn foe(gt: Angle, pred: Angle) -> Result<f64> {
    Ok(wrap_full(gt - pred)?.degrees().abs())
}

/// Half-range orientation error in degrees, in [0, 90].
pub fn hoe(gt: Angle, pred: Angle) -> Result<f64> {
    Ok(wrap_half(gt - pred)?.degrees().abs())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }
}

/// A BEV box: center, extent along / across the heading, and full-range
/// heading of the vehicle front.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub length: f64,
    pub width: f64,
    pub yaw: Angle,
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, length: f64, width: f64, yaw: Angle) -> Result<Self> {
        let b = OrientedBox {
            cx,
            cy,
            length,
            width,
            yaw,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cx.is_finite() && self.cy.is_finite() && self.yaw.is_finite()) {
            return Err(Error::NonFinite("box pose"));
        }
        if !(self.length > 0.0 && self.width > 0.0 && self.length.is_finite() && self.width.is_finite())
        {
            return Err(Error::DegenerateBox {
                length: self.length,
                width: self.width,
            });
        }
        Ok(())
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    pub fn with_yaw(mut self, yaw: Angle) -> Self {
        self.yaw = yaw;
        self
    }

    /// Position of `p` in the box frame (x along the heading).
    pub fn to_local(&self, p: Point2) -> Point2 {
        let (s, c) = self.yaw.radians().sin_cos();
        let d = p - self.center();
        Point2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }

    pub fn contains(&self, p: Point2) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= 0.5 * self.length && l.y.abs() <= 0.5 * self.width
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvexPolygon {
    pub vertices: Vec<Point2>,
}

impl ConvexPolygon {
    pub fn new(vertices: Vec<Point2>) -> Self {
        ConvexPolygon { vertices }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }
}

/// Corners in counter-clockwise order, starting front-right.
pub fn box_corners(b: &OrientedBox) -> ConvexPolygon {
    // Footprint is symmetric under a half turn, so rotating by the
    // half-range yaw gives bit-identical corners for θ and θ + 180°.
    let (s, c) = b.yaw.half().radians().sin_cos();
    let (hl, hw) = (0.5 * b.length, 0.5 * b.width);
    let local = [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)];
    let vertices = local
        .iter()
        .map(|&(x, y)| Point2::new(b.cx + c * x - s * y, b.cy + s * x + c * y))
        .collect();
    ConvexPolygon { vertices }
}

/// Shoelace area; polygons with fewer than three vertices have zero area.
pub fn polygon_area(p: &ConvexPolygon) -> f64 {
    let v = &p.vertices;
    if v.len() < 3 {
        return 0.0;
    }
    let twice: f64 = (0..v.len())
        .map(|i| v[i].cross(v[(i + 1) % v.len()]))
        .sum();
    (0.5 * twice).max(0.0)
}

/// Intersection of two convex counter-clockwise polygons
/// (Sutherland–Hodgman, clipping `subject` by each edge of `clip`).
pub fn clip_polygons(subject: &ConvexPolygon, clip: &ConvexPolygon) -> ConvexPolygon {
    if subject.is_empty() || clip.is_empty() {
        return ConvexPolygon::default();
    }
    let mut output = subject.vertices.clone();
    let n = clip.vertices.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip.vertices[i];
        let b = clip.vertices[(i + 1) % n];
        let edge = b - a;
        let side = |p: Point2| edge.cross(p - a);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    dedup_ring(&mut output);
    if output.len() < 3 {
        output.clear();
    }
    ConvexPolygon { vertices: output }
}

fn intersect(p: Point2, q: Point2, sp: f64, sq: f64) -> Point2 {
    let t = sp / (sp - sq);
    Point2::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

fn dedup_ring(v: &mut Vec<Point2>) {
    const EPS: f64 = 1e-12;
    v.dedup_by(|a, b| a.dist(*b) <= EPS);
    while v.len() > 1 && v[0].dist(v[v.len() - 1]) <= EPS {
        v.pop();
    }
}

fn same_footprint(a: &OrientedBox, b: &OrientedBox) -> bool {
    const EPS: f64 = 1e-12;
    (a.cx - b.cx).abs() <= EPS
        && (a.cy - b.cy).abs() <= EPS
        && (a.length - b.length).abs() <= EPS
        && (a.width - b.width).abs() <= EPS
        && (a.yaw - b.yaw).half().radians().abs() <= EPS
}

/// Intersection over union of two boxes' BEV footprints.
pub fn rotated_iou(a: &OrientedBox, b: &OrientedBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    if same_footprint(a, b) {
        return Ok(1.0);
    }
    let reach = 0.5 * (a.length.hypot(a.width) + b.length.hypot(b.width));
    if a.center().dist(b.center()) > reach {
        return Ok(0.0);
    }
    let inter = polygon_area(&clip_polygons(&box_corners(a), &box_corners(b)));
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deg(d: f64) -> Angle {
        Angle::from_degrees(d)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn square(cx: f64, cy: f64) -> ConvexPolygon {
        box_corners(&OrientedBox::new(cx, cy, 1.0, 1.0, Angle::ZERO).unwrap())
    }

    #[test]
    fn wrap_full_examples() {
        assert!(close(wrap_full(deg(350.0)).unwrap().degrees(), -10.0, 1e-9));
        assert!(close(wrap_full(deg(180.0)).unwrap().degrees(), 180.0, 1e-9));
        assert!(close(wrap_full(deg(-270.0)).unwrap().degrees(), 90.0, 1e-9));
        assert!(close(wrap_full(deg(-180.0)).unwrap().degrees(), 180.0, 1e-9));
        assert!(wrap_full(Angle::from_radians(f64::NAN)).is_err());
        assert!(wrap_full(Angle::from_radians(f64::INFINITY)).is_err());
    }

    #[test]
    fn wrap_half_examples() {
        assert!(close(wrap_half(deg(190.0)).unwrap().degrees(), 10.0, 1e-9));
        assert!(close(wrap_half(deg(-90.0)).unwrap().degrees(), 90.0, 1e-9));
        assert!(close(wrap_half(deg(45.0)).unwrap().degrees(), 45.0, 1e-9));
        assert!(wrap_half(Angle::from_radians(f64::NEG_INFINITY)).is_err());
    }

    #[test]
    fn orientation_errors() {
        assert!(close(foe(deg(10.0), deg(350.0)).unwrap(), 20.0, 1e-9));
        assert!(close(foe(deg(0.0), deg(180.0)).unwrap(), 180.0, 1e-9));
        assert_eq!(foe(deg(0.0), deg(0.0)).unwrap(), 0.0);
        assert!(close(hoe(deg(10.0), deg(190.0)).unwrap(), 0.0, 1e-9));
        assert!(close(hoe(deg(0.0), deg(90.0)).unwrap(), 90.0, 1e-9));
        assert!(close(hoe(deg(30.0), deg(20.0)).unwrap(), 10.0, 1e-9));
        assert!(foe(Angle::from_radians(f64::NAN), deg(0.0)).is_err());
    }

    #[test]
    fn corners_unit_square() {
        let c = box_corners(&OrientedBox::new(0.0, 0.0, 1.0, 1.0, Angle::ZERO).unwrap());
        let expect = [(0.5, -0.5), (0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5)];
        for (v, e) in c.vertices.iter().zip(expect) {
            assert!(close(v.x, e.0, 1e-12) && close(v.y, e.1, 1e-12));
        }
        assert!(close(polygon_area(&c), 1.0, 1e-12));
    }

    #[test]
    fn corners_rotated_quarter_turn_same_set() {
        let a = box_corners(&OrientedBox::new(0.0, 0.0, 1.0, 1.0, Angle::ZERO).unwrap());
        let b = box_corners(&OrientedBox::new(0.0, 0.0, 1.0, 1.0, deg(90.0)).unwrap());
        for v in &b.vertices {
            assert!(a.vertices.iter().any(|u| u.dist(*v) < 1e-12));
        }
        // Still counter-clockwise.
        assert!(polygon_area(&b) > 0.0);
    }

    #[test]
    fn corners_offset_box() {
        let c = box_corners(&OrientedBox::new(1.0, 0.0, 4.0, 2.0, Angle::ZERO).unwrap());
        let xs: Vec<f64> = c.vertices.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = c.vertices.iter().map(|p| p.y).collect();
        assert_eq!(xs, vec![3.0, 3.0, -1.0, -1.0]);
        assert_eq!(ys, vec![-1.0, 1.0, 1.0, -1.0]);
    }

    #[test]
    fn clipping_examples() {
        let a = square(0.0, 0.0);
        let same = clip_polygons(&a, &a);
        assert!(close(polygon_area(&same), 1.0, 1e-12));

        assert!(clip_polygons(&a, &square(3.0, 0.0)).is_empty());

        let half = clip_polygons(&a, &square(0.5, 0.0));
        assert!(close(polygon_area(&half), 0.5, 1e-12));
        for v in &half.vertices {
            assert!(v.x >= -1e-12 && v.x <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn touching_squares_have_zero_area() {
        let p = clip_polygons(&square(0.0, 0.0), &square(1.0, 0.0));
        assert_eq!(polygon_area(&p), 0.0);
    }

    #[test]
    fn area_examples() {
        assert_eq!(polygon_area(&ConvexPolygon::default()), 0.0);
        let tri = ConvexPolygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ]);
        assert!(close(polygon_area(&tri), 0.5, 1e-15));
    }

    #[test]
    fn iou_examples() {
        let a = OrientedBox::new(0.3, -1.2, 4.5, 1.9, deg(33.0)).unwrap();
        assert_eq!(rotated_iou(&a, &a).unwrap(), 1.0);
        let flipped = a.with_yaw(a.yaw.flipped());
        assert_eq!(rotated_iou(&a, &flipped).unwrap(), 1.0);

        let p = OrientedBox::new(0.0, 0.0, 4.0, 2.0, Angle::ZERO).unwrap();
        let q = OrientedBox::new(1.0, 0.0, 4.0, 2.0, Angle::ZERO).unwrap();
        assert!(close(rotated_iou(&p, &q).unwrap(), 0.6, 1e-12));
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(OrientedBox::new(0.0, 0.0, 0.0, 1.0, Angle::ZERO).is_err());
        let bad = OrientedBox {
            cx: 0.0,
            cy: 0.0,
            length: 1.0,
            width: -1.0,
            yaw: Angle::ZERO,
        };
        let ok = OrientedBox::new(0.0, 0.0, 1.0, 1.0, Angle::ZERO).unwrap();
        assert!(rotated_iou(&bad, &ok).is_err());
    }
}
