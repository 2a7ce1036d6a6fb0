//! Box algebra and planar segment geometry.
//!
//! Boxes are `(left, top, width, height)` in continuous pixel coordinates.
//! Nothing here validates its inputs; boxes are checked once, when they
//! enter the system (see [`BBox::validate`]).

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

/// Axis-aligned box: left edge, top edge, width, height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_center(center: Point2, w: f64, h: f64) -> Self {
        BBox::new(center.x - w / 2.0, center.y - h / 2.0, w, h)
    }

    /// Checks the box invariants: finite components, strictly positive extent.
    pub fn validate(&self) -> Result<(), String> {
        if ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Err(format!("non-finite box component in {self:?}"));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(format!("box must have positive width and height, got {self:?}"));
        }
        Ok(())
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    pub fn to_sort_obs(&self) -> SortObservation {
        to_sort_obs(self)
    }

    pub fn to_deepsort_obs(&self) -> DeepSortObservation {
        to_deepsort_obs(self)
    }
}

/// Intersection over union of two valid boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Smallest axis-aligned box containing both arguments.
pub fn union_box(a: &BBox, b: &BBox) -> BBox {
    let left = a.x.min(b.x);
    let top = a.y.min(b.y);
    let right = a.right().max(b.right());
    let bottom = a.bottom().max(b.bottom());
    BBox::new(left, top, right - left, bottom - top)
}

/// Center/area/aspect measurement used by the seven-state filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SortObservation {
    pub u: f64,
    pub v: f64,
    /// Box area.
    pub s: f64,
    /// Aspect ratio `w / h`.
    pub r: f64,
}

/// Center/aspect/height measurement used by the eight-state filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeepSortObservation {
    pub u: f64,
    pub v: f64,
    /// Aspect ratio `w / h`.
    pub gamma: f64,
    pub hh: f64,
}

pub fn to_sort_obs(b: &BBox) -> SortObservation {
    SortObservation {
        u: b.x + b.w / 2.0,
        v: b.y + b.h / 2.0,
        s: b.w * b.h,
        r: b.w / b.h,
    }
}

pub fn from_sort_obs(o: &SortObservation) -> BBox {
    let w = (o.s * o.r).sqrt();
    let h = o.s / w;
    BBox::new(o.u - w / 2.0, o.v - h / 2.0, w, h)
}

pub fn to_deepsort_obs(b: &BBox) -> DeepSortObservation {
    DeepSortObservation {
        u: b.x + b.w / 2.0,
        v: b.y + b.h / 2.0,
        gamma: b.w / b.h,
        hh: b.h,
    }
}

pub fn from_deepsort_obs(o: &DeepSortObservation) -> BBox {
    let w = o.gamma * o.hh;
    BBox::new(o.u - w / 2.0, o.v - o.hh / 2.0, w, o.hh)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Point2 { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    pub fn midpoint(self, o: Point2) -> Point2 {
        Point2::new((self.x + o.x) / 2.0, (self.y + o.y) / 2.0)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

fn orientation(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

/// `c` lies within the bounding rectangle of `a`-`b` (collinearity checked by the caller).
fn within_extent(a: Point2, b: Point2, c: Point2) -> bool {
    c.x >= a.x.min(b.x) && c.x <= a.x.max(b.x) && c.y >= a.y.min(b.y) && c.y <= a.y.max(b.y)
}

/// Intersection point of the closed segments `p1-p2` and `q1-q2`.
///
/// A collinear overlap reports the midpoint of the shared sub-segment.
pub fn segment_intersection(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> Option<Point2> {
    let o1 = orientation(p1, p2, q1);
    let o2 = orientation(p1, p2, q2);
    let o3 = orientation(q1, q2, p1);
    let o4 = orientation(q1, q2, p2);

    if o1 == 0.0 && o2 == 0.0 && o3 == 0.0 && o4 == 0.0 {
        return collinear_overlap(p1, p2, q1, q2);
    }

    if o1 != 0.0 && o2 != 0.0 && o3 != 0.0 && o4 != 0.0 {
        if (o1 > 0.0) != (o2 > 0.0) && (o3 > 0.0) != (o4 > 0.0) {
            let r = p2 - p1;
            let s = q2 - q1;
            let t = ((q1 - p1).cross(s) / r.cross(s)).clamp(0.0, 1.0);
            return Some(p1 + r * t);
        }
        return None;
    }

    // An endpoint sits exactly on the other segment's supporting line.
    if o1 == 0.0 && within_extent(p1, p2, q1) {
        return Some(q1);
    }
    if o2 == 0.0 && within_extent(p1, p2, q2) {
        return Some(q2);
    }
    if o3 == 0.0 && within_extent(q1, q2, p1) {
        return Some(p1);
    }
    if o4 == 0.0 && within_extent(q1, q2, p2) {
        return Some(p2);
    }
    None
}

fn collinear_overlap(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> Option<Point2> {
    let xs = [p1.x, p2.x, q1.x, q2.x];
    let ys = [p1.y, p2.y, q1.y, q2.y];
    let span = |v: &[f64]| {
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - v.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let use_x = span(&xs) >= span(&ys);
    let coord = |p: Point2| if use_x { p.x } else { p.y };

    let (plo, phi) = (coord(p1).min(coord(p2)), coord(p1).max(coord(p2)));
    let (qlo, qhi) = (coord(q1).min(coord(q2)), coord(q1).max(coord(q2)));
    let lo = plo.max(qlo);
    let hi = phi.min(qhi);
    if lo > hi {
        return None;
    }
    let mid = (lo + hi) / 2.0;

    // Interpolate along whichever segment has more extent on the chosen axis.
    let (a, b) = if (phi - plo) >= (qhi - qlo) {
        (p1, p2)
    } else {
        (q1, q2)
    };
    let extent = coord(b) - coord(a);
    if extent == 0.0 {
        return Some(a);
    }
    let t = (mid - coord(a)) / extent;
    Some(a + (b - a) * t)
}

/// Closest point to `p` on the closed segment `a-b`.
pub fn closest_point_on_segment(p: Point2, a: Point2, b: Point2) -> Point2 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return a;
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

/// Closest pair of points between two closed segments, and their distance.
///
/// Returns `(on_p, on_q, distance)`; for intersecting segments both points
/// are the intersection point and the distance is exactly zero.
pub fn closest_points(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> (Point2, Point2, f64) {
    if let Some(x) = segment_intersection(p1, p2, q1, q2) {
        return (x, x, 0.0);
    }
    let candidates = [
        (p1, closest_point_on_segment(p1, q1, q2)),
        (p2, closest_point_on_segment(p2, q1, q2)),
        (closest_point_on_segment(q1, p1, p2), q1),
        (closest_point_on_segment(q2, p1, p2), q2),
    ];
    let mut best = (candidates[0].0, candidates[0].1, candidates[0].0.distance(candidates[0].1));
    for (a, b) in candidates.into_iter().skip(1) {
        let d = a.distance(b);
        if d < best.2 {
            best = (a, b, d);
        }
    }
    best
}

/// Minimum Euclidean distance between two closed segments.
pub fn min_segment_distance(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> f64 {
    closest_points(p1, p2, q1, q2).2
}
