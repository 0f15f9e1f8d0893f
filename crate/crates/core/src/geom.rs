//! Planar geometry shared by the planners: legs, support polygons and
//! oriented half-plane lines.

use nalgebra::{Vector2, Vector3};
use std::fmt;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Quadruped legs. The discriminant is the slot index used in per-leg arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Leg {
    LF = 0,
    RF = 1,
    LH = 2,
    RH = 3,
}

impl Leg {
    pub const ALL: [Leg; 4] = [Leg::LF, Leg::RF, Leg::LH, Leg::RH];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Leg> {
        Leg::ALL.get(i).copied()
    }

    pub fn is_front(self) -> bool {
        matches!(self, Leg::LF | Leg::RF)
    }

    pub fn is_left(self) -> bool {
        matches!(self, Leg::LF | Leg::LH)
    }

    pub fn diagonal(self) -> Leg {
        match self {
            Leg::LF => Leg::RH,
            Leg::RH => Leg::LF,
            Leg::RF => Leg::LH,
            Leg::LH => Leg::RF,
        }
    }

    pub fn is_diagonal_to(self, other: Leg) -> bool {
        self.diagonal() == other
    }

    /// Unit sign pattern of the leg's hip in the body frame: (+x front, +y left).
    pub fn sign(self) -> Vec2 {
        Vec2::new(
            if self.is_front() { 1.0 } else { -1.0 },
            if self.is_left() { 1.0 } else { -1.0 },
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Leg::LF => "LF",
            Leg::RF => "RF",
            Leg::LH => "LH",
            Leg::RH => "RH",
        }
    }

    pub fn parse(s: &str) -> Option<Leg> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LF" => Some(Leg::LF),
            "RF" => Some(Leg::RF),
            "LH" => Some(Leg::LH),
            "RH" => Some(Leg::RH),
            _ => None,
        }
    }
}

impl fmt::Display for Leg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Nominal (default posture) stance geometry, hip-to-hip distances in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StanceGeometry {
    pub length: f64,
    pub width: f64,
}

impl Default for StanceGeometry {
    fn default() -> Self {
        Self {
            length: 0.75,
            width: 0.5,
        }
    }
}

impl StanceGeometry {
    /// Nominal foothold of `leg` relative to the body centre, body frame.
    pub fn offset(&self, leg: Leg) -> Vec2 {
        let s = leg.sign();
        Vec2::new(s.x * self.length / 2.0, s.y * self.width / 2.0)
    }

    /// Nominal footholds in world frame for a body at `center` with yaw `yaw`.
    pub fn footholds(&self, center: Vec2, yaw: f64) -> [Vec2; 4] {
        Leg::ALL.map(|l| center + rotate(self.offset(l), yaw))
    }
}

pub fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull in counter-clockwise order (Andrew's monotone chain).
/// Collinear points on the boundary are dropped.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| a == b);
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Vec2> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vec2> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Signed area of a polygon (positive for counter-clockwise order).
pub fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    a / 2.0
}

/// Oriented line `p·x + q·y + r`, positive on the interior side.
/// `(p, q)` is a unit vector, so the value is a signed distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

impl Line {
    /// Line through `a` and `b` with the interior on the left of `a -> b`.
    pub fn through(a: Vec2, b: Vec2) -> Option<Line> {
        let d = b - a;
        let len = d.norm();
        if len <= f64::EPSILON {
            return None;
        }
        let n = Vec2::new(-d.y, d.x) / len;
        Some(Line {
            p: n.x,
            q: n.y,
            r: -(n.x * a.x + n.y * a.y),
        })
    }

    pub fn slack(&self, x: Vec2) -> f64 {
        self.p * x.x + self.q * x.y + self.r
    }

    /// The same line moved `dist` metres towards the interior.
    pub fn shifted(&self, dist: f64) -> Line {
        Line {
            r: self.r - dist,
            ..*self
        }
    }

    pub fn normal(&self) -> Vec2 {
        Vec2::new(self.p, self.q)
    }
}

/// Clip a convex polygon against the half-plane `line.slack(x) >= 0`.
pub fn clip_polygon(poly: &[Vec2], line: &Line) -> Vec<Vec2> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..n {
        let cur = poly[i];
        let nxt = poly[(i + 1) % n];
        let sc = line.slack(cur);
        let sn = line.slack(nxt);
        if sc >= 0.0 {
            out.push(cur);
        }
        if (sc >= 0.0) != (sn >= 0.0) {
            let t = sc / (sc - sn);
            out.push(cur + (nxt - cur) * t);
        }
    }
    out
}

/// Inradius of the triangle `a, b, c` (zero for degenerate triangles).
pub fn triangle_inradius(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    let area = (cross(a, b, c) / 2.0).abs();
    let perimeter = (b - a).norm() + (c - b).norm() + (a - c).norm();
    if perimeter <= 0.0 {
        0.0
    } else {
        2.0 * area / perimeter
    }
}

/// Rectangle centred at `center`, with its length along heading `heading`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    /// Point expressed in the rectangle's frame.
    pub fn local(&self, p: Vec2) -> Vec2 {
        rotate(p - self.center, -self.heading)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let u = self.local(p);
        u.x.abs() <= self.length / 2.0 + 1e-9 && u.y.abs() <= self.width / 2.0 + 1e-9
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let (a, b) = (self.length / 2.0, self.width / 2.0);
        [(a, b), (-a, b), (-a, -b), (a, -b)]
            .map(|(x, y)| self.center + rotate(Vec2::new(x, y), self.heading))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_drops_interior_points() {
        let pts = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(0.5, 0.5),
        ];
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 4);
        assert!(polygon_area(&h) > 0.0);
        assert!((polygon_area(&h) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn line_slack_is_signed_distance() {
        let l = Line::through(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)).unwrap();
        assert!((l.slack(Vec2::new(0.3, 0.25)) - 0.25).abs() < 1e-15);
        assert!((l.slack(Vec2::new(0.3, -0.5)) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn inradius_of_right_triangle() {
        // legs 3, 4, hypotenuse 5 -> r = (3 + 4 - 5) / 2
        let r = triangle_inradius(Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0), Vec2::new(0.0, 4.0));
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_pairs() {
        assert!(Leg::LF.is_diagonal_to(Leg::RH));
        assert!(Leg::RF.is_diagonal_to(Leg::LH));
        assert!(!Leg::LF.is_diagonal_to(Leg::LH));
    }
}
