//! Trunk attitude planning with a flywheel model.
//!
//! Angles follow the terrain convention used throughout the crate: pitch is
//! positive when the terrain rises towards +x (body front), roll is positive
//! when it rises towards +y (body left).

use crate::geom::{rotate, Vec2, Vec3};
use nalgebra::Matrix3;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AttitudeError {
    #[error("inertia must be symmetric positive definite and mass positive")]
    InvalidInertia,
    #[error("need at least 3 non-collinear footholds")]
    DegenerateFootholds,
    #[error("acceleration bounds must be positive")]
    InvalidBounds,
    #[error("no phase with positive duration")]
    NoPhases,
    #[error("initial rate {0} rad/s cannot be brought to rest within the first phase")]
    InfeasibleRate(f64),
}

pub type Result<T> = std::result::Result<T, AttitudeError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertiaModel {
    pub inertia: Matrix3<f64>,
    pub mass: f64,
    pub gravity: f64,
}

impl InertiaModel {
    pub fn new(inertia: Matrix3<f64>, mass: f64, gravity: f64) -> Result<Self> {
        let sym = (inertia - inertia.transpose()).abs().max() <= 1e-12 * inertia.abs().max().max(1.0);
        if !sym || !(mass > 0.0 && gravity > 0.0) || inertia.cholesky().is_none() {
            return Err(AttitudeError::InvalidInertia);
        }
        Ok(Self {
            inertia,
            mass,
            gravity,
        })
    }

    /// Trunk inertia used by the planners when no configuration is given.
    pub fn default_trunk() -> Self {
        Self::new(Matrix3::from_diagonal(&Vec3::new(4.0, 8.0, 10.0)), 85.0, 9.81)
            .expect("diagonal default is valid")
    }
}

/// Horizontal CMP offset `(𝓘ω̇ × ê_z)/(mg)` produced by angular acceleration `acc`.
pub fn cmp_shift(im: &InertiaModel, acc: &Vec3) -> Vec2 {
    let tau = im.inertia * acc;
    let d = tau.cross(&Vec3::z());
    Vec2::new(d.x, d.y) / (im.mass * im.gravity)
}

/// Largest single-axis roll and pitch accelerations whose CMP shift stays within `r`.
pub fn max_angular_acceleration(im: &InertiaModel, r: f64) -> (f64, f64) {
    let i = &im.inertia;
    let mg = im.mass * im.gravity;
    let ax = r * mg / (i[(0, 0)].powi(2) + i[(1, 0)].powi(2)).sqrt();
    let ay = r * mg / (i[(1, 1)].powi(2) + i[(0, 1)].powi(2)).sqrt();
    (ax, ay)
}

/// Roll and pitch of the least-squares plane through `footholds`, expressed
/// at body heading `yaw`.
pub fn fit_support_plane(footholds: &[Vec3], yaw: f64) -> Result<(f64, f64)> {
    if footholds.len() < 3 {
        return Err(AttitudeError::DegenerateFootholds);
    }
    let n = footholds.len() as f64;
    let c = footholds.iter().sum::<Vec3>() / n;
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in footholds {
        let d = p - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
        sxz += d.x * d.z;
        syz += d.y * d.z;
    }
    let det = sxx * syy - sxy * sxy;
    if det <= 1e-12 * (sxx + syy).powi(2).max(f64::MIN_POSITIVE) {
        return Err(AttitudeError::DegenerateFootholds);
    }
    let a = (sxz * syy - syz * sxy) / det;
    let b = (syz * sxx - sxz * sxy) / det;
    let g = rotate(Vec2::new(a, b), -yaw);
    let normal = Vec3::new(-g.x, -g.y, 1.0).normalize();
    let pitch = (-normal.x).atan2(normal.z);
    let roll = (-normal.y).atan2((normal.x * normal.x + normal.z * normal.z).sqrt());
    Ok((roll, pitch))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AttitudeState {
    pub roll: f64,
    pub pitch: f64,
    pub roll_rate: f64,
    pub pitch_rate: f64,
}

/// Cubic `c0 + c1·t + c2·t² + c3·t³` on local time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cubic(pub [f64; 4]);

impl Cubic {
    fn constant(v: f64) -> Self {
        Cubic([v, 0.0, 0.0, 0.0])
    }

    /// Cubic from `(θ0, v0)` to `(θ0 + delta, 0)` over `duration`.
    fn to_rest(theta0: f64, v0: f64, delta: f64, duration: f64) -> Self {
        let t = duration;
        Cubic([
            theta0,
            v0,
            (3.0 * delta - 2.0 * v0 * t) / (t * t),
            (v0 * t - 2.0 * delta) / (t * t * t),
        ])
    }

    pub fn value(&self, t: f64) -> f64 {
        let c = &self.0;
        ((c[3] * t + c[2]) * t + c[1]) * t + c[0]
    }

    pub fn rate(&self, t: f64) -> f64 {
        let c = &self.0;
        (3.0 * c[3] * t + 2.0 * c[2]) * t + c[1]
    }

    pub fn accel(&self, t: f64) -> f64 {
        6.0 * self.0[3] * t + 2.0 * self.0[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeSegment {
    pub start: f64,
    pub duration: f64,
    pub roll: Cubic,
    pub pitch: Cubic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttitudeSpline {
    /// One segment per input phase, zero-duration phases included.
    pub segments: Vec<AttitudeSegment>,
    /// False when the phases ran out before the target was reached.
    pub complete: bool,
}

impl AttitudeSpline {
    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.start + s.duration)
    }

    fn segment_at(&self, t: f64) -> (&AttitudeSegment, f64) {
        let mut chosen = &self.segments[0];
        for s in &self.segments {
            if s.duration > 0.0 && t >= s.start {
                chosen = s;
            }
        }
        (chosen, (t - chosen.start).clamp(0.0, chosen.duration))
    }

    /// `(roll, pitch)` angles, rates and accelerations at time `t`.
    pub fn eval(&self, t: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let (s, tl) = self.segment_at(t);
        let beyond = t > self.duration();
        let (rr, pr, ra, pa) = if beyond {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            (s.roll.rate(tl), s.pitch.rate(tl), s.roll.accel(tl), s.pitch.accel(tl))
        };
        ([s.roll.value(tl), s.pitch.value(tl)], [rr, pr], [ra, pa])
    }
}

/// Admissible displacement interval of a rest-ending cubic with start rate `v0`
/// and acceleration bound `bound`.
fn delta_interval(v0: f64, bound: f64, t: f64) -> Option<(f64, f64)> {
    let bt2 = bound * t * t;
    let lo = ((4.0 * v0 * t - bt2) / 6.0).max((2.0 * v0 * t - bt2) / 6.0);
    let hi = ((4.0 * v0 * t + bt2) / 6.0).min((2.0 * v0 * t + bt2) / 6.0);
    (lo <= hi).then_some((lo, hi))
}

/// Greedy per-axis cubic attitude plan across phases. Each phase ends at rest;
/// a phase absorbs as much of the remaining displacement as its acceleration
/// bound allows (`bound·T²/6` from rest).
pub fn plan_attitude(
    current: &AttitudeState,
    target: (f64, f64),
    bounds: (f64, f64),
    durations: &[f64],
) -> Result<AttitudeSpline> {
    if !(bounds.0 > 0.0 && bounds.1 > 0.0) {
        return Err(AttitudeError::InvalidBounds);
    }
    if !durations.iter().any(|&t| t > 0.0) {
        return Err(AttitudeError::NoPhases);
    }
    let mut theta = [current.roll, current.pitch];
    let mut rate = [current.roll_rate, current.pitch_rate];
    let goal = [target.0, target.1];
    let bound = [bounds.0, bounds.1];
    let mut segments = Vec::with_capacity(durations.len());
    let mut start = 0.0;
    for &t in durations {
        if !(t > 0.0) {
            segments.push(AttitudeSegment {
                start,
                duration: 0.0,
                roll: Cubic::constant(theta[0]),
                pitch: Cubic::constant(theta[1]),
            });
            continue;
        }
        let mut cubics = [Cubic::constant(0.0); 2];
        for axis in 0..2 {
            let remaining = goal[axis] - theta[axis];
            let (lo, hi) = delta_interval(rate[axis], bound[axis], t)
                .ok_or(AttitudeError::InfeasibleRate(rate[axis]))?;
            let mut delta = remaining.clamp(lo, hi);
            if (remaining - delta).abs() <= 1e-12 * remaining.abs().max(1.0) {
                delta = remaining;
            }
            cubics[axis] = if delta == 0.0 && rate[axis] == 0.0 {
                Cubic::constant(theta[axis])
            } else {
                Cubic::to_rest(theta[axis], rate[axis], delta, t)
            };
            theta[axis] = if delta == remaining { goal[axis] } else { theta[axis] + delta };
            rate[axis] = 0.0;
        }
        segments.push(AttitudeSegment {
            start,
            duration: t,
            roll: cubics[0],
            pitch: cubics[1],
        });
        start += t;
    }
    let complete = theta[0] == goal[0] && theta[1] == goal[1];
    Ok(AttitudeSpline { segments, complete })
}
