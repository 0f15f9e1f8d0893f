//! Analytical cart-table preview model.
//!
//! Within a phase the COP moves linearly, `p(t) = p0 + δp·t/T`, and the
//! horizontal CoM follows the closed-form solution of `ẍ = ω²(x − p)`.

use crate::geom::{clip_polygon, convex_hull, polygon_area, Leg, Line, StanceGeometry, Vec2};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PreviewError {
    #[error("phase duration must be positive")]
    ZeroDuration,
    #[error("time {t} outside phase [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error("support polygon is degenerate or non-convex")]
    DegenerateSupport,
    #[error("stability margin {0} empties the support polygon")]
    EmptySupport(f64),
    #[error("no stance feet")]
    NoFeet,
    #[error("invalid cart-table parameters")]
    InvalidParams,
}

pub type Result<T> = std::result::Result<T, PreviewError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartTable {
    pub height: f64,
    pub gravity: f64,
}

impl Default for CartTable {
    fn default() -> Self {
        Self {
            height: 0.58,
            gravity: 9.81,
        }
    }
}

impl CartTable {
    pub fn new(height: f64, gravity: f64) -> Result<Self> {
        if !(height > 0.0 && gravity > 0.0 && height.is_finite() && gravity.is_finite()) {
            return Err(PreviewError::InvalidParams);
        }
        Ok(Self { height, gravity })
    }

    pub fn omega(&self) -> f64 {
        (self.gravity / self.height).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    Stance,
    Swing(Leg),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreviewPhase {
    pub kind: PhaseKind,
    pub duration: f64,
    pub cop_shift: Vec2,
    /// Landing offset of the swing foot from its nominal foothold (swing only).
    pub foot_shift: Vec2,
}

impl PreviewPhase {
    pub fn stance(duration: f64, cop_shift: Vec2) -> Self {
        Self {
            kind: PhaseKind::Stance,
            duration,
            cop_shift,
            foot_shift: Vec2::zeros(),
        }
    }

    pub fn swing(leg: Leg, duration: f64, cop_shift: Vec2, foot_shift: Vec2) -> Self {
        Self {
            kind: PhaseKind::Swing(leg),
            duration,
            cop_shift,
            foot_shift,
        }
    }

    pub fn swing_leg(&self) -> Option<Leg> {
        match self.kind {
            PhaseKind::Swing(l) => Some(l),
            PhaseKind::Stance => None,
        }
    }
}

pub type ControlSequence = Vec<PreviewPhase>;

/// COP at time `t` of a phase starting at `p0`.
pub fn cop_at(phase: &PreviewPhase, p0: Vec2, t: f64) -> Result<Vec2> {
    if !(phase.duration > 0.0) {
        return Err(PreviewError::ZeroDuration);
    }
    if !(0.0..=phase.duration).contains(&t) {
        return Err(PreviewError::TimeOutOfRange {
            t,
            duration: phase.duration,
        });
    }
    if t == phase.duration {
        return Ok(p0 + phase.cop_shift);
    }
    Ok(p0 + phase.cop_shift * (t / phase.duration))
}

/// Closed-form CoM position and velocity at time `t` (any real `t`) for a
/// COP line `p0 + δp·t/T`.
pub fn com_closed_form(
    x0: Vec2,
    v0: Vec2,
    p0: Vec2,
    cop_shift: Vec2,
    duration: f64,
    omega: f64,
    t: f64,
) -> (Vec2, Vec2) {
    let rate = cop_shift / duration;
    let half = (x0 - p0) / 2.0;
    let k = (v0 - rate) / (2.0 * omega);
    let b1 = half + k;
    let b2 = half - k;
    let (ep, em) = ((omega * t).exp(), (-omega * t).exp());
    let x = b1 * ep + b2 * em + p0 + rate * t;
    let v = (b1 * ep - b2 * em) * omega + rate;
    (x, v)
}

/// CoM state `t` seconds into `phase` from `s0`.
pub fn com_trajectory(
    s0: &PreviewState,
    phase: &PreviewPhase,
    params: &CartTable,
    t: f64,
) -> Result<(Vec2, Vec2)> {
    if !(phase.duration > 0.0) {
        return Err(PreviewError::ZeroDuration);
    }
    if !(0.0..=phase.duration).contains(&t) {
        return Err(PreviewError::TimeOutOfRange {
            t,
            duration: phase.duration,
        });
    }
    if t == 0.0 {
        return Ok((s0.com, s0.com_vel));
    }
    Ok(com_closed_form(
        s0.com,
        s0.com_vel,
        s0.cop,
        phase.cop_shift,
        phase.duration,
        params.omega(),
        t,
    ))
}

/// Convex stance polygon with inward-shifted edge lines.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportRegion {
    /// Stance feet (leg, position).
    pub feet: Vec<(Leg, Vec2)>,
    /// Counter-clockwise hull of the stance feet.
    pub polygon: Vec<Vec2>,
    /// Edge lines moved inward by `margin`; may describe an empty region.
    pub lines: Vec<Line>,
    pub margin: f64,
}

impl SupportRegion {
    /// Region of the given stance feet. Every foot must be a strict vertex of
    /// the convex hull.
    pub fn new(feet: Vec<(Leg, Vec2)>, margin: f64) -> Result<Self> {
        let pts: Vec<Vec2> = feet.iter().map(|f| f.1).collect();
        let polygon = convex_hull(&pts);
        if polygon.len() < 3 || polygon.len() != pts.len() || polygon_area(&polygon) <= 1e-12 {
            return Err(PreviewError::DegenerateSupport);
        }
        let lines = edge_lines(&polygon)
            .iter()
            .map(|l| l.shifted(margin))
            .collect();
        Ok(Self {
            feet,
            polygon,
            lines,
            margin,
        })
    }

    /// Smallest slack over the shrunk lines (negative outside).
    pub fn min_slack(&self, x: Vec2) -> f64 {
        self.lines
            .iter()
            .map(|l| l.slack(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Σ max(0, −slack)² over the shrunk lines.
    pub fn violation(&self, x: Vec2) -> f64 {
        self.lines
            .iter()
            .map(|l| (-l.slack(x)).max(0.0).powi(2))
            .sum()
    }

    pub fn centroid(&self) -> Vec2 {
        self.polygon.iter().sum::<Vec2>() / self.polygon.len() as f64
    }

    /// The shrunk polygon itself (empty when the margin is too large).
    pub fn shrunk_polygon(&self) -> Vec<Vec2> {
        let mut poly = self.polygon.clone();
        for l in &self.lines {
            poly = clip_polygon(&poly, l);
            if poly.is_empty() {
                break;
            }
        }
        poly
    }
}

fn edge_lines(polygon: &[Vec2]) -> Vec<Line> {
    let n = polygon.len();
    (0..n)
        .filter_map(|i| Line::through(polygon[i], polygon[(i + 1) % n]))
        .collect()
}

/// Edge lines of the convex hull of `feet`, each moved inward by `r`.
pub fn shrunk_support_lines(feet: &[Vec2], r: f64) -> Result<Vec<Line>> {
    let polygon = convex_hull(feet);
    if polygon.len() < 3 || polygon_area(&polygon) <= 1e-12 {
        return Err(PreviewError::DegenerateSupport);
    }
    let lines: Vec<Line> = edge_lines(&polygon).iter().map(|l| l.shifted(r)).collect();
    let mut poly = polygon;
    for l in &lines {
        poly = clip_polygon(&poly, l);
    }
    if poly.len() < 3 || polygon_area(&poly) <= 1e-14 {
        return Err(PreviewError::EmptySupport(r));
    }
    Ok(lines)
}

/// Mean stance-foot height plus clearance.
pub fn trunk_height_reference(feet_z: &[f64], clearance: f64) -> Result<f64> {
    if feet_z.is_empty() {
        return Err(PreviewError::NoFeet);
    }
    Ok(feet_z.iter().sum::<f64>() / feet_z.len() as f64 + clearance)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreviewState {
    pub com: Vec2,
    pub com_vel: Vec2,
    pub cop: Vec2,
    /// Current position of every foot, indexed by `Leg::index`.
    pub feet: [Vec2; 4],
    /// Support of the phase starting at this state.
    pub support: SupportRegion,
    pub time: f64,
}

impl PreviewState {
    /// State at rest with all four feet down and the COP under the CoM.
    pub fn at_rest(com: Vec2, feet: [Vec2; 4], margin: f64) -> Result<Self> {
        Ok(Self {
            com,
            com_vel: Vec2::zeros(),
            cop: com,
            support: four_leg_support(&feet, margin)?,
            feet,
            time: 0.0,
        })
    }

    /// Copy translated by `d` in the plane.
    pub fn translated(&self, d: Vec2) -> Result<Self> {
        let feet = self.feet.map(|f| f + d);
        let support = SupportRegion::new(
            self.support.feet.iter().map(|&(l, p)| (l, p + d)).collect(),
            self.support.margin,
        )?;
        Ok(Self {
            com: self.com + d,
            cop: self.cop + d,
            feet,
            support,
            ..self.clone()
        })
    }
}

fn four_leg_support(feet: &[Vec2; 4], margin: f64) -> Result<SupportRegion> {
    SupportRegion::new(Leg::ALL.iter().map(|&l| (l, feet[l.index()])).collect(), margin)
}

fn swing_support(feet: &[Vec2; 4], swing: Leg, margin: f64) -> Result<SupportRegion> {
    SupportRegion::new(
        Leg::ALL
            .iter()
            .filter(|&&l| l != swing)
            .map(|&l| (l, feet[l.index()]))
            .collect(),
        margin,
    )
}

/// Landing position of a swing foot: nominal offset from the CoM at phase start plus `δf`.
pub fn landing_position(com: Vec2, leg: Leg, foot_shift: Vec2, stance: &StanceGeometry) -> Vec2 {
    com + stance.offset(leg) + foot_shift
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Initial state of every executed phase, then the final state.
    pub states: Vec<PreviewState>,
    /// The executed (positive-duration) phases, aligned with `states`.
    pub phases: Vec<PreviewPhase>,
    /// Index of each executed phase in the input sequence.
    pub source: Vec<usize>,
    /// Planned footholds: (leg, position, executed phase index).
    pub footholds: Vec<(Leg, Vec2, usize)>,
}

impl Rollout {
    pub fn final_state(&self) -> &PreviewState {
        self.states.last().expect("rollout always holds the initial state")
    }

    pub fn total_duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// Sample `(t, x, ẋ, p, executed phase)` every `dt` seconds, including each phase end.
    pub fn sample(&self, params: &CartTable, dt: f64) -> Vec<(f64, Vec2, Vec2, Vec2, usize)> {
        let mut out = Vec::new();
        let omega = params.omega();
        for (k, ph) in self.phases.iter().enumerate() {
            let s = &self.states[k];
            let n = (ph.duration / dt).ceil().max(1.0) as usize;
            let last = if k + 1 == self.phases.len() { n } else { n - 1 };
            for i in 0..=last {
                let t = (i as f64 * dt).min(ph.duration);
                let (x, v) =
                    com_closed_form(s.com, s.com_vel, s.cop, ph.cop_shift, ph.duration, omega, t);
                let p = s.cop + ph.cop_shift * (t / ph.duration);
                out.push((s.time + t, x, v, p, k));
            }
        }
        out
    }

    /// CSV of sampled `t,x,y,vx,vy,px,py,phase_id`.
    pub fn write_csv<W: Write>(&self, params: &CartTable, dt: f64, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,y,vx,vy,px,py,phase_id")?;
        for (t, x, v, p, k) in self.sample(params, dt) {
            writeln!(
                w,
                "{t:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                x.x, x.y, v.x, v.y, p.x, p.y, self.source[k]
            )?;
        }
        Ok(())
    }
}

/// Apply the phases of `u` in order from `s0`, skipping zero-duration phases.
/// Swing feet are moved at the start of their phase; the state's support is
/// the polygon of the phase that starts from it.
pub fn rollout(
    s0: &PreviewState,
    u: &[PreviewPhase],
    margin: f64,
    params: &CartTable,
    stance: &StanceGeometry,
) -> Result<Rollout> {
    let omega = params.omega();
    let mut feet = s0.feet;
    let (mut x, mut v, mut p, mut time) = (s0.com, s0.com_vel, s0.cop, s0.time);
    let mut out = Rollout {
        states: Vec::with_capacity(u.len() + 1),
        phases: Vec::with_capacity(u.len()),
        source: Vec::with_capacity(u.len()),
        footholds: Vec::new(),
    };
    for (i, ph) in u.iter().enumerate() {
        if !(ph.duration > 0.0) {
            continue;
        }
        let support = match ph.kind {
            PhaseKind::Stance => four_leg_support(&feet, margin)?,
            PhaseKind::Swing(leg) => {
                let support = swing_support(&feet, leg, margin)?;
                let landing = landing_position(x, leg, ph.foot_shift, stance);
                feet[leg.index()] = landing;
                out.footholds.push((leg, landing, out.phases.len()));
                support
            }
        };
        out.states.push(PreviewState {
            com: x,
            com_vel: v,
            cop: p,
            feet,
            support,
            time,
        });
        out.phases.push(*ph);
        out.source.push(i);
        let (nx, nv) = com_closed_form(x, v, p, ph.cop_shift, ph.duration, omega, ph.duration);
        x = nx;
        v = nv;
        p += ph.cop_shift;
        time += ph.duration;
    }
    out.states.push(PreviewState {
        com: x,
        com_vel: v,
        cop: p,
        support: four_leg_support(&feet, margin)?,
        feet,
        time,
    });
    Ok(out)
}
