//! CoM trajectory for the decoupled pipeline: one quintic per support phase,
//! minimum weighted acceleration, COP kept inside the shrunk support regions.

use crate::foothold::FootholdPlan;
use crate::geom::{Leg, Line, Vec2, Vec3};
use crate::preview::{shrunk_support_lines, PreviewError};
use crate::qp::{self, QpError, QpOptions, QpProblem, QpSolution, QpStatus};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;
use std::io::Write;
use thiserror::Error;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum ComSplineError {
    #[error("empty foothold plan")]
    EmptyPlan,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("support margin {0} m empties a support region")]
    MarginTooLarge(f64),
    #[error("degenerate support region")]
    DegenerateSupport,
    #[error("COP constraints are infeasible; use a longer swing time or a smaller margin")]
    Infeasible,
    #[error("QP solver stopped at the iteration limit")]
    SolverStalled,
    #[error("sampled COP violates a support line by {0:.3e} m")]
    Violation(f64),
    #[error(transparent)]
    Qp(#[from] QpError),
}

pub type Result<T> = std::result::Result<T, ComSplineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplinePhaseKind {
    /// All four feet down before the first swing, shifting the COP off the start.
    LeadIn,
    Swing(Leg),
    FourLeg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplinePhase {
    pub kind: SplinePhaseKind,
    pub duration: f64,
    /// Stance feet during the phase.
    pub support: Vec<Vec2>,
    /// Support edges moved inward by the margin.
    pub lines: Vec<Line>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePlan {
    pub phases: Vec<SplinePhase>,
    pub margin: f64,
    pub dt: f64,
}

impl PhasePlan {
    pub fn total_duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// Phases with positive duration; zero-length phases carry no polynomial.
    pub fn active(&self) -> impl Iterator<Item = (usize, &SplinePhase)> {
        self.phases.iter().enumerate().filter(|(_, p)| p.duration > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTiming {
    pub t_swing: f64,
    /// Duration of the initial all-feet phase.
    pub lead_in: f64,
    /// `t_4ls / t_swing`; defaults to the margin value.
    pub four_leg_ratio: Option<f64>,
    pub dt: f64,
}

impl Default for PhaseTiming {
    fn default() -> Self {
        Self {
            t_swing: 0.6,
            lead_in: 0.6,
            four_leg_ratio: None,
            dt: 0.02,
        }
    }
}

fn shrink(feet: &[Vec2], r: f64) -> Result<Vec<Line>> {
    shrunk_support_lines(feet, r).map_err(|e| match e {
        PreviewError::EmptySupport(_) => ComSplineError::MarginTooLarge(r),
        _ => ComSplineError::DegenerateSupport,
    })
}

/// Swing phases for every step, with a four-leg phase inserted before each
/// swing whose leg is diagonal to the previous one; `t_4ls = ratio·t_swing`.
pub fn build_phase_plan(plan: &FootholdPlan, r: f64, timing: &PhaseTiming) -> Result<PhasePlan> {
    if plan.is_empty() {
        return Err(ComSplineError::EmptyPlan);
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(ComSplineError::InvalidParams(format!("margin {r}")));
    }
    let ratio = timing.four_leg_ratio.unwrap_or(r);
    if !(timing.t_swing > 0.0 && timing.dt > 0.0 && timing.lead_in >= 0.0 && ratio >= 0.0) {
        return Err(ComSplineError::InvalidParams("timing".into()));
    }
    let t4 = ratio * timing.t_swing;
    let xy = |f: &[Vec3; 4], skip: Option<Leg>| -> Vec<Vec2> {
        Leg::ALL
            .iter()
            .filter(|l| Some(**l) != skip)
            .map(|l| f[l.index()].xy())
            .collect()
    };
    let mut phases = Vec::new();
    let feet0 = plan.initial;
    phases.push(SplinePhase {
        kind: SplinePhaseKind::LeadIn,
        duration: timing.lead_in,
        support: xy(&feet0, None),
        lines: shrink(&xy(&feet0, None), r)?,
    });
    for (k, step) in plan.steps.iter().enumerate() {
        let feet = plan.stance_after(k);
        if k > 0 && plan.steps[k - 1].leg.is_diagonal_to(step.leg) {
            let s = xy(&feet, None);
            phases.push(SplinePhase {
                kind: SplinePhaseKind::FourLeg,
                duration: t4,
                lines: shrink(&s, r)?,
                support: s,
            });
        }
        let s = xy(&feet, Some(step.leg));
        phases.push(SplinePhase {
            kind: SplinePhaseKind::Swing(step.leg),
            duration: timing.t_swing,
            lines: shrink(&s, r)?,
            support: s,
        });
    }
    Ok(PhasePlan {
        phases,
        margin: r,
        dt: timing.dt,
    })
}

/// Horizontal CoM position, velocity and acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComState {
    pub pos: Vec2,
    pub vel: Vec2,
    pub acc: Vec2,
}

impl ComState {
    pub fn at_rest(pos: Vec2) -> Self {
        Self {
            pos,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineParams {
    pub height: f64,
    pub w_x: f64,
    pub w_y: f64,
    /// Terminal velocity equality, if any.
    pub terminal_velocity: Option<Vec2>,
    pub slack_tol: f64,
}

impl Default for SplineParams {
    fn default() -> Self {
        Self {
            height: 0.58,
            w_x: 0.5,
            w_y: 0.75,
            terminal_velocity: None,
            slack_tol: 1e-6,
        }
    }
}

/// Basis `τ⁵ … τ⁰` and its derivatives (order 0, 1, 2).
pub fn basis(tau: f64, order: usize) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (k, o) in out.iter_mut().enumerate() {
        let p = 5 - k as i32;
        *o = match order {
            0 => tau.powi(p),
            1 if p >= 1 => p as f64 * tau.powi(p - 1),
            2 if p >= 2 => (p * (p - 1)) as f64 * tau.powi(p - 2),
            _ => 0.0,
        };
    }
    out
}

/// `∫₀ᵀ b̈ b̈ᵀ dτ` for the quintic basis.
pub fn acceleration_gram(t: f64) -> [[f64; 6]; 6] {
    let mut g = [[0.0; 6]; 6];
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (p, q) = (5 - i as i32, 5 - j as i32);
            if p >= 2 && q >= 2 {
                let e = p + q - 3;
                *v = (p * (p - 1) * q * (q - 1)) as f64 * t.powi(e) / e as f64;
            }
        }
    }
    g
}

fn cop_row(tau: f64, h: f64) -> [f64; 6] {
    let b0 = basis(tau, 0);
    let b2 = basis(tau, 2);
    let k = h / GRAVITY;
    std::array::from_fn(|i| b0[i] - k * b2[i])
}

/// Sample times on the global grid `j·dt`, each assigned to the active phase
/// owning it (`[start, end)`, the last phase closed). Returns
/// `(active index, local time)`.
pub fn sample_schedule(pp: &PhasePlan) -> Vec<(usize, f64)> {
    let durations: Vec<f64> = pp.active().map(|(_, p)| p.duration).collect();
    let total: f64 = durations.iter().sum();
    let mut starts = Vec::with_capacity(durations.len());
    let mut acc = 0.0;
    for d in &durations {
        starts.push(acc);
        acc += d;
    }
    let mut out = Vec::new();
    if durations.is_empty() {
        return out;
    }
    let mut j = 0u64;
    loop {
        let t = j as f64 * pp.dt;
        if t > total + 1e-12 {
            break;
        }
        let k = starts.partition_point(|s| *s <= t).saturating_sub(1);
        out.push((k, (t - starts[k]).clamp(0.0, durations[k])));
        j += 1;
    }
    out
}

/// Number of decision variables per phase.
pub const VARS_PER_PHASE: usize = 12;

pub fn assemble_qp(pp: &PhasePlan, s0: &ComState, params: &SplineParams) -> Result<QpProblem> {
    if !(params.height > 0.0 && params.w_x >= 0.0 && params.w_y >= 0.0) {
        return Err(ComSplineError::InvalidParams("height and weights".into()));
    }
    if !(pp.dt > 0.0) {
        return Err(ComSplineError::InvalidParams("dt".into()));
    }
    let active: Vec<&SplinePhase> = pp.active().map(|(_, p)| p).collect();
    let m = active.len();
    let n = VARS_PER_PHASE * m;
    let mut h = DMatrix::zeros(n, n);
    for (k, ph) in active.iter().enumerate() {
        let g = acceleration_gram(ph.duration);
        for (axis, w) in [(0, params.w_x), (1, params.w_y)] {
            let o = VARS_PER_PHASE * k + 6 * axis;
            for i in 0..6 {
                for j in 0..6 {
                    h[(o + i, o + j)] = 2.0 * w * g[i][j];
                }
            }
        }
    }

    let mut a_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    if m > 0 {
        let init = [s0.pos, s0.vel, s0.acc];
        for (order, v) in init.iter().enumerate() {
            let b = basis(0.0, order);
            for axis in 0..2 {
                let row = (0..6).map(|i| (6 * axis + i, b[i])).collect();
                a_rows.push((row, v[axis]));
            }
        }
    }
    for k in 0..m.saturating_sub(1) {
        let t = active[k].duration;
        for order in 0..3 {
            let be = basis(t, order);
            let bs = basis(0.0, order);
            for axis in 0..2 {
                let o0 = VARS_PER_PHASE * k + 6 * axis;
                let o1 = VARS_PER_PHASE * (k + 1) + 6 * axis;
                let mut row: Vec<(usize, f64)> = (0..6).map(|i| (o0 + i, be[i])).collect();
                row.extend((0..6).map(|i| (o1 + i, -bs[i])));
                a_rows.push((row, 0.0));
            }
        }
    }
    if let (Some(v), true) = (params.terminal_velocity, m > 0) {
        let b = basis(active[m - 1].duration, 1);
        for axis in 0..2 {
            let o = VARS_PER_PHASE * (m - 1) + 6 * axis;
            a_rows.push(((0..6).map(|i| (o + i, b[i])).collect(), v[axis]));
        }
    }

    let mut c_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for (k, tau) in sample_schedule(pp) {
        let row = cop_row(tau, params.height);
        for l in &active[k].lines {
            let o = VARS_PER_PHASE * k;
            let mut r: Vec<(usize, f64)> = (0..6).map(|i| (o + i, l.p * row[i])).collect();
            r.extend((0..6).map(|i| (o + 6 + i, l.q * row[i])));
            c_rows.push((r, -l.r));
        }
    }

    let dense = |rows: &[(Vec<(usize, f64)>, f64)]| {
        let mut mat = DMatrix::zeros(rows.len(), n);
        let mut rhs = DVector::zeros(rows.len());
        for (i, (row, v)) in rows.iter().enumerate() {
            for (j, c) in row {
                mat[(i, *j)] += c;
            }
            rhs[i] = *v;
        }
        (mat, rhs)
    };
    let (a, b) = dense(&a_rows);
    let (c, d) = dense(&c_rows);
    Ok(QpProblem {
        h,
        g: DVector::zeros(n),
        a,
        b,
        c,
        d,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineSegment {
    /// Index into the phase plan.
    pub phase: usize,
    pub start: f64,
    pub duration: f64,
    pub x: [f64; 6],
    pub y: [f64; 6],
}

impl SplineSegment {
    /// Derivative `order` at local time `tau`.
    pub fn eval(&self, tau: f64, order: usize) -> Vec2 {
        let b = basis(tau, order);
        let dot = |c: &[f64; 6]| c.iter().zip(&b).map(|(a, b)| a * b).sum::<f64>();
        Vec2::new(dot(&self.x), dot(&self.y))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuinticSpline {
    pub segments: Vec<SplineSegment>,
    pub height: f64,
}

impl QuinticSpline {
    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.start + s.duration)
    }

    fn locate(&self, t: f64) -> (&SplineSegment, f64) {
        let k = self
            .segments
            .partition_point(|s| s.start <= t)
            .saturating_sub(1)
            .min(self.segments.len() - 1);
        let s = &self.segments[k];
        (s, (t - s.start).clamp(0.0, s.duration))
    }

    pub fn state(&self, t: f64) -> ComState {
        let (s, tau) = self.locate(t);
        ComState {
            pos: s.eval(tau, 0),
            vel: s.eval(tau, 1),
            acc: s.eval(tau, 2),
        }
    }

    /// COP of the cart-table model at constant height.
    pub fn cop(&self, t: f64) -> Vec2 {
        let st = self.state(t);
        st.pos - st.acc * (self.height / GRAVITY)
    }

    /// Largest mismatch of position, velocity and acceleration at the junctions.
    pub fn junction_gap(&self) -> f64 {
        self.segments
            .windows(2)
            .flat_map(|w| (0..3).map(move |o| (w[0].eval(w[0].duration, o) - w[1].eval(0.0, o)).amax()))
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, dt: f64, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,y,vx,vy,ax,ay,px,py,phase_id")?;
        let n = (self.duration() / dt).floor() as usize;
        for j in 0..=n {
            let t = j as f64 * dt;
            let (seg, _) = self.locate(t);
            let s = self.state(t);
            let p = self.cop(t);
            writeln!(
                w,
                "{t:.4},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                s.pos.x, s.pos.y, s.vel.x, s.vel.y, s.acc.x, s.acc.y, p.x, p.y, seg.phase
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ComSolution {
    pub spline: QuinticSpline,
    pub objective: f64,
    pub qp: QpSolution,
    /// Smallest COP line slack over all samples.
    pub min_slack: f64,
}

/// Smallest support-line slack of the spline's COP over the sample grid.
pub fn min_cop_slack(pp: &PhasePlan, spline: &QuinticSpline) -> f64 {
    let active: Vec<&SplinePhase> = pp.active().map(|(_, p)| p).collect();
    let mut worst = f64::INFINITY;
    for (k, tau) in sample_schedule(pp) {
        let seg = &spline.segments[k];
        let p = seg.eval(tau, 0) - seg.eval(tau, 2) * (spline.height / GRAVITY);
        for l in &active[k].lines {
            worst = worst.min(l.slack(p));
        }
    }
    worst
}

pub fn generate_com_trajectory(
    pp: &PhasePlan,
    s0: &ComState,
    params: &SplineParams,
    qp_opts: &QpOptions,
) -> Result<ComSolution> {
    let prob = assemble_qp(pp, s0, params)?;
    // Solve in time-normalized coefficients (c_p·T^p) so that very short
    // phases do not make the Hessian numerically singular.
    let scale = DVector::from_iterator(
        prob.dim(),
        pp.active()
            .flat_map(|(_, ph)| (0..VARS_PER_PHASE).map(move |i| ph.duration.powi(-(5 - (i % 6) as i32)))),
    );
    let d = DMatrix::from_diagonal(&scale);
    let scaled = QpProblem {
        h: &d * &prob.h * &d,
        g: &d * &prob.g,
        a: &prob.a * &d,
        b: prob.b.clone(),
        c: &prob.c * &d,
        d: prob.d.clone(),
    };
    let mut sol = qp::solve(&scaled, qp_opts)?;
    sol.x = sol.x.component_mul(&scale);
    sol.kkt = qp::residuals(&prob, &sol.x, &sol.lambda_eq, &sol.mu_ineq);
    sol.objective = prob.objective(&sol.x);
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(ComSplineError::Infeasible),
        QpStatus::MaxIter => return Err(ComSplineError::SolverStalled),
    }
    let mut segments = Vec::new();
    let mut start = 0.0;
    for (k, (idx, ph)) in pp.active().enumerate() {
        let o = VARS_PER_PHASE * k;
        segments.push(SplineSegment {
            phase: idx,
            start,
            duration: ph.duration,
            x: std::array::from_fn(|i| sol.x[o + i]),
            y: std::array::from_fn(|i| sol.x[o + 6 + i]),
        });
        start += ph.duration;
    }
    let spline = QuinticSpline {
        segments,
        height: params.height,
    };
    let min_slack = if spline.segments.is_empty() {
        f64::INFINITY
    } else {
        min_cop_slack(pp, &spline)
    };
    if min_slack < -params.slack_tol {
        return Err(ComSplineError::Violation(-min_slack));
    }
    Ok(ComSolution {
        objective: sol.objective,
        spline,
        qp: sol,
        min_slack,
    })
}

/// Point of a swing arc at phase `s ∈ [0, 1]`. The foot rises to
/// `start_z + lift + max(0, goal_z − start_z)` at mid-swing along two sine
/// half-arcs; when stepping up it also bows out by `outward` (world frame).
pub fn swing_point(start: Vec3, goal: Vec3, lift: f64, outward: Vec2, s: f64) -> Vec3 {
    if s <= 0.0 {
        return start;
    }
    if s >= 1.0 {
        return goal;
    }
    let apex = start.z + lift.max(0.0) + (goal.z - start.z).max(0.0);
    let bump = (PI * s).sin();
    let z = if s <= 0.5 {
        start.z + (apex - start.z) * bump
    } else {
        goal.z + (apex - goal.z) * bump
    };
    let mut xy = start.xy() + (goal.xy() - start.xy()) * s;
    if goal.z > start.z {
        xy += outward * bump;
    }
    Vec3::new(xy.x, xy.y, z)
}

/// `n + 1` evenly spaced points of the swing arc, endpoints exact.
pub fn swing_profile(start: Vec3, goal: Vec3, lift: f64, outward: Vec2, n: usize) -> Vec<Vec3> {
    let n = n.max(1);
    (0..=n)
        .map(|i| swing_point(start, goal, lift, outward, i as f64 / n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_cubic_entry() {
        let t = 0.7;
        let g = acceleration_gram(t);
        assert!((g[2][2] - 12.0 * t.powi(3)).abs() < 1e-14);
        assert_eq!(g[4][4], 0.0);
    }

    #[test]
    fn swing_apex_and_endpoints() {
        let a = Vec3::new(0.0, 0.0, 0.1);
        let b = Vec3::new(0.3, 0.0, 0.1);
        let p = swing_profile(a, b, 0.08, Vec2::zeros(), 10);
        assert_eq!(p[0], a);
        assert_eq!(p[10], b);
        assert!((p[5].z - 0.18).abs() < 1e-12);
        let up = Vec3::new(0.3, 0.0, 0.24);
        let q = swing_profile(a, up, 0.08, Vec2::new(0.0, 0.03), 10);
        assert!(q[5].z >= up.z + 0.08 - 1e-12);
        assert!((q[5].y - 0.03).abs() < 1e-12);
        let same = swing_profile(a, a, 0.08, Vec2::zeros(), 4);
        assert_eq!(same[0], same[4]);
    }
}
