//! Coupled motion and foothold optimization over preview rollouts.
//!
//! A control sequence of `N` gait cycles is encoded as a normalized decision
//! vector in `[0, 1]^d` and minimized with CMA-ES. Constraints enter the cost
//! as quadratic penalties.

use crate::attitude::{
    fit_support_plane, max_angular_acceleration, plan_attitude, AttitudeError, AttitudeSegment,
    AttitudeSpline, AttitudeState, InertiaModel,
};
use crate::cmaes::{optimize, CmaConfig, CmaError, Termination, TraceRow};
use crate::config::{ConfigError, KeyValues};
use crate::geom::{Leg, StanceGeometry, Vec2, Vec3};
use crate::preview::{
    rollout, CartTable, PhaseKind, PreviewError, PreviewPhase, PreviewState, Rollout,
};
use crate::terrain::{CostMap, HeightMap};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoupledError {
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(String),
    #[error("all phase durations are zero")]
    ZeroDuration,
    #[error("plan has no positive-duration phase")]
    EmptyPlan,
    #[error("no finite-cost control sequence found in {0} evaluations")]
    Infeasible(usize),
    #[error(transparent)]
    Preview(#[from] PreviewError),
    #[error(transparent)]
    Cma(#[from] CmaError),
    #[error(transparent)]
    Attitude(#[from] AttitudeError),
}

pub type Result<T> = std::result::Result<T, CoupledError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerWeights {
    pub velocity: f64,
    pub terrain: f64,
    pub energy: f64,
    pub stability: f64,
    pub coupling: f64,
    /// Terminal capture-point and terminal-velocity penalty; 0 disables it.
    pub capture: f64,
    /// Terminal stance-shape penalty; 0 disables it.
    pub posture: f64,
}

impl Default for PlannerWeights {
    fn default() -> Self {
        Self {
            velocity: 1000.0,
            terrain: 30.0,
            energy: 10.0,
            stability: 10_000.0,
            coupling: 500.0,
            capture: 300.0,
            posture: 100.0,
        }
    }
}

impl PlannerWeights {
    fn as_array(&self) -> [f64; 7] {
        [
            self.velocity,
            self.terrain,
            self.energy,
            self.stability,
            self.coupling,
            self.capture,
            self.posture,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserCommand {
    pub velocity: Vec2,
    pub heading: f64,
}

impl UserCommand {
    pub fn new(vx: f64, vy: f64) -> Self {
        Self {
            velocity: Vec2::new(vx, vy),
            heading: 0.0,
        }
    }
}

/// Box bounds of the per-phase decision variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionBounds {
    pub t_min: f64,
    pub t_max: f64,
    /// Half-width of the COP-shift box (both axes).
    pub cop_shift: f64,
    /// Half-extents of the landing-offset box around the nominal foothold.
    pub foot_shift: Vec2,
}

impl Default for DecisionBounds {
    fn default() -> Self {
        Self {
            t_min: 0.05,
            t_max: 1.4,
            cop_shift: 0.3,
            foot_shift: Vec2::new(0.17, 0.14),
        }
    }
}

impl DecisionBounds {
    /// True when no landing offset can move a foot across the body centre,
    /// which keeps every stance polygon convex with each foot in its quadrant.
    pub fn keeps_feet_in_quadrants(&self, stance: &StanceGeometry) -> bool {
        Leg::ALL.iter().all(|&l| {
            let o = stance.offset(l);
            self.foot_shift.x < o.x.abs() && self.foot_shift.y < o.y.abs()
        })
    }
}

/// One slot of the gait cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseSlot {
    Stance,
    Swing(Leg),
}

impl PhaseSlot {
    pub fn dims(self) -> usize {
        match self {
            PhaseSlot::Stance => 3,
            PhaseSlot::Swing(_) => 5,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stance" | "s" => Some(PhaseSlot::Stance),
            other => Leg::parse(other).map(PhaseSlot::Swing),
        }
    }
}

/// Stance first, then the two left legs, stance, then the two right legs.
pub fn default_cycle() -> Vec<PhaseSlot> {
    vec![
        PhaseSlot::Stance,
        PhaseSlot::Swing(Leg::LH),
        PhaseSlot::Swing(Leg::LF),
        PhaseSlot::Stance,
        PhaseSlot::Swing(Leg::RH),
        PhaseSlot::Swing(Leg::RF),
    ]
}

/// Maps normalized decision vectors to control sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionEncoding {
    pub slots: Vec<PhaseSlot>,
    pub bounds: DecisionBounds,
}

impl DecisionEncoding {
    pub fn new(cycle: &[PhaseSlot], cycles: usize, bounds: DecisionBounds) -> Self {
        let slots = (0..cycles).flat_map(|_| cycle.iter().copied()).collect();
        Self { slots, bounds }
    }

    pub fn dim(&self) -> usize {
        self.slots.iter().map(|s| s.dims()).sum()
    }

    fn ranges(&self, slot: PhaseSlot) -> Vec<(f64, f64)> {
        let b = &self.bounds;
        let mut r = vec![
            (b.t_min, b.t_max),
            (-b.cop_shift, b.cop_shift),
            (-b.cop_shift, b.cop_shift),
        ];
        if let PhaseSlot::Swing(_) = slot {
            r.push((-b.foot_shift.x, b.foot_shift.x));
            r.push((-b.foot_shift.y, b.foot_shift.y));
        }
        r
    }

    /// Physical value for each coordinate's `[lo, hi]` range.
    pub fn physical_bounds(&self) -> Vec<(f64, f64)> {
        self.slots.iter().flat_map(|&s| self.ranges(s)).collect()
    }

    /// Decode `u ∈ [0, 1]^d`; coordinates outside are clamped.
    pub fn decode(&self, u: &[f64]) -> Vec<PreviewPhase> {
        assert_eq!(u.len(), self.dim(), "decision vector length");
        let mut out = Vec::with_capacity(self.slots.len());
        let mut k = 0;
        for &slot in &self.slots {
            let vals: Vec<f64> = self
                .ranges(slot)
                .iter()
                .map(|&(lo, hi)| {
                    let v = (lo + u[k].clamp(0.0, 1.0) * (hi - lo)).clamp(lo, hi);
                    k += 1;
                    v
                })
                .collect();
            let dp = Vec2::new(vals[1], vals[2]);
            out.push(match slot {
                PhaseSlot::Stance => PreviewPhase::stance(vals[0], dp),
                PhaseSlot::Swing(leg) => {
                    PreviewPhase::swing(leg, vals[0], dp, Vec2::new(vals[3], vals[4]))
                }
            });
        }
        out
    }

    /// Normalized coordinates of a control sequence matching the slots.
    pub fn encode(&self, u: &[PreviewPhase]) -> Vec<f64> {
        assert_eq!(u.len(), self.slots.len(), "control sequence length");
        let mut out = Vec::with_capacity(self.dim());
        for (&slot, ph) in self.slots.iter().zip(u) {
            let mut vals = vec![ph.duration, ph.cop_shift.x, ph.cop_shift.y];
            if let PhaseSlot::Swing(_) = slot {
                vals.extend([ph.foot_shift.x, ph.foot_shift.y]);
            }
            for ((lo, hi), v) in self.ranges(slot).into_iter().zip(vals) {
                out.push(((v - lo) / (hi - lo)).clamp(0.0, 1.0));
            }
        }
        out
    }

    /// Starting point: nominal duration, COP shifted by `cmd·T`, nominal landing.
    pub fn initial_guess(&self, cmd: &UserCommand, duration: f64) -> Vec<f64> {
        let u: Vec<PreviewPhase> = self
            .slots
            .iter()
            .map(|&slot| {
                let dp = cmd.velocity * duration;
                match slot {
                    PhaseSlot::Stance => PreviewPhase::stance(duration, dp),
                    PhaseSlot::Swing(leg) => PreviewPhase::swing(leg, duration, dp, Vec2::zeros()),
                }
            })
            .collect();
        self.encode(&u)
    }
}

/// ‖ẋ_desired − (x_end − x_0)/ΣT‖².
pub fn g_velocity(s: &Rollout, cmd: &UserCommand) -> Result<f64> {
    let total = s.total_duration();
    if !(total > 0.0) {
        return Err(CoupledError::ZeroDuration);
    }
    let avg = (s.final_state().com - s.states[0].com) / total;
    Ok((cmd.velocity - avg).norm_squared())
}

/// Phase travel below this distance carries no locomotion-cost term.
pub const MIN_TRAVEL: f64 = 1e-9;

/// Σ over phases of ½v²/(g·d), with `d` the horizontal CoM travel and
/// `v = d/T` the phase's mean speed.
pub fn g_elc(s: &Rollout, gravity: f64) -> f64 {
    s.phases
        .iter()
        .enumerate()
        .map(|(k, ph)| {
            let d = (s.states[k + 1].com - s.states[k].com).norm();
            if d < MIN_TRAVEL {
                0.0
            } else {
                let v = d / ph.duration;
                0.5 * v * v / (gravity * d)
            }
        })
        .sum()
}

/// Σ over footholds of `T + κ·max(0, T − threshold)²`; off-map positions count as `T = 1`.
pub fn g_terrain(footholds: &[Vec2], costs: Option<&CostMap>, kappa: f64, threshold: f64) -> f64 {
    footholds
        .iter()
        .map(|&f| {
            let t = costs.map_or(0.0, |c| c.total_at(f));
            t + kappa * (t - threshold).max(0.0).powi(2)
        })
        .sum()
}

/// Σ max(0, −slack)² over the support lines shrunk by `r`, at every phase's
/// initial and terminal COP.
pub fn g_stability(s: &Rollout, r: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..s.phases.len() {
        let sup = &s.states[k].support;
        for p in [s.states[k].cop, s.states[k + 1].cop] {
            for l in &sup.lines {
                total += (-l.shifted(r - sup.margin).slack(p)).max(0.0).powi(2);
            }
        }
    }
    total
}

/// Smallest slack of any phase-endpoint COP against its phase's lines shrunk by `r`.
pub fn min_endpoint_slack(s: &Rollout, r: f64) -> f64 {
    let mut m = f64::INFINITY;
    for k in 0..s.phases.len() {
        let sup = &s.states[k].support;
        for p in [s.states[k].cop, s.states[k + 1].cop] {
            for l in &sup.lines {
                m = m.min(l.shifted(r - sup.margin).slack(p));
            }
        }
    }
    m
}

/// Σ (√(‖x − p‖² + h²) − h)² at phase initial and terminal states.
pub fn g_coupling(s: &Rollout, h: f64) -> f64 {
    let term = |x: Vec2, p: Vec2| ((x - p).norm_squared() + h * h).sqrt() - h;
    let mut total = 0.0;
    for k in 0..s.phases.len() {
        for st in [&s.states[k], &s.states[k + 1]] {
            total += term(st.com, st.cop).powi(2);
        }
    }
    total
}

/// Terminal condition for receding execution: Σ max(0, −slack)² of the
/// capture point `x + ẋ/ω` against the final four-foot support shrunk by
/// `r`, plus ‖ẋ_N − ẋ_desired‖².
pub fn g_capture(s: &Rollout, cmd: &UserCommand, omega: f64, r: f64) -> f64 {
    let fin = s.final_state();
    let xi = fin.com + fin.com_vel / omega;
    let sup = &fin.support;
    let outside: f64 = sup
        .lines
        .iter()
        .map(|l| (-l.shifted(r - sup.margin).slack(xi)).max(0.0).powi(2))
        .sum();
    outside + (fin.com_vel - cmd.velocity).norm_squared()
}

/// Σ ‖(f_i − c) − o_i‖² over the final feet, with `c` their centroid and
/// `o_i` the nominal stance offsets.
pub fn g_posture(s: &Rollout, stance: &StanceGeometry) -> f64 {
    let feet = &s.final_state().feet;
    let c = feet.iter().sum::<Vec2>() / 4.0;
    Leg::ALL
        .iter()
        .map(|&l| (feet[l.index()] - c - stance.offset(l)).norm_squared())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub velocity: f64,
    pub terrain: f64,
    pub energy: f64,
    pub stability: f64,
    pub coupling: f64,
    pub capture: f64,
    pub posture: f64,
}

impl CostBreakdown {
    pub fn weighted(&self, w: &PlannerWeights) -> f64 {
        let g = [
            self.velocity,
            self.terrain,
            self.energy,
            self.stability,
            self.coupling,
            self.capture,
            self.posture,
        ];
        g.iter().zip(w.as_array()).map(|(g, w)| g * w).sum()
    }
}

/// Keys accepted by [`CoupledConfig::apply`].
pub const CONFIG_KEYS: &[&str] = &[
    "weights.velocity",
    "weights.terrain",
    "weights.energy",
    "weights.stability",
    "weights.coupling",
    "weights.capture",
    "weights.posture",
    "bounds.t_min",
    "bounds.t_max",
    "bounds.cop_shift",
    "bounds.foot_shift_x",
    "bounds.foot_shift_y",
    "horizon.cycles",
    "horizon.cycle",
    "penalty.kappa",
    "penalty.ban_threshold",
    "stability.margin",
    "stability.buffer",
    "attitude.margin",
    "model.height",
    "init.duration",
    "cma.max_evals",
    "cma.sigma0",
    "cma.seed",
    "cma.ipop_restarts",
    "cma.retries",
    "cma.lambda",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledConfig {
    pub weights: PlannerWeights,
    pub bounds: DecisionBounds,
    pub cycle: Vec<PhaseSlot>,
    /// Number of gait cycles in the horizon.
    pub cycles: usize,
    /// Quadratic penalty weight for footholds above `ban_threshold`.
    pub kappa: f64,
    pub ban_threshold: f64,
    /// Support-polygon shrink margin for the COP.
    pub margin: f64,
    /// Extra shrink applied inside the penalty so that soft-constraint optima
    /// satisfy the `margin` constraint with room to spare.
    pub margin_buffer: f64,
    pub cart: CartTable,
    pub stance: StanceGeometry,
    pub initial_duration: f64,
    /// Stability margin from which the attitude acceleration bounds are derived.
    pub attitude_margin: f64,
    pub inertia: InertiaModel,
    pub cma: CmaConfig,
    /// Extra optimizer runs, each on a fresh seed, while the best plan
    /// violates the stability margin.
    pub retries: usize,
}

impl Default for CoupledConfig {
    fn default() -> Self {
        let bounds = DecisionBounds::default();
        Self {
            weights: PlannerWeights::default(),
            bounds,
            cycle: default_cycle(),
            cycles: 1,
            kappa: 100.0,
            ban_threshold: 0.8,
            margin: 0.05,
            margin_buffer: 0.01,
            cart: CartTable::default(),
            stance: StanceGeometry::default(),
            initial_duration: 0.6,
            attitude_margin: 0.1,
            inertia: InertiaModel::default_trunk(),
            cma: CmaConfig {
                sigma0: 0.2,
                max_evals: 200_000,
                tol_x: 1e-11,
                tol_fun: 1e-11,
                ..CmaConfig::default()
            },
            retries: 4,
        }
    }
}

impl CoupledConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoupledError::InvalidConfig(m.into()));
        if self.weights.as_array().iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("weights must be finite and non-negative");
        }
        let b = &self.bounds;
        if !(b.t_min > 0.0 && b.t_min < b.t_max && b.t_max.is_finite()) {
            return bad("duration bounds");
        }
        if !(b.cop_shift > 0.0 && b.foot_shift.x > 0.0 && b.foot_shift.y > 0.0) {
            return bad("shift bounds must be positive");
        }
        if !b.keeps_feet_in_quadrants(&self.stance) {
            return bad("landing offsets may cross the support-polygon centre");
        }
        if self.cycle.is_empty() || self.cycles == 0 {
            return bad("empty horizon");
        }
        if !(self.kappa >= 0.0 && self.margin >= 0.0 && self.margin_buffer >= 0.0) {
            return bad("negative penalty parameter");
        }
        if !(self.attitude_margin > 0.0) {
            return bad("attitude margin must be positive");
        }
        if !(b.t_min..=b.t_max).contains(&self.initial_duration) {
            return bad("initial duration outside bounds");
        }
        Ok(())
    }

    pub fn encoding(&self) -> DecisionEncoding {
        DecisionEncoding::new(&self.cycle, self.cycles, self.bounds)
    }

    /// Apply `key = value` overrides.
    pub fn apply(&mut self, kv: &KeyValues) -> std::result::Result<(), ConfigError> {
        kv.ensure_known(CONFIG_KEYS)?;
        let w = &mut self.weights;
        kv.set_f64("weights.velocity", &mut w.velocity)?;
        kv.set_f64("weights.terrain", &mut w.terrain)?;
        kv.set_f64("weights.energy", &mut w.energy)?;
        kv.set_f64("weights.stability", &mut w.stability)?;
        kv.set_f64("weights.coupling", &mut w.coupling)?;
        kv.set_f64("weights.capture", &mut w.capture)?;
        kv.set_f64("weights.posture", &mut w.posture)?;
        let b = &mut self.bounds;
        kv.set_f64("bounds.t_min", &mut b.t_min)?;
        kv.set_f64("bounds.t_max", &mut b.t_max)?;
        kv.set_f64("bounds.cop_shift", &mut b.cop_shift)?;
        kv.set_f64("bounds.foot_shift_x", &mut b.foot_shift.x)?;
        kv.set_f64("bounds.foot_shift_y", &mut b.foot_shift.y)?;
        kv.set_usize("horizon.cycles", &mut self.cycles)?;
        if let Some(v) = kv.get("horizon.cycle") {
            self.cycle = v
                .split(',')
                .map(|s| PhaseSlot::parse(s).ok_or_else(|| ConfigError::value("horizon.cycle", s)))
                .collect::<std::result::Result<_, _>>()?;
        }
        kv.set_f64("penalty.kappa", &mut self.kappa)?;
        kv.set_f64("penalty.ban_threshold", &mut self.ban_threshold)?;
        kv.set_f64("stability.margin", &mut self.margin)?;
        kv.set_f64("stability.buffer", &mut self.margin_buffer)?;
        kv.set_f64("attitude.margin", &mut self.attitude_margin)?;
        kv.set_f64("model.height", &mut self.cart.height)?;
        kv.set_f64("init.duration", &mut self.initial_duration)?;
        kv.set_usize("cma.max_evals", &mut self.cma.max_evals)?;
        kv.set_f64("cma.sigma0", &mut self.cma.sigma0)?;
        kv.set_u64("cma.seed", &mut self.cma.seed)?;
        kv.set_usize("cma.ipop_restarts", &mut self.cma.ipop_restarts)?;
        kv.set_usize("cma.retries", &mut self.retries)?;
        if let Some(v) = kv.get("cma.lambda") {
            self.cma.lambda =
                Some(v.parse().map_err(|_| ConfigError::value("cma.lambda", v))?);
        }
        Ok(())
    }
}

/// Terrain seen by the coupled planner. Missing maps mean flat, zero-cost ground at z = 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct CoupledTerrain<'a> {
    pub costs: Option<&'a CostMap>,
    pub heights: Option<&'a HeightMap>,
}

impl<'a> CoupledTerrain<'a> {
    pub fn new(heights: &'a HeightMap, costs: &'a CostMap) -> Self {
        Self {
            costs: Some(costs),
            heights: Some(heights),
        }
    }

    /// Ground height at `xy`, 0 where unknown.
    pub fn height_at(&self, xy: Vec2) -> f64 {
        self.heights.and_then(|h| h.height_at(xy).ok()).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPlan {
    pub controls: Vec<PreviewPhase>,
    /// Normalized decision vector of `controls`.
    pub decision: Vec<f64>,
    pub rollout: Rollout,
    pub attitude: AttitudeSpline,
    pub terms: CostBreakdown,
    pub cost: f64,
    pub evaluations: usize,
    pub termination: Termination,
    pub trace: Vec<TraceRow>,
}

impl CoupledPlan {
    /// Planned footholds as `(leg, x, y, z)`.
    pub fn footholds(&self, terrain: &CoupledTerrain) -> Vec<(Leg, Vec3)> {
        self.rollout
            .footholds
            .iter()
            .map(|&(l, p, _)| (l, Vec3::new(p.x, p.y, terrain.height_at(p))))
            .collect()
    }

    /// Average CoM velocity over the rollout.
    pub fn average_velocity(&self) -> Vec2 {
        let r = &self.rollout;
        (r.final_state().com - r.states[0].com) / r.total_duration()
    }

    /// Per-leg foothold list `leg,x,y,z,phase_id`.
    pub fn write_footholds_csv<W: Write>(
        &self,
        terrain: &CoupledTerrain,
        mut w: W,
    ) -> std::io::Result<()> {
        writeln!(w, "leg,x,y,z,phase_id")?;
        for &(leg, p, k) in &self.rollout.footholds {
            let z = terrain.height_at(p);
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{}",
                leg.name(),
                p.x,
                p.y,
                z,
                self.rollout.source[k]
            )?;
        }
        Ok(())
    }
}

pub struct CoupledPlanner<'a> {
    pub terrain: CoupledTerrain<'a>,
    pub config: CoupledConfig,
    encoding: DecisionEncoding,
}

impl<'a> CoupledPlanner<'a> {
    pub fn new(terrain: CoupledTerrain<'a>, config: CoupledConfig) -> Result<Self> {
        config.validate()?;
        let encoding = config.encoding();
        Ok(Self {
            terrain,
            config,
            encoding,
        })
    }

    pub fn encoding(&self) -> &DecisionEncoding {
        &self.encoding
    }

    pub fn rollout(&self, s0: &PreviewState, u: &[PreviewPhase]) -> Result<Rollout> {
        let c = &self.config;
        Ok(rollout(s0, u, c.margin, &c.cart, &c.stance)?)
    }

    /// Unweighted cost terms of a control sequence.
    pub fn terms(&self, s0: &PreviewState, u: &[PreviewPhase], cmd: &UserCommand) -> Result<CostBreakdown> {
        let c = &self.config;
        let s = self.rollout(s0, u)?;
        let feet: Vec<Vec2> = s.footholds.iter().map(|f| f.1).collect();
        Ok(CostBreakdown {
            velocity: g_velocity(&s, cmd)?,
            terrain: g_terrain(&feet, self.terrain.costs, c.kappa, c.ban_threshold),
            energy: g_elc(&s, c.cart.gravity),
            stability: g_stability(&s, c.margin + c.margin_buffer),
            coupling: g_coupling(&s, c.cart.height),
            capture: g_capture(&s, cmd, c.cart.omega(), c.margin + c.margin_buffer),
            posture: g_posture(&s, &c.stance),
        })
    }

    /// Weighted cost of a normalized decision vector; `+∞` when the rollout fails.
    pub fn cost(&self, s0: &PreviewState, u: &[f64], cmd: &UserCommand) -> f64 {
        let phases = self.encoding.decode(u);
        match self.terms(s0, &phases, cmd) {
            Ok(t) => {
                let v = t.weighted(&self.config.weights);
                if v.is_nan() {
                    f64::INFINITY
                } else {
                    v
                }
            }
            Err(_) => f64::INFINITY,
        }
    }

    pub fn plan(&self, s0: &PreviewState, cmd: &UserCommand) -> Result<CoupledPlan> {
        self.plan_with_attitude(s0, &AttitudeState::default(), cmd)
    }

    pub fn plan_with_attitude(
        &self,
        s0: &PreviewState,
        att0: &AttitudeState,
        cmd: &UserCommand,
    ) -> Result<CoupledPlan> {
        let c = &self.config;
        let x0 = self.encoding.initial_guess(cmd, c.initial_duration);
        let d = x0.len();
        let mut best: Option<(f64, crate::cmaes::CmaResult)> = None;
        let mut evaluations = 0;
        for attempt in 0..=c.retries {
            let cma = CmaConfig {
                lower: Some(vec![0.0; d]),
                upper: Some(vec![1.0; d]),
                seed: c.cma.seed.wrapping_add(RETRY_SEED_STRIDE.wrapping_mul(attempt as u64)),
                ..c.cma.clone()
            };
            let res = optimize(|u| self.cost(s0, u, cmd), &x0, &cma)?;
            evaluations += res.evaluations;
            if !res.best_value.is_finite() {
                continue;
            }
            let ro = self.rollout(s0, &self.encoding.decode(&res.best_point))?;
            let violation = (-min_endpoint_slack(&ro, c.margin)).max(0.0);
            let better = best.as_ref().is_none_or(|(v, b)| {
                (violation, res.best_value) < (*v, b.best_value)
            });
            if better {
                best = Some((violation, res));
            }
            if violation <= STABILITY_TOLERANCE {
                break;
            }
        }
        let Some((_, res)) = best else {
            return Err(CoupledError::Infeasible(evaluations));
        };
        let controls = self.encoding.decode(&res.best_point);
        let ro = self.rollout(s0, &controls)?;
        let terms = self.terms(s0, &controls, cmd)?;
        let attitude = self.attitude_plan(&ro, att0, cmd.heading)?;
        Ok(CoupledPlan {
            cost: terms.weighted(&c.weights),
            controls,
            decision: res.best_point,
            rollout: ro,
            attitude,
            terms,
            evaluations,
            termination: res.termination,
            trace: res.trace,
        })
    }

    /// Per-phase attitude segments towards the plane of the feet at each phase end.
    pub fn attitude_plan(&self, s: &Rollout, att0: &AttitudeState, yaw: f64) -> Result<AttitudeSpline> {
        let bounds = max_angular_acceleration(&self.config.inertia, self.config.attitude_margin);
        let mut state = *att0;
        let mut segments: Vec<AttitudeSegment> = Vec::with_capacity(s.phases.len());
        let mut complete = true;
        for (k, ph) in s.phases.iter().enumerate() {
            let feet: Vec<Vec3> = s.states[k + 1]
                .feet
                .iter()
                .map(|&p| Vec3::new(p.x, p.y, self.terrain.height_at(p)))
                .collect();
            let target = fit_support_plane(&feet, yaw)?;
            let part = plan_attitude(&state, target, bounds, &[ph.duration])?;
            let mut seg = part.segments[0];
            seg.start = s.states[k].time - s.states[0].time;
            let (ang, _, _) = part.eval(ph.duration);
            state = AttitudeState {
                roll: ang[0],
                pitch: ang[1],
                ..AttitudeState::default()
            };
            complete = part.complete;
            segments.push(seg);
        }
        Ok(AttitudeSpline { segments, complete })
    }
}

/// Endpoint COP slack below `−STABILITY_TOLERANCE` counts as a violation.
pub const STABILITY_TOLERANCE: f64 = 1e-6;

const RETRY_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Advance by the plan's first positive-duration phase.
pub fn receding_step(plan: &CoupledPlan) -> Result<PreviewState> {
    if plan.rollout.phases.is_empty() {
        return Err(CoupledError::EmptyPlan);
    }
    Ok(plan.rollout.states[1].clone())
}

/// Advance by the plan's first `n` positive-duration phases.
pub fn execute_phases(plan: &CoupledPlan, n: usize) -> Result<PreviewState> {
    if plan.rollout.phases.is_empty() || n == 0 || n > plan.rollout.phases.len() {
        return Err(CoupledError::EmptyPlan);
    }
    Ok(plan.rollout.states[n].clone())
}

/// Initial state for a body at `center`: feet at the nominal stance, at rest.
pub fn rest_state(center: Vec2, config: &CoupledConfig) -> Result<PreviewState> {
    let feet = config.stance.footholds(center, 0.0);
    Ok(PreviewState::at_rest(center, feet, config.margin)?)
}

/// Phase kind of a control as a cycle slot.
pub fn slot_of(ph: &PreviewPhase) -> PhaseSlot {
    match ph.kind {
        PhaseKind::Stance => PhaseSlot::Stance,
        PhaseKind::Swing(l) => PhaseSlot::Swing(l),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_planner() -> CoupledPlanner<'static> {
        CoupledPlanner::new(CoupledTerrain::default(), CoupledConfig::default()).unwrap()
    }

    #[test]
    fn default_dimension() {
        let p = flat_planner();
        assert_eq!(p.encoding().dim(), 26);
        let enc = DecisionEncoding::new(&default_cycle(), 3, DecisionBounds::default());
        assert_eq!(enc.dim(), 78);
    }

    #[test]
    fn encode_decode_round_trip() {
        let enc = flat_planner().encoding().clone();
        let u: Vec<f64> = (0..enc.dim()).map(|i| (i as f64 * 0.37).fract()).collect();
        let phases = enc.decode(&u);
        let back = enc.encode(&phases);
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(slot_of(&phases[1]), PhaseSlot::Swing(Leg::LH));
    }

    #[test]
    fn decode_clamps_to_bounds() {
        let enc = flat_planner().encoding().clone();
        let phases = enc.decode(&vec![7.0; enc.dim()]);
        assert!(phases.iter().all(|p| p.duration == 1.4 && p.cop_shift.x == 0.3));
        let phases = enc.decode(&vec![-1.0; enc.dim()]);
        assert!(phases.iter().all(|p| p.duration == 0.05 && p.cop_shift.y == -0.3));
    }

    #[test]
    fn rejects_crossing_foot_bounds() {
        let mut c = CoupledConfig::default();
        c.bounds.foot_shift.y = 0.3;
        assert!(CoupledPlanner::new(CoupledTerrain::default(), c).is_err());
    }

    #[test]
    fn zero_duration_velocity_error() {
        let p = flat_planner();
        let s0 = rest_state(Vec2::zeros(), &p.config).unwrap();
        let r = p.rollout(&s0, &[]).unwrap();
        assert!(matches!(g_velocity(&r, &UserCommand::new(0.1, 0.0)), Err(CoupledError::ZeroDuration)));
    }

    #[test]
    fn off_map_terrain_default() {
        let v = g_terrain(&[Vec2::zeros()], None, 100.0, 0.8);
        assert_eq!(v, 0.0);
    }
}
