//! Benchmark scenarios, end-to-end planner runs, metrics and SVG rendering.

use crate::body_planner::{
    ara_star, default_primitives, AraConfig, BodyPlanError, BodyPlanner, BodyPlannerConfig, Goal,
};
use crate::com_spline::{
    build_phase_plan, generate_com_trajectory, sample_schedule, ComSplineError, ComState,
    PhasePlan, PhaseTiming, QuinticSpline, SplineParams, GRAVITY,
};
use crate::config::{ConfigError, KeyValues};
use crate::coupled::{
    execute_phases, g_elc, min_endpoint_slack, rest_state, CoupledConfig,
    CoupledPlanner, CoupledTerrain, UserCommand, STABILITY_TOLERANCE,
};
use crate::foothold::{plan_foothold_sequence, FootholdConfig, FootholdError};
use crate::geom::{Leg, Vec2, Vec3};
use crate::qp::QpOptions;
use crate::terrain::{
    build_costmap, CostMap, CostParams, GridSpec, HeightMap, Rect, TerrainError, TerrainView,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid terrain parameters: {0}")]
    InvalidTerrain(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("unknown planner `{0}`")]
    UnknownPlanner(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerrainKind {
    Flat,
    Gap,
    Stairs,
    SteppingStones,
    Pallet,
    Ramp,
}

impl TerrainKind {
    pub const ALL: [TerrainKind; 6] = [
        TerrainKind::Flat,
        TerrainKind::Gap,
        TerrainKind::Stairs,
        TerrainKind::SteppingStones,
        TerrainKind::Pallet,
        TerrainKind::Ramp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerrainKind::Flat => "flat",
            TerrainKind::Gap => "gap",
            TerrainKind::Stairs => "stairs",
            TerrainKind::SteppingStones => "stepping_stones",
            TerrainKind::Pallet => "pallet",
            TerrainKind::Ramp => "ramp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s.trim())
    }
}

/// Generator parameters. The map spans `[origin, origin + (length, width)]`;
/// terrain features start at `x = feature_start`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainParams {
    pub origin: Vec2,
    pub length: f64,
    pub width: f64,
    pub resolution: f64,
    pub z_resolution: f64,
    pub feature_start: f64,
    pub gap_width: f64,
    pub gap_depth: f64,
    pub step_rise: f64,
    pub step_run: f64,
    pub steps: usize,
    pub stone_size: f64,
    /// Centre-to-centre stone pitch.
    pub stone_pitch: f64,
    /// Stone tops are drawn uniformly from `±stone_elevation`.
    pub stone_elevation: f64,
    pub stone_field_length: f64,
    /// Depth of the voids between stones.
    pub void_depth: f64,
    pub pallet_height: f64,
    pub pallet_length: f64,
    pub slat_width: f64,
    pub slat_gap: f64,
    pub ramp_angle_deg: f64,
    pub ramp_length: f64,
    pub seed: u64,
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self {
            origin: Vec2::new(-1.0, -1.0),
            length: 4.0,
            width: 2.0,
            resolution: 0.02,
            z_resolution: 0.001,
            feature_start: 1.0,
            gap_width: 0.25,
            gap_depth: 0.30,
            step_rise: 0.14,
            step_run: 0.30,
            steps: 4,
            stone_size: 0.20,
            stone_pitch: 0.25,
            stone_elevation: 0.06,
            stone_field_length: 1.0,
            void_depth: 0.30,
            pallet_height: 0.14,
            pallet_length: 1.2,
            slat_width: 0.10,
            slat_gap: 0.04,
            ramp_angle_deg: 10.0,
            ramp_length: 1.0,
            seed: 0,
        }
    }
}

impl TerrainParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BenchError::InvalidTerrain(m.into()));
        let positive = [
            self.length,
            self.width,
            self.resolution,
            self.z_resolution,
            self.gap_width,
            self.step_run,
            self.stone_size,
            self.stone_pitch,
            self.pallet_length,
            self.slat_width,
            self.ramp_length,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("dimensions must be positive and finite");
        }
        let non_negative = [
            self.gap_depth,
            self.step_rise,
            self.stone_elevation,
            self.stone_field_length,
            self.void_depth,
            self.pallet_height,
            self.slat_gap,
        ];
        if non_negative.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("heights and gaps must be non-negative");
        }
        if self.stone_size > self.stone_pitch {
            return bad("stone size exceeds pitch");
        }
        if !(0.0..90.0).contains(&self.ramp_angle_deg) {
            return bad("ramp angle must lie in [0, 90)");
        }
        if (self.length / self.resolution).round() < 1.0 || (self.width / self.resolution).round() < 1.0 {
            return bad("map smaller than one cell");
        }
        Ok(())
    }

    pub fn apply(&mut self, kv: &KeyValues) -> std::result::Result<(), ConfigError> {
        kv.ensure_known(TERRAIN_KEYS)?;
        kv.set_f64("origin_x", &mut self.origin.x)?;
        kv.set_f64("origin_y", &mut self.origin.y)?;
        kv.set_f64("length", &mut self.length)?;
        kv.set_f64("width", &mut self.width)?;
        kv.set_f64("resolution", &mut self.resolution)?;
        kv.set_f64("z_resolution", &mut self.z_resolution)?;
        kv.set_f64("feature_start", &mut self.feature_start)?;
        kv.set_f64("gap_width", &mut self.gap_width)?;
        kv.set_f64("gap_depth", &mut self.gap_depth)?;
        kv.set_f64("step_rise", &mut self.step_rise)?;
        kv.set_f64("step_run", &mut self.step_run)?;
        kv.set_usize("steps", &mut self.steps)?;
        kv.set_f64("stone_size", &mut self.stone_size)?;
        kv.set_f64("stone_pitch", &mut self.stone_pitch)?;
        kv.set_f64("stone_elevation", &mut self.stone_elevation)?;
        kv.set_f64("stone_field_length", &mut self.stone_field_length)?;
        kv.set_f64("void_depth", &mut self.void_depth)?;
        kv.set_f64("pallet_height", &mut self.pallet_height)?;
        kv.set_f64("pallet_length", &mut self.pallet_length)?;
        kv.set_f64("slat_width", &mut self.slat_width)?;
        kv.set_f64("slat_gap", &mut self.slat_gap)?;
        kv.set_f64("ramp_angle_deg", &mut self.ramp_angle_deg)?;
        kv.set_f64("ramp_length", &mut self.ramp_length)?;
        kv.set_u64("seed", &mut self.seed)?;
        Ok(())
    }

    fn grid(&self) -> Result<GridSpec> {
        let nx = (self.length / self.resolution).round() as usize;
        let ny = (self.width / self.resolution).round() as usize;
        Ok(GridSpec::new(self.origin, self.resolution, nx, ny, self.z_resolution)?)
    }
}

const TERRAIN_KEYS: &[&str] = &[
    "origin_x",
    "origin_y",
    "length",
    "width",
    "resolution",
    "z_resolution",
    "feature_start",
    "gap_width",
    "gap_depth",
    "step_rise",
    "step_run",
    "steps",
    "stone_size",
    "stone_pitch",
    "stone_elevation",
    "stone_field_length",
    "void_depth",
    "pallet_height",
    "pallet_length",
    "slat_width",
    "slat_gap",
    "ramp_angle_deg",
    "ramp_length",
    "seed",
];

/// Deterministic heightmap of the given kind. Ground level is z = 0.
pub fn generate_terrain(kind: TerrainKind, p: &TerrainParams) -> Result<HeightMap> {
    p.validate()?;
    let spec = p.grid()?;
    let x0 = p.feature_start;
    let hm = match kind {
        TerrainKind::Flat => HeightMap::flat(spec, 0.0),
        TerrainKind::Gap => HeightMap::from_fn(spec, |c| {
            if c.x >= x0 && c.x < x0 + p.gap_width {
                -p.gap_depth
            } else {
                0.0
            }
        }),
        TerrainKind::Stairs => HeightMap::from_fn(spec, |c| {
            if c.x < x0 {
                0.0
            } else {
                let i = ((c.x - x0) / p.step_run).floor() as usize + 1;
                i.min(p.steps) as f64 * p.step_rise
            }
        }),
        TerrainKind::SteppingStones => {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
            let cols = (p.stone_field_length / p.stone_pitch).ceil() as usize;
            let rows = (p.width / p.stone_pitch).ceil() as usize + 1;
            let tops: Vec<f64> = (0..cols * rows)
                .map(|_| rng.random_range(-1.0..=1.0) * p.stone_elevation)
                .collect();
            let y0 = p.origin.y;
            HeightMap::from_fn(spec, |c| {
                if c.x < x0 || c.x >= x0 + cols as f64 * p.stone_pitch {
                    return 0.0;
                }
                let (u, v) = ((c.x - x0) / p.stone_pitch, (c.y - y0) / p.stone_pitch);
                let (i, j) = (u.floor() as usize, v.floor() as usize);
                let on_stone = u.fract() * p.stone_pitch < p.stone_size
                    && v.fract() * p.stone_pitch < p.stone_size;
                if on_stone {
                    tops[(j * cols + i).min(tops.len() - 1)]
                } else {
                    -p.void_depth
                }
            })
        }
        TerrainKind::Pallet => {
            let pitch = p.slat_width + p.slat_gap;
            HeightMap::from_fn(spec, |c| {
                if c.x < x0 || c.x >= x0 + p.pallet_length {
                    return 0.0;
                }
                if ((c.x - x0) / pitch).fract() * pitch < p.slat_width {
                    p.pallet_height
                } else {
                    0.0
                }
            })
        }
        TerrainKind::Ramp => {
            let slope = p.ramp_angle_deg.to_radians().tan();
            HeightMap::from_fn(spec, |c| (c.x - x0).clamp(0.0, p.ramp_length) * slope)
        }
    };
    Ok(hm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerKind {
    Coupled,
    Decoupled,
}

impl PlannerKind {
    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Coupled => "coupled",
            PlannerKind::Decoupled => "decoupled",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "coupled" => Ok(PlannerKind::Coupled),
            "decoupled" => Ok(PlannerKind::Decoupled),
            other => Err(BenchError::UnknownPlanner(other.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub kind: TerrainKind,
    pub terrain: TerrainParams,
    /// Initial CoM position; the robot starts at rest in its nominal stance.
    pub start: Vec2,
    /// The run succeeds once the CoM passes `goal.x` (0.3 m past the feature,
    /// kept 0.5 m inside the map).
    pub goal: Vec2,
    pub cmd: UserCommand,
    /// Planner overrides in `key = value` form (`coupled.*`, `decoupled.*`, `bench.*`).
    pub overrides: KeyValues,
}

impl Scenario {
    pub fn new(kind: TerrainKind) -> Self {
        let terrain = TerrainParams::default();
        let end = terrain.feature_start
            + match kind {
                TerrainKind::Gap => terrain.gap_width,
                TerrainKind::Stairs => terrain.steps as f64 * terrain.step_run,
                TerrainKind::SteppingStones => terrain.stone_field_length,
                TerrainKind::Pallet => terrain.pallet_length,
                TerrainKind::Ramp => terrain.ramp_length,
                TerrainKind::Flat => 0.0,
            };
        Self {
            name: kind.name().into(),
            kind,
            terrain,
            start: Vec2::new(0.0, 0.0),
            goal: Vec2::new((end + 0.3).min(terrain.origin.x + terrain.length - 0.5), 0.0),
            cmd: UserCommand::new(0.1, 0.0),
            overrides: KeyValues::default(),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        TerrainKind::parse(name)
            .map(Self::new)
            .ok_or_else(|| BenchError::UnknownScenario(name.into()))
    }

    pub fn all() -> Vec<Self> {
        TerrainKind::ALL.into_iter().map(Self::new).collect()
    }

    pub fn heightmap(&self) -> Result<HeightMap> {
        generate_terrain(self.kind, &self.terrain)
    }
}

/// Costmap over the whole heightmap with default parameters.
pub fn scenario_costmap(hm: &HeightMap) -> Result<CostMap> {
    Ok(build_costmap(hm, &CostParams::default(), &Rect::of_grid(hm.spec()))?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub coupled: CoupledConfig,
    /// Receding-horizon plans before a coupled run is declared stuck.
    pub max_plans: usize,
    pub body: BodyPlannerConfig,
    pub ara: AraConfig,
    pub foothold: FootholdConfig,
    /// Support margin of the CoM spline.
    pub margin: f64,
    pub timing: PhaseTiming,
    pub spline: SplineParams,
    pub qp: QpOptions,
    /// Distance kept between body positions and the map border.
    pub border: f64,
    /// Sampling step of exported CoM paths.
    pub path_dt: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        let mut coupled = CoupledConfig::default();
        coupled.cma.max_evals = 20_000;
        Self {
            coupled,
            max_plans: 40,
            body: BodyPlannerConfig::default(),
            ara: AraConfig::default(),
            foothold: FootholdConfig::default(),
            margin: 0.05,
            timing: PhaseTiming::default(),
            spline: SplineParams::default(),
            qp: QpOptions::default(),
            border: 0.45,
            path_dt: 0.05,
        }
    }
}

impl RunOptions {
    /// Apply `coupled.*`, `decoupled.*` and `bench.*` keys.
    pub fn apply(&mut self, kv: &KeyValues) -> std::result::Result<(), ConfigError> {
        self.coupled.apply(&kv.section("coupled"))?;
        let d = kv.section("decoupled");
        d.ensure_known(&[
            "margin",
            "t_swing",
            "lead_in",
            "dt",
            "epsilon0",
            "max_expansions",
            "n_best",
            "w_x",
            "w_y",
        ])?;
        d.set_f64("margin", &mut self.margin)?;
        d.set_f64("t_swing", &mut self.timing.t_swing)?;
        d.set_f64("lead_in", &mut self.timing.lead_in)?;
        d.set_f64("dt", &mut self.timing.dt)?;
        d.set_f64("epsilon0", &mut self.ara.epsilon0)?;
        d.set_usize("max_expansions", &mut self.ara.max_expansions)?;
        d.set_usize("n_best", &mut self.body.n_best)?;
        d.set_f64("w_x", &mut self.spline.w_x)?;
        d.set_f64("w_y", &mut self.spline.w_y)?;
        let b = kv.section("bench");
        b.ensure_known(&["max_plans", "border", "path_dt"])?;
        b.set_usize("max_plans", &mut self.max_plans)?;
        b.set_f64("border", &mut self.border)?;
        b.set_f64("path_dt", &mut self.path_dt)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunMetrics {
    pub foothold_count: usize,
    pub avg_speed: f64,
    /// Summed per-phase locomotion cost divided by the average speed (s/m).
    pub elc_over_speed: f64,
    /// Violated COP checks (coupled: phase endpoints, decoupled: spline samples).
    pub violations: usize,
    /// Planned footholds on cells above the ban threshold or off the map.
    pub banned_footholds: usize,
    pub distance: f64,
    pub duration: f64,
    pub wall_time: f64,
}

/// Outcome of one planner run, with the geometry needed for rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scenario: String,
    pub planner: PlannerKind,
    pub seed: u64,
    pub success: bool,
    pub failure: Option<String>,
    pub metrics: RunMetrics,
    pub footholds: Vec<(Leg, Vec3)>,
    pub com_path: Vec<Vec2>,
    pub polygons: Vec<Vec<Vec2>>,
}

impl RunRecord {
    fn new(scn: &Scenario, planner: PlannerKind, seed: u64) -> Self {
        Self {
            scenario: scn.name.clone(),
            planner,
            seed,
            success: false,
            failure: None,
            metrics: RunMetrics::default(),
            footholds: Vec::new(),
            com_path: Vec::new(),
            polygons: Vec::new(),
        }
    }

    fn fail(mut self, reason: impl ToString) -> Self {
        self.success = false;
        self.failure = Some(reason.to_string());
        self
    }
}

fn banned(cm: &CostMap, p: Vec2, threshold: f64) -> bool {
    cm.total_at(p) > threshold
}

fn finish(mut rec: RunRecord, crossed: bool, elc: f64) -> RunRecord {
    let m = &mut rec.metrics;
    m.foothold_count = rec.footholds.len();
    if m.duration > 0.0 {
        m.avg_speed = m.distance / m.duration;
    }
    m.elc_over_speed = if m.avg_speed > 0.0 { elc / m.avg_speed } else { f64::INFINITY };
    rec.success = crossed && m.violations == 0 && m.banned_footholds == 0;
    if !rec.success && rec.failure.is_none() {
        rec.failure = Some(if !crossed {
            "goal not reached".into()
        } else if m.banned_footholds > 0 {
            format!("{} footholds on banned cells", m.banned_footholds)
        } else {
            format!("{} COP violations", m.violations)
        });
    }
    rec
}

/// Receding-horizon coupled run: plan, execute the whole horizon, repeat.
pub fn run_coupled(
    scn: &Scenario,
    hm: &HeightMap,
    cm: &CostMap,
    seed: u64,
    opts: &RunOptions,
) -> RunRecord {
    let started = Instant::now();
    let mut rec = RunRecord::new(scn, PlannerKind::Coupled, seed);
    let mut opts = opts.clone();
    if let Err(e) = opts.apply(&scn.overrides) {
        return rec.fail(e);
    }
    let terrain = CoupledTerrain::new(hm, cm);
    let mut cfg = opts.coupled.clone();
    let mut state = match rest_state(scn.start, &cfg) {
        Ok(s) => s,
        Err(e) => return rec.fail(e),
    };
    let origin = state.com;
    let mut elc = 0.0;
    let mut crossed = state.com.x >= scn.goal.x;
    rec.com_path.push(state.com);
    for k in 0..opts.max_plans {
        if crossed {
            break;
        }
        cfg.cma.seed = seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
        let plan = match CoupledPlanner::new(terrain, cfg.clone()).and_then(|p| p.plan(&state, &scn.cmd)) {
            Ok(p) => p,
            Err(e) => {
                rec.metrics.wall_time = started.elapsed().as_secs_f64();
                return rec.fail(e);
            }
        };
        let ro = &plan.rollout;
        let r = cfg.margin;
        for k in 0..ro.phases.len() {
            let sup = &ro.states[k].support;
            let worst = [ro.states[k].cop, ro.states[k + 1].cop]
                .iter()
                .flat_map(|p| sup.lines.iter().map(move |l| l.shifted(r - sup.margin).slack(*p)))
                .fold(f64::INFINITY, f64::min);
            if worst < -STABILITY_TOLERANCE {
                rec.metrics.violations += 1;
            }
            rec.polygons.push(sup.polygon.clone());
        }
        debug_assert!(rec.metrics.violations > 0 || min_endpoint_slack(ro, r) >= -STABILITY_TOLERANCE);
        for (leg, p) in plan.footholds(&terrain) {
            if banned(cm, p.xy(), cfg.ban_threshold) {
                rec.metrics.banned_footholds += 1;
            }
            rec.footholds.push((leg, p));
        }
        rec.com_path
            .extend(ro.sample(&cfg.cart, opts.path_dt).into_iter().skip(1).map(|s| s.1));
        elc += g_elc(ro, cfg.cart.gravity);
        rec.metrics.duration += ro.total_duration();
        state = match execute_phases(&plan, ro.phases.len()) {
            Ok(s) => s,
            Err(e) => return rec.fail(e),
        };
        crossed = state.com.x >= scn.goal.x;
    }
    rec.metrics.distance = (state.com - origin).norm();
    rec.metrics.wall_time = started.elapsed().as_secs_f64();
    finish(rec, crossed, elc)
}

#[derive(Debug, Error)]
enum DecoupledFailure {
    #[error(transparent)]
    Body(#[from] BodyPlanError),
    #[error(transparent)]
    Foothold(#[from] FootholdError),
    #[error(transparent)]
    Spline(#[from] ComSplineError),
}

/// Output of the decoupled pipeline.
pub struct DecoupledOutput {
    pub plan: crate::foothold::FootholdPlan,
    pub phases: PhasePlan,
    pub spline: QuinticSpline,
}

/// ARA* body path, greedy footholds, then the CoM spline QP.
pub fn plan_decoupled(
    scn: &Scenario,
    hm: &HeightMap,
    cm: &CostMap,
    opts: &RunOptions,
) -> std::result::Result<DecoupledOutput, String> {
    let inner = || -> std::result::Result<DecoupledOutput, DecoupledFailure> {
        let tv = TerrainView::new(hm, cm);
        let spec = cm.spec();
        let mut body = opts.body.clone();
        let pad = Vec2::new(opts.border, opts.border);
        body.search_bounds = Some(Rect::new(spec.origin + pad, spec.max_corner() - pad));
        let lattice = body.lattice;
        let planner = BodyPlanner::new(tv, body, default_primitives())?;
        let start = lattice.state(scn.start.x, scn.start.y, 0.0);
        let goal = Goal::new(lattice.state(scn.goal.x, scn.goal.y, 0.0));
        let path = ara_star(&planner, start, goal, &opts.ara)?;
        let plan = plan_foothold_sequence(
            &start,
            &path.edges,
            &planner.primitives,
            &lattice,
            &tv,
            &opts.foothold,
        )?;
        let phases = build_phase_plan(&plan, opts.margin, &opts.timing)?;
        let s0 = ComState::at_rest(lattice.xy(&start));
        let sol = generate_com_trajectory(&phases, &s0, &opts.spline, &opts.qp)?;
        Ok(DecoupledOutput {
            plan,
            phases,
            spline: sol.spline,
        })
    };
    inner().map_err(|e| e.to_string())
}

/// Decoupled run; the pipeline is deterministic, so `seed` only labels the record.
pub fn run_decoupled(
    scn: &Scenario,
    hm: &HeightMap,
    cm: &CostMap,
    seed: u64,
    opts: &RunOptions,
) -> RunRecord {
    let started = Instant::now();
    let mut rec = RunRecord::new(scn, PlannerKind::Decoupled, seed);
    let mut opts = opts.clone();
    if let Err(e) = opts.apply(&scn.overrides) {
        return rec.fail(e);
    }
    let out = match plan_decoupled(scn, hm, cm, &opts) {
        Ok(o) => o,
        Err(e) => {
            rec.metrics.wall_time = started.elapsed().as_secs_f64();
            return rec.fail(e);
        }
    };
    let threshold = opts.foothold.max_cell_cost;
    for s in &out.plan.steps {
        if banned(cm, s.position.xy(), threshold) {
            rec.metrics.banned_footholds += 1;
        }
        rec.footholds.push((s.leg, s.position));
    }
    let active: Vec<_> = out.phases.active().map(|(_, p)| p).collect();
    for (k, tau) in sample_schedule(&out.phases) {
        let seg = &out.spline.segments[k];
        let p = seg.eval(tau, 0) - seg.eval(tau, 2) * (out.spline.height / GRAVITY);
        if active[k].lines.iter().any(|l| l.slack(p) < -opts.spline.slack_tol) {
            rec.metrics.violations += 1;
        }
    }
    let mut elc = 0.0;
    for seg in &out.spline.segments {
        let a = out.spline.state(seg.start).pos;
        let b = out.spline.state(seg.start + seg.duration).pos;
        let d = (b - a).norm();
        if d >= crate::coupled::MIN_TRAVEL {
            let v = d / seg.duration;
            elc += 0.5 * v * v / (GRAVITY * d);
        }
    }
    rec.polygons = active
        .iter()
        .map(|p| crate::geom::convex_hull(&p.support))
        .collect();
    let dur = out.spline.duration();
    let n = (dur / opts.path_dt).ceil().max(1.0) as usize;
    rec.com_path = (0..=n)
        .map(|i| out.spline.state((i as f64 * opts.path_dt).min(dur)).pos)
        .collect();
    let end = out.spline.state(dur).pos;
    rec.metrics.duration = dur;
    rec.metrics.distance = (end - out.spline.state(0.0).pos).norm();
    rec.metrics.wall_time = started.elapsed().as_secs_f64();
    let crossed = out
        .plan
        .body_states
        .last()
        .is_some_and(|s| opts.body.lattice.xy(s).x >= scn.goal.x - opts.body.lattice.resolution);
    finish(rec, crossed, elc)
}

/// Run every planner on `scn` for each seed. Coupled seeds run concurrently;
/// the deterministic decoupled pipeline runs once and is reported per seed.
pub fn run_comparison(
    scn: &Scenario,
    planners: &[PlannerKind],
    seeds: &[u64],
    opts: &RunOptions,
) -> Result<Vec<RunRecord>> {
    let hm = scn.heightmap()?;
    let cm = scenario_costmap(&hm)?;
    let mut out = Vec::new();
    for &planner in planners {
        match planner {
            PlannerKind::Coupled => {
                let runs: Vec<RunRecord> = seeds
                    .par_iter()
                    .map(|&s| run_coupled(scn, &hm, &cm, s, opts))
                    .collect();
                out.extend(runs);
            }
            PlannerKind::Decoupled => {
                if let Some(&first) = seeds.first() {
                    let rec = run_decoupled(scn, &hm, &cm, first, opts);
                    out.extend(seeds.iter().map(|&s| RunRecord { seed: s, ..rec.clone() }));
                }
            }
        }
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "scenario,planner,seed,success,foothold_count,avg_speed,elc_over_speed,violations,banned_footholds,distance,duration,failure";

/// Metrics rows; wall time is appended only when `timing` is set, so the
/// default output is reproducible.
pub fn write_metrics_csv<W: Write>(records: &[RunRecord], timing: bool, mut w: W) -> std::io::Result<()> {
    write!(w, "{CSV_HEADER}")?;
    if timing {
        write!(w, ",wall_time")?;
    }
    writeln!(w)?;
    for r in records {
        let m = &r.metrics;
        let failure = r
            .failure
            .as_deref()
            .unwrap_or("")
            .replace([',', '\n', '\r'], ";");
        write!(
            w,
            "{},{},{},{},{},{:.6},{:.6},{},{},{:.6},{:.6},{}",
            r.scenario,
            r.planner.name(),
            r.seed,
            r.success,
            m.foothold_count,
            m.avg_speed,
            m.elc_over_speed,
            m.violations,
            m.banned_footholds,
            m.distance,
            m.duration,
            failure
        )?;
        if timing {
            write!(w, ",{:.3}", m.wall_time)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Overlay drawn on top of the costmap.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RenderLayer {
    pub name: String,
    pub color: String,
    pub footholds: Vec<Vec2>,
    pub com_path: Vec<Vec2>,
    pub polygons: Vec<Vec<Vec2>>,
}

impl RenderLayer {
    pub fn from_record(rec: &RunRecord, color: &str) -> Self {
        Self {
            name: format!("{}-{}", rec.planner.name(), rec.seed),
            color: color.into(),
            footholds: rec.footholds.iter().map(|f| f.1.xy()).collect(),
            com_path: rec.com_path.clone(),
            polygons: rec.polygons.clone(),
        }
    }
}

/// Blue at cost 0 through red at cost 1.
pub fn heat_color(t: f64) -> (u8, u8, u8) {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs()) * 0.6).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    (r, g, b)
}

const PX_PER_M: f64 = 200.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// SVG of the costmap heat layer with footholds, CoM paths and support polygons.
pub fn render_svg<W: Write>(cm: &CostMap, layers: &[RenderLayer], mut w: W) -> std::io::Result<()> {
    let spec = cm.spec();
    let (width, height) = (spec.nx as f64 * spec.resolution, spec.ny as f64 * spec.resolution);
    let px = |p: Vec2| -> (f64, f64) {
        (
            (p.x - spec.origin.x) * PX_PER_M,
            (height - (p.y - spec.origin.y)) * PX_PER_M,
        )
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.1} {:.1}">"#,
        width * PX_PER_M,
        height * PX_PER_M,
        width * PX_PER_M,
        height * PX_PER_M
    );
    let _ = writeln!(s, r#"<g class="costmap">"#);
    let cell = spec.resolution * PX_PER_M;
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            let c = cm.cell(ix, iy);
            let fill = if c.known {
                let (r, g, b) = heat_color(c.total);
                format!("#{r:02x}{g:02x}{b:02x}")
            } else {
                "#808080".to_string()
            };
            let (x, y) = px(spec.cell_center(ix, iy));
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                x - cell / 2.0,
                y - cell / 2.0,
                cell,
                cell
            );
        }
    }
    let _ = writeln!(s, "</g>");
    for layer in layers {
        let color = escape(&layer.color);
        let _ = writeln!(s, r#"<g class="plan" id="{}">"#, escape(&layer.name));
        for poly in &layer.polygons {
            let pts: Vec<String> = poly
                .iter()
                .map(|&p| {
                    let (x, y) = px(p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polygon class="support" points="{}" fill="none" stroke="{color}" stroke-opacity="0.3" stroke-width="1"/>"#,
                pts.join(" ")
            );
        }
        if layer.com_path.len() >= 2 {
            let pts: Vec<String> = layer
                .com_path
                .iter()
                .map(|&p| {
                    let (x, y) = px(p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline class="com" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
        }
        for &f in &layer.footholds {
            let (x, y) = px(f);
            let _ = writeln!(
                s,
                r#"<circle class="foothold" cx="{x:.2}" cy="{y:.2}" r="4" fill="{color}" stroke="black" stroke-width="0.5"/>"#
            );
        }
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(s, "</svg>");
    w.write_all(s.as_bytes())
}
