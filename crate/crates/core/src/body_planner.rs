//! Lattice body planner: body-action primitives, the body cost, and an
//! anytime repairing A* search over (x, y, θ).

use crate::attitude::fit_support_plane;
use crate::geom::{rotate, Leg, OrientedRect, StanceGeometry, Vec2, Vec3};
use crate::terrain::{Rect, RegionCell, TerrainView};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::f64::consts::TAU;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BodyPlanError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("primitive table line {line}: {msg}")]
    Table { line: usize, msg: String },
    #[error("start state is off the costmap")]
    StartOffMap,
    #[error("no path to the goal (epsilon {epsilon})")]
    NoPath { epsilon: f64 },
}

pub type Result<T> = std::result::Result<T, BodyPlanError>;

/// Edge costs are rounded to multiples of this so path sums are exact.
pub const COST_QUANTUM: f64 = 1.0 / 1_048_576.0;

pub fn quantize_cost(c: f64) -> f64 {
    if c.is_finite() {
        (c / COST_QUANTUM).round() * COST_QUANTUM
    } else {
        c
    }
}

fn quantize_down(c: f64) -> f64 {
    (c / COST_QUANTUM).floor() * COST_QUANTUM
}

/// Position grid and heading discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub resolution: f64,
    pub headings: u32,
}

impl Default for Lattice {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            headings: 16,
        }
    }
}

impl Lattice {
    pub fn heading_step(&self) -> f64 {
        TAU / self.headings as f64
    }

    /// Nearest lattice state to a world pose.
    pub fn state(&self, x: f64, y: f64, theta: f64) -> BodyState {
        let k = self.headings as i64;
        let h = (theta / self.heading_step()).round() as i64;
        BodyState {
            ix: (x / self.resolution).round() as i32,
            iy: (y / self.resolution).round() as i32,
            heading: h.rem_euclid(k) as u32,
        }
    }

    pub fn xy(&self, s: &BodyState) -> Vec2 {
        Vec2::new(s.ix as f64, s.iy as f64) * self.resolution
    }

    pub fn theta(&self, s: &BodyState) -> f64 {
        s.heading as f64 * self.heading_step()
    }

    /// Successor of `s` under `p`: displacement rotated by θ and re-quantized.
    pub fn apply(&self, s: &BodyState, p: &MotionPrimitive) -> BodyState {
        let d = rotate(Vec2::new(p.dx, p.dy), self.theta(s)) / self.resolution;
        let k = self.headings as i64;
        BodyState {
            ix: s.ix + d.x.round() as i32,
            iy: s.iy + d.y.round() as i32,
            heading: (s.heading as i64 + p.dtheta as i64).rem_euclid(k) as u32,
        }
    }

    /// Heading difference in bins, in `0..=headings/2`.
    pub fn heading_distance(&self, a: u32, b: u32) -> u32 {
        let d = a.abs_diff(b);
        d.min(self.headings - d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BodyState {
    pub ix: i32,
    pub iy: i32,
    pub heading: u32,
}

impl fmt::Display for BodyState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.ix, self.iy, self.heading)
    }
}

/// Footstep search region of one leg, relative to its nominal foothold in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootRegion {
    pub offset: Vec2,
    pub length: f64,
    pub width: f64,
}

impl FootRegion {
    pub fn new(offset: Vec2, length: f64, width: f64) -> Self {
        Self {
            offset,
            length,
            width,
        }
    }
}

impl Default for FootRegion {
    fn default() -> Self {
        Self::new(Vec2::zeros(), 0.20, 0.235)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionPrimitive {
    pub id: String,
    pub dx: f64,
    pub dy: f64,
    /// Heading change in bins.
    pub dtheta: i32,
    pub action_cost: f64,
    pub regions: [FootRegion; 4],
}

impl MotionPrimitive {
    pub fn new(id: &str, dx: f64, dy: f64, dtheta: i32, action_cost: f64) -> Self {
        Self {
            id: id.to_string(),
            dx,
            dy,
            dtheta,
            action_cost,
            regions: [FootRegion::default(); 4],
        }
    }

    pub fn translates(&self) -> bool {
        self.dx != 0.0 || self.dy != 0.0
    }

    fn validate(&self, lattice: &Lattice) -> std::result::Result<(), String> {
        let on_grid = |v: f64| ((v / lattice.resolution) - (v / lattice.resolution).round()).abs() < 1e-9;
        if !(self.dx.is_finite() && self.dy.is_finite()) || !on_grid(self.dx) || !on_grid(self.dy) {
            return Err(format!("{}: displacement is not on the lattice", self.id));
        }
        if !(self.action_cost >= 0.0 && self.action_cost.is_finite()) {
            return Err(format!("{}: action cost must be finite and non-negative", self.id));
        }
        for r in &self.regions {
            if !(r.length > 0.0 && r.width > 0.0 && r.offset.iter().all(|v| v.is_finite())) {
                return Err(format!("{}: empty footstep region", self.id));
            }
        }
        Ok(())
    }
}

/// Forward, forward-diagonal, lateral and ±1-bin turn primitives.
pub fn default_primitives() -> Vec<MotionPrimitive> {
    vec![
        MotionPrimitive::new("forward", 0.10, 0.0, 0, 0.1),
        MotionPrimitive::new("diag_left", 0.10, 0.05, 0, 0.15),
        MotionPrimitive::new("diag_right", 0.10, -0.05, 0, 0.15),
        MotionPrimitive::new("left", 0.0, 0.05, 0, 0.3),
        MotionPrimitive::new("right", 0.0, -0.05, 0, 0.3),
        MotionPrimitive::new("turn_left", 0.0, 0.0, 1, 0.2),
        MotionPrimitive::new("turn_right", 0.0, 0.0, -1, 0.2),
    ]
}

/// Parse a primitive table. Each non-comment line holds
/// `id dx dy dtheta_deg action_cost` followed by either nothing (default
/// regions) or four `ox oy length width` groups in leg order LF RF LH RH.
pub fn parse_primitives(text: &str, lattice: &Lattice) -> Result<Vec<MotionPrimitive>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| BodyPlanError::Table { line: i + 1, msg };
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 5 && tok.len() != 21 {
            return Err(err(format!("expected 5 or 21 fields, got {}", tok.len())));
        }
        let nums = tok[1..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|e| err(format!("{t}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        let bins = nums[2].to_radians() / lattice.heading_step();
        if (bins - bins.round()).abs() > 1e-9 {
            return Err(err(format!("heading change {} is not a multiple of the bin", nums[2])));
        }
        let mut p = MotionPrimitive::new(tok[0], nums[0], nums[1], bins.round() as i32, nums[3]);
        if nums.len() == 20 {
            for (k, r) in p.regions.iter_mut().enumerate() {
                let g = &nums[4 + 4 * k..8 + 4 * k];
                *r = FootRegion::new(Vec2::new(g[0], g[1]), g[2], g[3]);
            }
        }
        p.validate(lattice).map_err(err)?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyCostWeights {
    pub terrain: f64,
    pub action: f64,
    pub collision: f64,
    pub orientation: f64,
}

impl Default for BodyCostWeights {
    fn default() -> Self {
        Self {
            terrain: 1.0,
            action: 0.3,
            collision: 1.0,
            orientation: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyPlannerConfig {
    pub lattice: Lattice,
    pub stance: StanceGeometry,
    pub weights: BodyCostWeights,
    /// Number of best cells averaged per footstep region.
    pub n_best: usize,
    /// Length of the shin-collision band behind each region.
    pub shin_band: f64,
    /// Regions whose best cell is above this cost make the edge infinite.
    pub max_region_cost: f64,
    /// Optional window restricting body positions, in addition to the costmap.
    pub search_bounds: Option<Rect>,
}

impl Default for BodyPlannerConfig {
    fn default() -> Self {
        Self {
            lattice: Lattice::default(),
            stance: StanceGeometry::default(),
            weights: BodyCostWeights::default(),
            n_best: 5,
            shin_band: 0.10,
            max_region_cost: 0.8,
            search_bounds: None,
        }
    }
}

impl BodyPlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let bad = |m: &str| Err(BodyPlanError::InvalidConfig(m.into()));
        if ![w.terrain, w.action, w.collision, w.orientation]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite())
        {
            return bad("weights must be finite and non-negative");
        }
        if !(self.lattice.resolution > 0.0) || self.lattice.headings < 4 {
            return bad("lattice");
        }
        if self.n_best == 0 {
            return bad("n_best must be positive");
        }
        if !(self.shin_band >= 0.0) {
            return bad("shin band");
        }
        Ok(())
    }
}

/// World-frame footstep region of `leg` for a body at `xy` with yaw `theta`.
pub fn region_rect(
    stance: &StanceGeometry,
    leg: Leg,
    region: &FootRegion,
    xy: Vec2,
    theta: f64,
) -> OrientedRect {
    OrientedRect {
        center: xy + rotate(stance.offset(leg) + region.offset, theta),
        heading: theta,
        length: region.length,
        width: region.width,
    }
}

/// Band of length `band` directly behind `rect` along its heading, same width.
pub fn shin_band_rect(rect: &OrientedRect, band: f64) -> OrientedRect {
    OrientedRect {
        center: rect.center - rotate(Vec2::new((rect.length + band) / 2.0, 0.0), rect.heading),
        heading: rect.heading,
        length: band,
        width: rect.width,
    }
}

/// Mean positive height excess above `reference` over the known cells of the band.
pub fn shin_excess(terrain: &TerrainView, band: &OrientedRect, reference: f64) -> f64 {
    let hs: Vec<f64> = terrain.region(band).iter().filter_map(|c| c.height).collect();
    if hs.is_empty() {
        return 0.0;
    }
    hs.iter().map(|h| (h - reference).max(0.0)).sum::<f64>() / hs.len() as f64
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Individual body cost terms before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyCostTerms {
    pub terrain: f64,
    pub action: f64,
    pub collision: f64,
    pub orientation: f64,
}

impl BodyCostTerms {
    pub fn weighted(&self, w: &BodyCostWeights) -> f64 {
        w.terrain * self.terrain
            + w.action * self.action
            + w.collision * self.collision
            + w.orientation * self.orientation
    }
}

/// Cost terms of arriving at `next` with primitive `p`; `None` when any
/// footstep region is off the map or has no acceptable cell.
pub fn body_cost_terms(
    next: &BodyState,
    p: &MotionPrimitive,
    terrain: &TerrainView,
    cfg: &BodyPlannerConfig,
) -> Option<BodyCostTerms> {
    let xy = cfg.lattice.xy(next);
    let theta = cfg.lattice.theta(next);
    let (mut ct, mut cpc) = (0.0, 0.0);
    let mut feet = Vec::with_capacity(4);
    for leg in Leg::ALL {
        let rect = region_rect(&cfg.stance, leg, &p.regions[leg.index()], xy, theta);
        let cells: Vec<RegionCell> = terrain.region(&rect);
        let mut totals: Vec<f64> = cells.iter().map(|c| c.total).collect();
        totals.sort_by(f64::total_cmp);
        if totals.first().is_none_or(|t| *t > cfg.max_region_cost) {
            return None;
        }
        let k = cfg.n_best.min(totals.len());
        ct += totals[..k].iter().sum::<f64>() / k as f64;
        let mut hs: Vec<f64> = cells.iter().filter_map(|c| c.height).collect();
        let z = median(&mut hs)?;
        cpc += shin_excess(terrain, &shin_band_rect(&rect, cfg.shin_band), z);
        let f = xy + rotate(cfg.stance.offset(leg), theta);
        feet.push(Vec3::new(f.x, f.y, z));
    }
    let (roll, pitch) = fit_support_plane(&feet, theta).ok()?;
    Some(BodyCostTerms {
        terrain: ct / 4.0,
        action: p.action_cost,
        collision: cpc / 4.0,
        orientation: roll.abs() + pitch.abs(),
    })
}

/// Weighted, quantized edge cost; `+∞` for unusable edges.
pub fn body_cost(
    next: &BodyState,
    p: &MotionPrimitive,
    terrain: &TerrainView,
    cfg: &BodyPlannerConfig,
) -> f64 {
    body_cost_terms(next, p, terrain, cfg)
        .map(|t| quantize_cost(t.weighted(&cfg.weights)))
        .unwrap_or(f64::INFINITY)
}

/// `bound · ⌈dist / step⌉`.
pub fn heuristic(dist: f64, per_step_bound: f64, step_length: f64) -> f64 {
    assert!(step_length > 0.0, "step length must be positive");
    if dist <= 0.0 || per_step_bound == 0.0 {
        return 0.0;
    }
    per_step_bound * (dist / step_length).ceil()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Successor {
    pub state: BodyState,
    pub primitive: usize,
    pub cost: f64,
}

/// Goal set: within `position_tol` lattice cells and `heading_tol` bins of `state`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Goal {
    pub state: BodyState,
    pub position_tol: f64,
    pub heading_tol: u32,
}

impl Goal {
    pub fn new(state: BodyState) -> Self {
        Self {
            state,
            position_tol: 1.0,
            heading_tol: 1,
        }
    }
}

pub struct BodyPlanner<'a> {
    pub terrain: TerrainView<'a>,
    pub config: BodyPlannerConfig,
    pub primitives: Vec<MotionPrimitive>,
    per_step_bound: f64,
    step_length: f64,
}

impl<'a> BodyPlanner<'a> {
    pub fn new(
        terrain: TerrainView<'a>,
        config: BodyPlannerConfig,
        primitives: Vec<MotionPrimitive>,
    ) -> Result<Self> {
        config.validate()?;
        if primitives.is_empty() {
            return Err(BodyPlanError::InvalidConfig("no primitives".into()));
        }
        for p in &primitives {
            p.validate(&config.lattice).map_err(BodyPlanError::InvalidConfig)?;
        }
        let lat = config.lattice;
        let mut step_length: f64 = 0.0;
        let mut min_action = f64::INFINITY;
        for p in primitives.iter().filter(|p| p.translates()) {
            min_action = min_action.min(p.action_cost);
            let origin = BodyState { ix: 0, iy: 0, heading: 0 };
            for h in 0..lat.headings {
                let s = BodyState { heading: h, ..origin };
                step_length = step_length.max(lat.xy(&lat.apply(&s, p)).norm());
            }
        }
        let min_total = terrain
            .costs
            .cells()
            .iter()
            .map(|c| c.total)
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        let per_step_bound = if step_length > 0.0 {
            quantize_down(config.weights.action * min_action + config.weights.terrain * min_total)
                .max(0.0)
        } else {
            0.0
        };
        Ok(Self {
            terrain,
            config,
            primitives,
            per_step_bound,
            step_length: step_length.max(lat.resolution),
        })
    }

    pub fn per_step_bound(&self) -> f64 {
        self.per_step_bound
    }

    pub fn step_length(&self) -> f64 {
        self.step_length
    }

    pub fn on_map(&self, s: &BodyState) -> bool {
        let xy = self.config.lattice.xy(s);
        self.terrain.costs.spec().cell_of(xy).is_some()
            && self.config.search_bounds.is_none_or(|b| b.contains(xy))
    }

    /// Successors with finite cost, in primitive order.
    pub fn expand(&self, s: &BodyState) -> Vec<Successor> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let next = self.config.lattice.apply(s, p);
                if !self.on_map(&next) {
                    return None;
                }
                let cost = body_cost(&next, p, &self.terrain, &self.config);
                cost.is_finite().then_some(Successor {
                    state: next,
                    primitive: i,
                    cost,
                })
            })
            .collect()
    }

    pub fn in_goal(&self, s: &BodyState, goal: &Goal) -> bool {
        let d = Vec2::new((s.ix - goal.state.ix) as f64, (s.iy - goal.state.iy) as f64).norm();
        d <= goal.position_tol + 1e-9
            && self.config.lattice.heading_distance(s.heading, goal.state.heading) <= goal.heading_tol
    }

    /// Consistent cost-to-go estimate.
    pub fn heuristic(&self, s: &BodyState, goal: &Goal) -> f64 {
        let lat = &self.config.lattice;
        let d = (lat.xy(s) - lat.xy(&goal.state)).norm();
        let rest = d - goal.position_tol * lat.resolution - 1e-9;
        heuristic(rest, self.per_step_bound, self.step_length)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AraConfig {
    pub epsilon0: f64,
    /// Inflation factors tried after `epsilon0`, decreasing.
    pub schedule: Vec<f64>,
    /// Maximum number of state expansions over all iterations.
    pub max_expansions: usize,
}

impl Default for AraConfig {
    fn default() -> Self {
        Self {
            epsilon0: 2.0,
            schedule: vec![1.5, 1.0],
            max_expansions: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEdge {
    pub from: BodyState,
    pub to: BodyState,
    pub primitive: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Improvement {
    pub epsilon: f64,
    pub cost: f64,
    pub expansions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AraResult {
    pub edges: Vec<PathEdge>,
    pub cost: f64,
    /// Suboptimality bound of the returned path.
    pub epsilon: f64,
    pub improvements: Vec<Improvement>,
    pub expansions: usize,
}

impl AraResult {
    pub fn states(&self) -> Vec<BodyState> {
        let mut v: Vec<BodyState> = self.edges.iter().map(|e| e.from).collect();
        if let Some(e) = self.edges.last() {
            v.push(e.to);
        }
        v
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    key: f64,
    g: f64,
    seq: u64,
    state: BodyState,
}

impl PartialEq for Entry {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Entry {
    // Reversed so the max-heap pops the smallest (key, g, seq).
    fn cmp(&self, o: &Self) -> Ordering {
        o.key
            .total_cmp(&self.key)
            .then(o.g.total_cmp(&self.g))
            .then(o.seq.cmp(&self.seq))
    }
}

struct Search<'p, 'a> {
    planner: &'p BodyPlanner<'a>,
    goal: Goal,
    g: HashMap<BodyState, f64>,
    parent: HashMap<BodyState, (BodyState, usize, f64)>,
    succ_cache: HashMap<BodyState, Vec<Successor>>,
    heap: BinaryHeap<Entry>,
    open: HashSet<BodyState>,
    closed: HashSet<BodyState>,
    incons: HashSet<BodyState>,
    best_goal: Option<BodyState>,
    seq: u64,
    expansions: usize,
}

impl Search<'_, '_> {
    fn g(&self, s: &BodyState) -> f64 {
        self.g.get(s).copied().unwrap_or(f64::INFINITY)
    }

    fn goal_g(&self) -> f64 {
        self.best_goal.map_or(f64::INFINITY, |s| self.g(&s))
    }

    fn push(&mut self, s: BodyState, eps: f64) {
        let g = self.g(&s);
        let key = g + eps * self.planner.heuristic(&s, &self.goal);
        self.seq += 1;
        self.heap.push(Entry {
            key,
            g,
            seq: self.seq,
            state: s,
        });
        self.open.insert(s);
    }

    fn note_goal(&mut self, s: BodyState) {
        if self.planner.in_goal(&s, &self.goal) && self.g(&s) < self.goal_g() {
            self.best_goal = Some(s);
        }
    }

    /// One weighted search; returns false when the expansion budget ran out.
    fn improve_path(&mut self, eps: f64, budget: usize) -> bool {
        while let Some(top) = self.heap.peek().copied() {
            if !self.open.contains(&top.state) || top.g != self.g(&top.state) {
                self.heap.pop();
                continue;
            }
            if self.goal_g() <= top.key {
                return true;
            }
            if self.expansions >= budget {
                return false;
            }
            self.heap.pop();
            let s = top.state;
            self.open.remove(&s);
            self.closed.insert(s);
            self.expansions += 1;
            let gs = self.g(&s);
            let succs = match self.succ_cache.get(&s) {
                Some(v) => v.clone(),
                None => {
                    let v = self.planner.expand(&s);
                    self.succ_cache.insert(s, v.clone());
                    v
                }
            };
            for e in succs {
                let cand = gs + e.cost;
                if cand < self.g(&e.state) {
                    self.g.insert(e.state, cand);
                    self.parent.insert(e.state, (s, e.primitive, e.cost));
                    self.note_goal(e.state);
                    if self.closed.contains(&e.state) {
                        self.incons.insert(e.state);
                    } else {
                        self.push(e.state, eps);
                    }
                }
            }
        }
        true
    }

    fn rebuild_open(&mut self, eps: f64) {
        let mut states: Vec<BodyState> = self.open.drain().chain(self.incons.drain()).collect();
        states.sort();
        states.dedup();
        self.heap.clear();
        self.closed.clear();
        for s in states {
            self.push(s, eps);
        }
    }

    /// `g(goal) / min (g + h)` over OPEN ∪ INCONS, capped by `eps`.
    fn achieved_epsilon(&self, eps: f64) -> f64 {
        let gg = self.goal_g();
        let lb = self
            .open
            .iter()
            .chain(self.incons.iter())
            .map(|s| self.g(s) + self.planner.heuristic(s, &self.goal))
            .fold(f64::INFINITY, f64::min);
        if lb >= gg {
            1.0
        } else if lb > 0.0 {
            eps.min(gg / lb).max(1.0)
        } else {
            eps
        }
    }

    fn path(&self) -> Vec<PathEdge> {
        let mut edges = Vec::new();
        let Some(mut s) = self.best_goal else {
            return edges;
        };
        while let Some(&(p, prim, cost)) = self.parent.get(&s) {
            edges.push(PathEdge {
                from: p,
                to: s,
                primitive: prim,
                cost,
            });
            s = p;
        }
        edges.reverse();
        edges
    }
}

/// Anytime repairing A*. Each improvement's cost is within its ε of the optimum.
pub fn ara_star(
    planner: &BodyPlanner,
    start: BodyState,
    goal: Goal,
    cfg: &AraConfig,
) -> Result<AraResult> {
    if !(cfg.epsilon0 >= 1.0) || cfg.schedule.iter().any(|e| !(*e >= 1.0)) {
        return Err(BodyPlanError::InvalidConfig("epsilon must be >= 1".into()));
    }
    if cfg.schedule.windows(2).any(|w| w[1] > w[0]) || cfg.schedule.first().is_some_and(|e| *e > cfg.epsilon0) {
        return Err(BodyPlanError::InvalidConfig("epsilon schedule must decrease".into()));
    }
    if !planner.on_map(&start) {
        return Err(BodyPlanError::StartOffMap);
    }
    let mut search = Search {
        planner,
        goal,
        g: HashMap::new(),
        parent: HashMap::new(),
        succ_cache: HashMap::new(),
        heap: BinaryHeap::new(),
        open: HashSet::new(),
        closed: HashSet::new(),
        incons: HashSet::new(),
        best_goal: None,
        seq: 0,
        expansions: 0,
    };
    search.g.insert(start, 0.0);
    search.note_goal(start);
    search.push(start, cfg.epsilon0);

    let mut improvements: Vec<Improvement> = Vec::new();
    let mut best: Option<(Vec<PathEdge>, f64, f64)> = None;
    let schedule = std::iter::once(cfg.epsilon0).chain(cfg.schedule.iter().copied());
    for (i, eps) in schedule.enumerate() {
        if i > 0 {
            search.rebuild_open(eps);
        }
        let finished = search.improve_path(eps, cfg.max_expansions);
        if !finished {
            break;
        }
        let cost = search.goal_g();
        if !cost.is_finite() {
            return Err(BodyPlanError::NoPath { epsilon: eps });
        }
        let achieved = search.achieved_epsilon(eps);
        improvements.push(Improvement {
            epsilon: achieved,
            cost,
            expansions: search.expansions,
        });
        best = Some((search.path(), cost, achieved));
        if achieved <= 1.0 {
            break;
        }
    }
    match best {
        Some((edges, cost, epsilon)) => Ok(AraResult {
            edges,
            cost,
            epsilon,
            improvements,
            expansions: search.expansions,
        }),
        None => Err(BodyPlanError::NoPath {
            epsilon: cfg.epsilon0,
        }),
    }
}
