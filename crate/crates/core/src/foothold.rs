//! Greedy foothold selection along a body-action path.

use crate::attitude::fit_support_plane;
use crate::body_planner::{region_rect, shin_band_rect, shin_excess, BodyState, Lattice, MotionPrimitive, PathEdge};
use crate::geom::{rotate, triangle_inradius, Leg, OrientedRect, StanceGeometry, Vec2, Vec3};
use crate::terrain::TerrainView;
use std::cmp::Ordering;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FootholdError {
    #[error("step {step}: footstep region of {leg} is off the map")]
    RegionOffMap { step: usize, leg: Leg },
    #[error("step {step}: no admissible foothold for {leg}")]
    NoAdmissibleCell { step: usize, leg: Leg },
    #[error("initial foothold of {0} has no terrain height")]
    UnknownInitialHeight(Leg),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, FootholdError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootstepWeights {
    pub terrain: f64,
    pub support: f64,
    pub collision: f64,
    pub orientation: f64,
}

impl Default for FootstepWeights {
    fn default() -> Self {
        Self {
            terrain: 1.0,
            support: 0.1,
            collision: 1.0,
            orientation: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FootholdConfig {
    pub weights: FootstepWeights,
    /// Offset added to the inradius in the support term.
    pub inradius_eps: f64,
    /// Cells above this total cost are never stepped on.
    pub max_cell_cost: f64,
    pub shin_band: f64,
    /// Swing order; one leg per body action, cycling.
    pub gait: Vec<Leg>,
    pub stance: StanceGeometry,
}

impl Default for FootholdConfig {
    fn default() -> Self {
        Self {
            weights: FootstepWeights::default(),
            inradius_eps: 0.01,
            max_cell_cost: 0.8,
            shin_band: 0.10,
            gait: vec![Leg::LF, Leg::RH, Leg::RF, Leg::LH],
            stance: StanceGeometry::default(),
        }
    }
}

impl FootholdConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if ![w.terrain, w.support, w.collision, w.orientation]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite())
        {
            return Err(FootholdError::InvalidConfig("weights must be finite and non-negative".into()));
        }
        if !(self.inradius_eps > 0.0) {
            return Err(FootholdError::InvalidConfig("inradius offset must be positive".into()));
        }
        if self.gait.is_empty() {
            return Err(FootholdError::InvalidConfig("empty gait".into()));
        }
        Ok(())
    }
}

/// Context of one foothold decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub leg: Leg,
    /// Leg that swings after `leg`; it is excluded from the support triangle.
    pub next_leg: Leg,
    /// Current feet, indexed by leg.
    pub feet: [Vec3; 4],
    pub heading: f64,
    /// World-frame search region.
    pub region: OrientedRect,
}

impl StepContext {
    fn support_feet(&self) -> Vec<Vec2> {
        Leg::ALL
            .iter()
            .filter(|l| **l != self.leg && **l != self.next_leg)
            .map(|l| self.feet[l.index()].xy())
            .collect()
    }

    fn inradius_with(&self, p: Vec2) -> f64 {
        let s = self.support_feet();
        match s.as_slice() {
            [a, b] => triangle_inradius(*a, *b, p),
            // Three remaining feet when the next leg is the same leg.
            [a, b, c] => triangle_inradius(*a, *b, *c)
                .max(triangle_inradius(*a, *b, p))
                .max(triangle_inradius(*b, *c, p))
                .max(triangle_inradius(*a, *c, p)),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootstepTerms {
    pub terrain: f64,
    pub support: f64,
    pub collision: f64,
    pub orientation: f64,
}

impl FootstepTerms {
    pub fn weighted(&self, w: &FootstepWeights) -> f64 {
        w.terrain * self.terrain
            + w.support * self.support
            + w.collision * self.collision
            + w.orientation * self.orientation
    }
}

/// Cell of the costmap closest to `p`.
fn nearest_cell_center(terrain: &TerrainView, p: Vec2) -> Vec2 {
    let spec = terrain.costs.spec();
    let f = |v: f64, o: f64, n: usize| {
        (((v - o) / spec.resolution).floor().max(0.0) as usize).min(n - 1)
    };
    spec.cell_center(f(p.x, spec.origin.x, spec.nx), f(p.y, spec.origin.y, spec.ny))
}

/// Cost terms of stepping on costmap cell `cell`; `None` if the cell is
/// banned, has no height, or the support geometry degenerates.
pub fn footstep_terms(
    cell: (usize, usize),
    ctx: &StepContext,
    terrain: &TerrainView,
    cfg: &FootholdConfig,
) -> Option<FootstepTerms> {
    let spec = terrain.costs.spec();
    if cell.0 >= spec.nx || cell.1 >= spec.ny {
        return None;
    }
    let t = terrain.costs.total(cell.0, cell.1);
    if !(t <= cfg.max_cell_cost) {
        return None;
    }
    let z = terrain.cell_height(cell.0, cell.1)?;
    let p = spec.cell_center(cell.0, cell.1);
    // Inradius is capped at its value for the cell nearest the region centre.
    let nominal = ctx.inradius_with(nearest_cell_center(terrain, ctx.region.center));
    let r = ctx.inradius_with(p).min(nominal);
    let support = 1.0 / (r + cfg.inradius_eps);

    let foot = OrientedRect {
        center: p,
        heading: ctx.heading,
        length: spec.resolution,
        width: ctx.region.width,
    };
    let collision = shin_excess(terrain, &shin_band_rect(&foot, cfg.shin_band), z);

    let mut pts: Vec<Vec3> = Leg::ALL
        .iter()
        .filter(|l| **l != ctx.leg)
        .map(|l| ctx.feet[l.index()])
        .collect();
    pts.push(Vec3::new(p.x, p.y, z));
    let (roll, pitch) = fit_support_plane(&pts, ctx.heading).ok()?;
    Some(FootstepTerms {
        terrain: t,
        support,
        collision,
        orientation: roll.abs() + pitch.abs(),
    })
}

/// Weighted footstep cost; `+∞` for inadmissible cells.
pub fn footstep_cost(
    cell: (usize, usize),
    ctx: &StepContext,
    terrain: &TerrainView,
    cfg: &FootholdConfig,
) -> f64 {
    footstep_terms(cell, ctx, terrain, cfg)
        .map(|t| t.weighted(&cfg.weights))
        .unwrap_or(f64::INFINITY)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Foothold {
    pub leg: Leg,
    pub cell: (usize, usize),
    pub position: Vec3,
    pub cost: f64,
}

/// Candidate ordering: cost, then distance to `center`, then row-major cell order.
pub fn candidate_order(a: (f64, f64, (usize, usize)), b: (f64, f64, (usize, usize))) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.total_cmp(&b.1))
        .then((a.2 .1, a.2 .0).cmp(&(b.2 .1, b.2 .0)))
}

/// Best cell of the context's region.
pub fn select_foothold(ctx: &StepContext, terrain: &TerrainView, cfg: &FootholdConfig, step: usize) -> Result<Foothold> {
    let spec = terrain.costs.spec();
    let cells = spec.cells_in(&ctx.region);
    if cells.is_empty() {
        return Err(FootholdError::RegionOffMap { step, leg: ctx.leg });
    }
    let best = cells
        .iter()
        .map(|&c| {
            let cost = footstep_cost(c, ctx, terrain, cfg);
            (cost, (spec.cell_center(c.0, c.1) - ctx.region.center).norm(), c)
        })
        .filter(|k| k.0.is_finite())
        .min_by(|a, b| candidate_order(*a, *b))
        .ok_or(FootholdError::NoAdmissibleCell { step, leg: ctx.leg })?;
    let (cost, _, cell) = best;
    let p = spec.cell_center(cell.0, cell.1);
    let z = terrain.cell_height(cell.0, cell.1).expect("admissible cells have a height");
    Ok(Foothold {
        leg: ctx.leg,
        cell,
        position: Vec3::new(p.x, p.y, z),
        cost,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FootStep {
    pub leg: Leg,
    pub position: Vec3,
    /// Index of the body state (along the path) the step was planned for.
    pub body_index: usize,
    pub action: String,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FootholdPlan {
    pub initial: [Vec3; 4],
    pub steps: Vec<FootStep>,
    pub body_states: Vec<BodyState>,
}

impl FootholdPlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Feet after the first `k` steps.
    pub fn stance_after(&self, k: usize) -> [Vec3; 4] {
        let mut feet = self.initial;
        for s in &self.steps[..k] {
            feet[s.leg.index()] = s.position;
        }
        feet
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,leg,x,y,z,action")?;
        for (i, s) in self.steps.iter().enumerate() {
            writeln!(
                w,
                "{},{},{:?},{:?},{:?},{}",
                i, s.leg, s.position.x, s.position.y, s.position.z, s.action
            )?;
        }
        Ok(())
    }
}

/// Nominal footholds of `s` with heights from the terrain.
pub fn initial_stance(
    s: &BodyState,
    lattice: &Lattice,
    stance: &StanceGeometry,
    terrain: &TerrainView,
) -> Result<[Vec3; 4]> {
    let xy = lattice.xy(s);
    let theta = lattice.theta(s);
    let mut out = [Vec3::zeros(); 4];
    for leg in Leg::ALL {
        let p = xy + rotate(stance.offset(leg), theta);
        let z = terrain
            .heights
            .height_at(p)
            .map_err(|_| FootholdError::UnknownInitialHeight(leg))?;
        out[leg.index()] = Vec3::new(p.x, p.y, z);
    }
    Ok(out)
}

/// One foothold per path edge, legs taken cyclically from the gait order,
/// each searched in its primitive's region around the edge's target state.
pub fn plan_foothold_sequence(
    start: &BodyState,
    path: &[PathEdge],
    primitives: &[MotionPrimitive],
    lattice: &Lattice,
    terrain: &TerrainView,
    cfg: &FootholdConfig,
) -> Result<FootholdPlan> {
    cfg.validate()?;
    let initial = initial_stance(start, lattice, &cfg.stance, terrain)?;
    let mut feet = initial;
    let mut steps = Vec::with_capacity(path.len());
    let mut body_states = vec![*start];
    for (k, e) in path.iter().enumerate() {
        let leg = cfg.gait[k % cfg.gait.len()];
        let next_leg = cfg.gait[(k + 1) % cfg.gait.len()];
        let prim = &primitives[e.primitive];
        let theta = lattice.theta(&e.to);
        let ctx = StepContext {
            leg,
            next_leg,
            feet,
            heading: theta,
            region: region_rect(&cfg.stance, leg, &prim.regions[leg.index()], lattice.xy(&e.to), theta),
        };
        let f = select_foothold(&ctx, terrain, cfg, k)?;
        feet[leg.index()] = f.position;
        steps.push(FootStep {
            leg,
            position: f.position,
            body_index: k + 1,
            action: prim.id.clone(),
            cost: f.cost,
        });
        body_states.push(e.to);
    }
    Ok(FootholdPlan {
        initial,
        steps,
        body_states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inradius_term_arithmetic() {
        let eps: f64 = 0.01;
        assert!((1.0 / (0.15 + eps) - 6.25).abs() < 1e-12);
        assert!((1.0 / (0.05 + eps) - 16.666_666_666_666_668).abs() < 1e-12);
    }

    #[test]
    fn candidate_order_tie_breaks() {
        let a = (1.0, 0.1, (3, 2));
        let b = (1.0, 0.1, (2, 3));
        assert_eq!(candidate_order(a, b), Ordering::Less);
        assert_eq!(candidate_order((1.0, 0.2, (0, 0)), a), Ordering::Greater);
        assert_eq!(candidate_order((0.5, 9.0, (9, 9)), a), Ordering::Less);
    }
}
