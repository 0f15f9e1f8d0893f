#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use terraplan::body_planner::{
    BodyPlanner, BodyPlannerConfig, BodyState, FootRegion, Goal, MotionPrimitive,
};
use terraplan::geom::{StanceGeometry, Vec2, Vec3};
use terraplan::terrain::{build_costmap, CostMap, CostParams, GridSpec, HeightMap, Rect};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Blocky random terrain of 0.1 m tiles with some unknown tiles.
pub fn blocky_heightmap(r: &mut ChaCha8Rng, origin: Vec2, nx: usize, ny: usize, holes: f64) -> HeightMap {
    let spec = GridSpec::new(origin, 0.02, nx, ny, 0.001).unwrap();
    let tiles_x = nx / 5 + 1;
    let tiles_y = ny / 5 + 1;
    let tiles: Vec<Option<f64>> = (0..tiles_x * tiles_y)
        .map(|_| {
            if r.random::<f64>() < holes {
                None
            } else {
                Some(r.random_range(0.0..3.0f64).floor() * 0.02)
            }
        })
        .collect();
    let mut hm = HeightMap::unknown(spec);
    for iy in 0..ny {
        for ix in 0..nx {
            hm.set(ix, iy, tiles[(iy / 5) * tiles_x + ix / 5]);
        }
    }
    hm
}

/// A small planning instance on a 15×15 position lattice (0.05 m).
pub struct SmallInstance {
    pub hm: HeightMap,
    pub cm: CostMap,
    pub config: BodyPlannerConfig,
    pub primitives: Vec<MotionPrimitive>,
    pub start: BodyState,
    pub goal: Goal,
}

impl SmallInstance {
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let hm = blocky_heightmap(&mut r, Vec2::new(-0.2, -0.2), 58, 58, 0.08);
        let cm = build_costmap(&hm, &CostParams::default(), &Rect::of_grid(hm.spec())).unwrap();
        let mut config = BodyPlannerConfig::default();
        config.stance = StanceGeometry {
            length: 0.2,
            width: 0.15,
        };
        config.n_best = 3;
        config.max_region_cost = 0.95;
        config.search_bounds = Some(Rect::new(Vec2::new(-0.01, -0.01), Vec2::new(0.71, 0.71)));
        let region = FootRegion::new(Vec2::zeros(), 0.06, 0.06);
        let mut primitives = terraplan::body_planner::default_primitives();
        for p in &mut primitives {
            p.regions = [region; 4];
        }
        let lat = config.lattice;
        let start = BodyState {
            ix: r.random_range(0..3),
            iy: r.random_range(0..15),
            heading: r.random_range(0..lat.headings),
        };
        let goal = Goal::new(BodyState {
            ix: r.random_range(11..15),
            iy: r.random_range(0..15),
            heading: r.random_range(0..lat.headings),
        });
        Self {
            hm,
            cm,
            config,
            primitives,
            start,
            goal,
        }
    }

    pub fn planner(&self) -> BodyPlanner<'_> {
        BodyPlanner::new(
            terraplan::terrain::TerrainView::new(&self.hm, &self.cm),
            self.config.clone(),
            self.primitives.clone(),
        )
        .unwrap()
    }
}

fn key(c: f64) -> u64 {
    c.to_bits()
}

/// Plain Dijkstra from `start`; returns the cheapest cost of any goal state.
pub fn uniform_cost_search(p: &BodyPlanner, start: BodyState, goal: &Goal) -> Option<f64> {
    let mut dist: HashMap<BodyState, f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    dist.insert(start, 0.0);
    heap.push(Reverse((key(0.0), start)));
    while let Some(Reverse((k, s))) = heap.pop() {
        let d = f64::from_bits(k);
        if d > dist[&s] {
            continue;
        }
        if p.in_goal(&s, goal) {
            return Some(d);
        }
        for e in p.expand(&s) {
            let nd = d + e.cost;
            if dist.get(&e.state).is_none_or(|&o| nd < o) {
                dist.insert(e.state, nd);
                heap.push(Reverse((key(nd), e.state)));
            }
        }
    }
    None
}

/// Exact cost-to-go of every state on an `n×n` lattice by backward Dijkstra.
pub fn cost_to_go(p: &BodyPlanner, n: i32, goal: &Goal) -> HashMap<BodyState, f64> {
    let k = p.config.lattice.headings;
    let mut rev: HashMap<BodyState, Vec<(BodyState, f64)>> = HashMap::new();
    let mut all = Vec::new();
    for ix in 0..n {
        for iy in 0..n {
            for heading in 0..k {
                let s = BodyState { ix, iy, heading };
                if !p.on_map(&s) {
                    continue;
                }
                all.push(s);
                for e in p.expand(&s) {
                    rev.entry(e.state).or_default().push((s, e.cost));
                }
            }
        }
    }
    let mut dist: HashMap<BodyState, f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    for s in all.iter().filter(|s| p.in_goal(s, goal)) {
        dist.insert(*s, 0.0);
        heap.push(Reverse((key(0.0), *s)));
    }
    while let Some(Reverse((kk, s))) = heap.pop() {
        let d = f64::from_bits(kk);
        if d > dist[&s] {
            continue;
        }
        for (prev, c) in rev.get(&s).into_iter().flatten() {
            let nd = d + c;
            if dist.get(prev).is_none_or(|&o| nd < o) {
                dist.insert(*prev, nd);
                heap.push(Reverse((key(nd), *prev)));
            }
        }
    }
    dist
}

/// Exhaustive foothold argmin: scans every costmap cell, keeps the lowest
/// cost, then the smallest distance to the region centre, then the first in
/// row-major order.
pub fn brute_force_foothold(
    ctx: &terraplan::foothold::StepContext,
    tv: &terraplan::terrain::TerrainView,
    cfg: &terraplan::foothold::FootholdConfig,
) -> Option<(usize, usize)> {
    let spec = tv.costs.spec();
    let mut best: Option<(f64, f64, (usize, usize))> = None;
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            let c = spec.cell_center(ix, iy);
            if !ctx.region.contains(c) {
                continue;
            }
            let cost = terraplan::foothold::footstep_cost((ix, iy), ctx, tv, cfg);
            if !cost.is_finite() {
                continue;
            }
            let d = (c - ctx.region.center).norm();
            let better = match best {
                None => true,
                Some((bc, bd, _)) => cost < bc || (cost == bc && d < bd),
            };
            if better {
                best = Some((cost, d, (ix, iy)));
            }
        }
    }
    best.map(|b| b.2)
}

/// Foothold plan for `n` forward actions on flat ground at height 0.
pub fn flat_walk_plan(n: usize) -> terraplan::foothold::FootholdPlan {
    use terraplan::body_planner::{default_primitives, Lattice, PathEdge};
    let spec = GridSpec::new(Vec2::new(-1.0, -1.0), 0.02, 100 + 5 * n, 100, 0.001).unwrap();
    let hm = HeightMap::flat(spec, 0.0);
    let cm = build_costmap(&hm, &CostParams::default(), &Rect::of_grid(&spec)).unwrap();
    let tv = terraplan::terrain::TerrainView::new(&hm, &cm);
    let lat = Lattice::default();
    let prims = default_primitives();
    let start = BodyState { ix: 0, iy: 0, heading: 0 };
    let mut s = start;
    let mut path = Vec::new();
    for _ in 0..n {
        let t = lat.apply(&s, &prims[0]);
        path.push(PathEdge { from: s, to: t, primitive: 0, cost: 0.0 });
        s = t;
    }
    terraplan::foothold::plan_foothold_sequence(
        &start,
        &path,
        &prims,
        &lat,
        &tv,
        &terraplan::foothold::FootholdConfig::default(),
    )
    .unwrap()
}

/// 5-point Gauss–Legendre nodes and weights on [-1, 1].
pub const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// `∫₀ᵀ f` by 5-point Gauss–Legendre (exact for polynomials up to degree 9).
pub fn gauss_integral(t: f64, f: impl Fn(f64) -> f64) -> f64 {
    GAUSS5
        .iter()
        .map(|(x, w)| w * f(0.5 * t * (x + 1.0)))
        .sum::<f64>()
        * 0.5
        * t
}

/// Cyclic Jacobi eigen-solve of a symmetric 3×3 matrix. Returns ascending
/// eigenvalues and the matching unit eigenvectors.
pub fn jacobi_eigen(mut a: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..100 {
        let off: f64 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        if off < 1e-60 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut idx = [0, 1, 2];
    idx.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let vals = idx.map(|i| a[i][i]);
    let vecs = idx.map(|i| [v[0][i], v[1][i], v[2][i]]);
    (vals, vecs)
}

pub fn covariance(points: &[Vec3]) -> [[f64; 3]; 3] {
    let n = points.len() as f64;
    let mut m = [0.0; 3];
    for p in points {
        for k in 0..3 {
            m[k] += p[k] / n;
        }
    }
    let mut c = [[0.0; 3]; 3];
    for p in points {
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] += (p[i] - m[i]) * (p[j] - m[j]) / n;
            }
        }
    }
    c
}

pub fn random_patch(r: &mut impl Rng) -> Vec<Vec3> {
    let n = r.random_range(5..40);
    let (a, b) = (r.random_range(-1.5..1.5), r.random_range(-1.5..1.5));
    let noise = r.random_range(0.0..0.02);
    let c = Vec3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-1.0..1.0));
    (0..n)
        .map(|_| {
            let (x, y) = (r.random_range(-0.05..0.05), r.random_range(-0.05..0.05));
            c + Vec3::new(x, y, a * x + b * y + r.random_range(-1.0..1.0) * noise)
        })
        .collect()
}

/// RK4 integration of ẍ = ω²(x − p(t)) with a linear COP.
pub fn rk4(x0: Vec2, v0: Vec2, p0: Vec2, dp: Vec2, duration: f64, omega: f64, dt: f64) -> (Vec2, Vec2) {
    let w2 = omega * omega;
    let acc = |t: f64, x: Vec2| (x - (p0 + dp * (t / duration))) * w2;
    let (mut x, mut v, mut t) = (x0, v0, 0.0);
    let n = (duration / dt).round() as usize;
    let h = duration / n as f64;
    for _ in 0..n {
        let (k1x, k1v) = (v, acc(t, x));
        let (k2x, k2v) = (v + k1v * (h / 2.0), acc(t + h / 2.0, x + k1x * (h / 2.0)));
        let (k3x, k3v) = (v + k2v * (h / 2.0), acc(t + h / 2.0, x + k2x * (h / 2.0)));
        let (k4x, k4v) = (v + k3v * h, acc(t + h, x + k3x * h));
        x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
        v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        t += h;
    }
    (x, v)
}

/// Second derivative of the `k`-th basis function (`τ^(5-k)`) by finite rules.
pub fn basis_acc(k: usize, tau: f64) -> f64 {
    let p = 5 - k as i32;
    if p < 2 {
        0.0
    } else {
        (p * (p - 1)) as f64 * tau.powi(p - 2)
    }
}

pub fn re_evaluate(spline: &terraplan::com_spline::QuinticSpline, w: (f64, f64)) -> f64 {
    spline
        .segments
        .iter()
        .map(|s| {
            let acc = |c: &[f64; 6], tau: f64| (0..6).map(|k| c[k] * basis_acc(k, tau)).sum::<f64>();
            gauss_integral(s.duration, |tau| w.0 * acc(&s.x, tau).powi(2) + w.1 * acc(&s.y, tau).powi(2))
        })
        .sum()
}

/// Random blocky terrain with one step context over it, as used by the
/// exhaustive foothold checks.
pub fn random_step_case(seed: u64) -> (HeightMap, CostMap, terraplan::foothold::StepContext) {
    use terraplan::body_planner::{default_primitives, region_rect, Lattice};
    use terraplan::foothold::{FootholdConfig, StepContext};
    use terraplan::geom::{Leg, Vec3};
    let mut r = rng(seed);
    let hm = blocky_heightmap(&mut r, Vec2::new(-1.0, -1.0), 100, 100, 0.15);
    let cm = build_costmap(&hm, &CostParams::default(), &Rect::of_grid(hm.spec())).unwrap();
    let cfg = FootholdConfig::default();
    let prims = default_primitives();
    let prim = &prims[r.random_range(0..prims.len())];
    let body = BodyState { ix: r.random_range(-2..3), iy: r.random_range(-2..3), heading: r.random_range(0..16) };
    let legs = [Leg::LF, Leg::RH, Leg::RF, Leg::LH];
    let k = r.random_range(0..4);
    let lat = Lattice::default();
    let theta = lat.theta(&body);
    let feet = cfg.stance.footholds(lat.xy(&body), theta).map(|p| Vec3::new(p.x, p.y, hm.height_at(p).unwrap_or(0.0)));
    let ctx = StepContext {
        leg: legs[k],
        next_leg: legs[(k + 1) % 4],
        feet,
        heading: theta,
        region: region_rect(&cfg.stance, legs[k], &prim.regions[legs[k].index()], lat.xy(&body) + Vec2::new(0.1, 0.0), theta),
    };
    (hm, cm, ctx)
}

