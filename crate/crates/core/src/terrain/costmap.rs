//! Weighted, normalized foothold-risk costmap.

use super::features::{
    curvature_cost, estimate_surface, feature_cost, neighborhood, CurvatureMap, CurvatureParams,
    FeatureParams,
};
use super::{GridSpec, HeightMap, Result, TerrainError};
use crate::geom::{Vec2, Vec3};
use rayon::prelude::*;

/// Axis-aligned rectangle in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Rectangle covering the whole grid.
    pub fn of_grid(spec: &GridSpec) -> Self {
        Self::new(spec.origin, spec.max_corner())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    /// Weights of (height deviation, slope, curvature).
    pub weights: [f64; 3],
    pub height_dev: FeatureParams,
    pub slope: FeatureParams,
    pub curvature: CurvatureParams,
    pub curvature_map: CurvatureMap,
    pub height_window: f64,
    /// Window for the PCA neighborhood (slope and curvature).
    pub surface_window: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            weights: [1.0, 1.0, 1.0],
            height_dev: FeatureParams::height_deviation(),
            slope: FeatureParams::slope(),
            curvature: CurvatureParams::default(),
            curvature_map: CurvatureMap::default(),
            height_window: 0.06,
            surface_window: 0.06,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(*w >= 0.0)) || !self.weights.iter().any(|w| *w > 0.0) {
            return Err(TerrainError::InvalidParams(format!("weights {:?}", self.weights)));
        }
        self.height_dev.validate()?;
        self.slope.validate()?;
        self.curvature.validate()?;
        if !(self.height_window > 0.0 && self.surface_window > 0.0) {
            return Err(TerrainError::InvalidParams("window sizes".into()));
        }
        Ok(())
    }

    fn normalizer(&self) -> f64 {
        self.weights[0] * self.height_dev.t_max
            + self.weights[1] * self.slope.t_max
            + self.weights[2] * self.curvature.t_max
    }

    /// Largest number of cells a feature window reaches from its centre.
    pub fn reach_cells(&self, resolution: f64) -> usize {
        let w = self.height_window.max(self.surface_window);
        (w / 2.0 / resolution + 1e-9).floor() as usize
    }
}

/// Per-cell feature values and costs. Raw features are NaN when the cell
/// or its neighborhood could not support an estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellCost {
    pub height_dev: f64,
    pub slope: f64,
    pub curvature: f64,
    pub costs: [f64; 3],
    pub total: f64,
    pub known: bool,
}

impl CellCost {
    fn unknown() -> Self {
        Self {
            height_dev: f64::NAN,
            slope: f64::NAN,
            curvature: f64::NAN,
            costs: [f64::NAN; 3],
            total: 1.0,
            known: false,
        }
    }
}

/// Costmap over a sub-grid of a heightmap.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    spec: GridSpec,
    /// Offset of this grid's cell (0, 0) in the source heightmap.
    offset: (usize, usize),
    cells: Vec<CellCost>,
    params: CostParams,
}

fn evaluate_cell(hm: &HeightMap, ix: usize, iy: usize, p: &CostParams) -> CellCost {
    let Some(z) = hm.height(ix, iy) else {
        return CellCost::unknown();
    };
    let mut out = CellCost::unknown();
    out.known = true;

    let hpts = neighborhood(hm, (ix, iy), p.height_window).unwrap_or_default();
    let spts = neighborhood(hm, (ix, iy), p.surface_window).unwrap_or_default();
    if hpts.len() < 3 || spts.len() < 3 {
        return out;
    }
    let n = hpts.len() as f64;
    let mean = hpts.iter().map(|q| q.z).sum::<f64>() / n;
    let var = hpts.iter().map(|q| (q.z - mean).powi(2)).sum::<f64>() / n;
    out.height_dev = var.sqrt();

    let Ok(surface) = estimate_surface(&spts) else {
        return out;
    };
    let c = hm.spec().cell_center(ix, iy);
    let query = Vec3::new(c.x, c.y, z);
    out.slope = surface.slope();
    out.curvature = p.curvature_map.apply(surface.signed_curvature(&query));

    out.costs = [
        feature_cost(out.height_dev, &p.height_dev),
        feature_cost(out.slope, &p.slope),
        curvature_cost(out.curvature, &p.curvature),
    ];
    let weighted: f64 = out.costs.iter().zip(p.weights).map(|(c, w)| c * w).sum();
    out.total = (weighted / p.normalizer()).clamp(0.0, 1.0);
    out
}

/// Compute features and normalized totals for every cell whose centre lies in `aoi`.
/// Unknown cells and cells without enough support get total 1.
pub fn build_costmap(hm: &HeightMap, params: &CostParams, aoi: &Rect) -> Result<CostMap> {
    params.validate()?;
    let src = hm.spec();
    let inside = |i: usize, lo: f64, hi: f64, origin: f64| {
        let c = origin + (i as f64 + 0.5) * src.resolution;
        c >= lo && c <= hi
    };
    let xs: Vec<usize> = (0..src.nx)
        .filter(|&i| inside(i, aoi.min.x, aoi.max.x, src.origin.x))
        .collect();
    let ys: Vec<usize> = (0..src.ny)
        .filter(|&i| inside(i, aoi.min.y, aoi.max.y, src.origin.y))
        .collect();
    let (Some(&x0), Some(&y0)) = (xs.first(), ys.first()) else {
        return Err(TerrainError::EmptyAoi);
    };
    let (nx, ny) = (xs.len(), ys.len());
    let spec = GridSpec {
        origin: src.origin + Vec2::new(x0 as f64, y0 as f64) * src.resolution,
        nx,
        ny,
        ..*src
    };
    let cells: Vec<CellCost> = (0..nx * ny)
        .into_par_iter()
        .map(|i| evaluate_cell(hm, x0 + i % nx, y0 + i / nx, params))
        .collect();
    Ok(CostMap {
        spec,
        offset: (x0, y0),
        cells,
        params: *params,
    })
}

/// Recompute the cells affected by edits to the listed heightmap cells.
pub fn update_costmap(cm: &mut CostMap, hm: &HeightMap, edited: &[(usize, usize)]) {
    let reach = cm.params.reach_cells(cm.spec.resolution) as i64;
    let (ox, oy) = (cm.offset.0 as i64, cm.offset.1 as i64);
    let (nx, ny) = (cm.spec.nx as i64, cm.spec.ny as i64);
    let mut dirty = vec![false; cm.cells.len()];
    for &(ex, ey) in edited {
        let (lx, ly) = (ex as i64 - ox, ey as i64 - oy);
        for y in (ly - reach).max(0)..=(ly + reach).min(ny - 1) {
            for x in (lx - reach).max(0)..=(lx + reach).min(nx - 1) {
                dirty[(y * nx + x) as usize] = true;
            }
        }
    }
    let params = cm.params;
    let offset = cm.offset;
    let n = cm.spec.nx;
    cm.cells
        .par_iter_mut()
        .enumerate()
        .filter(|(i, _)| dirty[*i])
        .for_each(|(i, cell)| {
            *cell = evaluate_cell(hm, offset.0 + i % n, offset.1 + i / n, &params);
        });
}

impl CostMap {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn params(&self) -> &CostParams {
        &self.params
    }

    pub fn weights(&self) -> [f64; 3] {
        self.params.weights
    }

    /// True when no cell in the area of interest has a known height.
    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|c| c.known)
    }

    pub fn cell(&self, ix: usize, iy: usize) -> &CellCost {
        &self.cells[self.spec.index(ix, iy)]
    }

    pub fn cells(&self) -> &[CellCost] {
        &self.cells
    }

    pub fn total(&self, ix: usize, iy: usize) -> f64 {
        self.cell(ix, iy).total
    }

    /// Total cost at `xy`; positions off the map count as maximally risky.
    pub fn total_at(&self, xy: Vec2) -> f64 {
        match self.spec.cell_of(xy) {
            Some((ix, iy)) => self.total(ix, iy),
            None => 1.0,
        }
    }

    /// Heightmap cell corresponding to a costmap cell.
    pub fn source_cell(&self, ix: usize, iy: usize) -> (usize, usize) {
        (ix + self.offset.0, iy + self.offset.1)
    }

    pub fn max_total(&self) -> f64 {
        self.cells.iter().map(|c| c.total).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(nx: usize, ny: usize) -> GridSpec {
        GridSpec::new(Vec2::zeros(), 0.02, nx, ny, 0.01).unwrap()
    }

    #[test]
    fn flat_is_free() {
        let hm = HeightMap::flat(spec(20, 20), 0.3);
        let cm = build_costmap(&hm, &CostParams::default(), &Rect::of_grid(hm.spec())).unwrap();
        assert!(cm.cells().iter().all(|c| c.total == 0.0));
    }

    #[test]
    fn aoi_selects_sub_grid() {
        let hm = HeightMap::flat(spec(20, 20), 0.0);
        let aoi = Rect::new(Vec2::new(0.1, 0.1), Vec2::new(0.2, 0.3));
        let cm = build_costmap(&hm, &CostParams::default(), &aoi).unwrap();
        assert_eq!((cm.spec().nx, cm.spec().ny), (5, 10));
        assert_eq!(cm.source_cell(0, 0), (5, 5));
        assert_eq!(cm.spec().cell_center(0, 0), hm.spec().cell_center(5, 5));
        let far = Rect::new(Vec2::new(5.0, 5.0), Vec2::new(6.0, 6.0));
        assert!(matches!(
            build_costmap(&hm, &CostParams::default(), &far),
            Err(TerrainError::EmptyAoi)
        ));
    }

    #[test]
    fn unknown_area_is_empty_and_risky() {
        let hm = HeightMap::unknown(spec(6, 6));
        let cm = build_costmap(&hm, &CostParams::default(), &Rect::of_grid(hm.spec())).unwrap();
        assert!(cm.is_empty());
        assert!(cm.cells().iter().all(|c| c.total == 1.0));
    }

    #[test]
    fn rejects_zero_weights() {
        let hm = HeightMap::flat(spec(4, 4), 0.0);
        let p = CostParams {
            weights: [0.0; 3],
            ..Default::default()
        };
        assert!(build_costmap(&hm, &p, &Rect::of_grid(hm.spec())).is_err());
    }

    #[test]
    fn off_map_total_is_one() {
        let hm = HeightMap::flat(spec(4, 4), 0.0);
        let cm = build_costmap(&hm, &CostParams::default(), &Rect::of_grid(hm.spec())).unwrap();
        assert_eq!(cm.total_at(Vec2::new(-1.0, 0.0)), 1.0);
    }
}
