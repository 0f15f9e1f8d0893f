//! 2.5D heightmaps and the terrain costmap pipeline.

mod costmap;
mod features;
mod io;

pub use costmap::{build_costmap, update_costmap, CellCost, CostMap, CostParams, Rect};
pub use features::{
    curvature_cost, estimate_surface, feature_cost, neighborhood, CurvatureMap, CurvatureParams,
    FeatureParams, SurfaceEstimate,
};
pub use io::{read_heightmap, write_costmap_csv, write_heightmap};

use crate::geom::{OrientedRect, Vec2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TerrainError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("cell ({0}, {1}) is outside the grid")]
    CellOutOfBounds(i64, i64),
    #[error("position ({0:.4}, {1:.4}) is outside the grid")]
    OutOfBounds(f64, f64),
    #[error("cell ({0}, {1}) has no height")]
    UnknownCell(usize, usize),
    #[error("degenerate neighborhood ({0})")]
    DegenerateNeighborhood(&'static str),
    #[error("area of interest does not intersect the grid")]
    EmptyAoi,
    #[error("invalid cost parameters: {0}")]
    InvalidParams(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TerrainError>;

/// Regular grid geometry. Cell `(ix, iy)` covers
/// `[origin + i·res, origin + (i+1)·res)` on each axis; storage is row-major in `iy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Vec2,
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    pub z_resolution: f64,
}

impl GridSpec {
    pub fn new(origin: Vec2, resolution: f64, nx: usize, ny: usize, z_resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(TerrainError::InvalidGrid(format!("resolution {resolution}")));
        }
        if !(z_resolution > 0.0 && z_resolution.is_finite()) {
            return Err(TerrainError::InvalidGrid(format!("z resolution {z_resolution}")));
        }
        if nx == 0 || ny == 0 {
            return Err(TerrainError::InvalidGrid(format!("dims {nx}x{ny}")));
        }
        if !(origin.x.is_finite() && origin.y.is_finite()) {
            return Err(TerrainError::InvalidGrid("non-finite origin".into()));
        }
        Ok(Self {
            origin,
            resolution,
            nx,
            ny,
            z_resolution,
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (ix as f64 + 0.5) * self.resolution,
            self.origin.y + (iy as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell containing `xy`, if any.
    pub fn cell_of(&self, xy: Vec2) -> Option<(usize, usize)> {
        let fx = ((xy.x - self.origin.x) / self.resolution).floor();
        let fy = ((xy.y - self.origin.y) / self.resolution).floor();
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        (ix < self.nx && iy < self.ny).then_some((ix, iy))
    }

    pub fn check_cell(&self, ix: i64, iy: i64) -> Result<(usize, usize)> {
        if ix < 0 || iy < 0 || ix as usize >= self.nx || iy as usize >= self.ny {
            Err(TerrainError::CellOutOfBounds(ix, iy))
        } else {
            Ok((ix as usize, iy as usize))
        }
    }

    /// Cells whose centres lie inside `rect`, in row-major order.
    pub fn cells_in(&self, rect: &OrientedRect) -> Vec<(usize, usize)> {
        let corners = rect.corners();
        let (mut lo, mut hi) = (corners[0], corners[0]);
        for c in &corners[1..] {
            lo = lo.inf(c);
            hi = hi.sup(c);
        }
        let to_idx = |v: f64, o: f64, n: usize| -> (i64, i64) {
            let a = ((v - o) / self.resolution - 0.5).floor() as i64;
            (a.max(0), (n as i64 - 1).min(a + 2))
        };
        let (x0, _) = to_idx(lo.x, self.origin.x, self.nx);
        let (_, x1) = to_idx(hi.x, self.origin.x, self.nx);
        let (y0, _) = to_idx(lo.y, self.origin.y, self.ny);
        let (_, y1) = to_idx(hi.y, self.origin.y, self.ny);
        let mut out = Vec::new();
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                let (ix, iy) = (ix as usize, iy as usize);
                if rect.contains(self.cell_center(ix, iy)) {
                    out.push((ix, iy));
                }
            }
        }
        out
    }

    pub fn max_corner(&self) -> Vec2 {
        self.origin + Vec2::new(self.nx as f64, self.ny as f64) * self.resolution
    }
}

/// Quantized elevation grid. Heights are stored as integer multiples of
/// `z_resolution`; `None` marks an unknown cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    spec: GridSpec,
    levels: Vec<Option<i32>>,
}

impl HeightMap {
    /// Grid with every cell unknown.
    pub fn unknown(spec: GridSpec) -> Self {
        Self {
            levels: vec![None; spec.len()],
            spec,
        }
    }

    /// Grid with every cell at height `z` (quantized).
    pub fn flat(spec: GridSpec, z: f64) -> Self {
        let mut hm = Self::unknown(spec);
        let level = hm.quantize(z);
        hm.levels.iter_mut().for_each(|l| *l = level);
        hm
    }

    /// Build from a height function of the cell centre; non-finite values are unknown.
    pub fn from_fn(spec: GridSpec, f: impl Fn(Vec2) -> f64) -> Self {
        let mut hm = Self::unknown(spec);
        for iy in 0..spec.ny {
            for ix in 0..spec.nx {
                let z = f(spec.cell_center(ix, iy));
                hm.set(ix, iy, z.is_finite().then_some(z));
            }
        }
        hm
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    fn quantize(&self, z: f64) -> Option<i32> {
        let q = (z / self.spec.z_resolution).round();
        (q.is_finite() && q.abs() < i32::MAX as f64).then_some(q as i32)
    }

    /// Set a cell height (quantized) or mark it unknown with `None`.
    pub fn set(&mut self, ix: usize, iy: usize, z: Option<f64>) {
        let i = self.spec.index(ix, iy);
        self.levels[i] = z.and_then(|z| self.quantize(z));
    }

    pub fn level(&self, ix: usize, iy: usize) -> Option<i32> {
        self.levels[self.spec.index(ix, iy)]
    }

    /// Stored height of cell `(ix, iy)`, `None` when unknown.
    pub fn height(&self, ix: usize, iy: usize) -> Option<f64> {
        self.level(ix, iy).map(|l| l as f64 * self.spec.z_resolution)
    }

    pub fn is_valid(&self, ix: usize, iy: usize) -> bool {
        self.level(ix, iy).is_some()
    }

    /// Height of the cell containing `xy`.
    pub fn height_at(&self, xy: Vec2) -> Result<f64> {
        let (ix, iy) = self
            .spec
            .cell_of(xy)
            .ok_or(TerrainError::OutOfBounds(xy.x, xy.y))?;
        self.height(ix, iy).ok_or(TerrainError::UnknownCell(ix, iy))
    }

    pub fn known_count(&self) -> usize {
        self.levels.iter().filter(|l| l.is_some()).count()
    }
}

/// A heightmap together with a costmap built from it.
#[derive(Debug, Clone, Copy)]
pub struct TerrainView<'a> {
    pub heights: &'a HeightMap,
    pub costs: &'a CostMap,
}

impl<'a> TerrainView<'a> {
    pub fn new(heights: &'a HeightMap, costs: &'a CostMap) -> Self {
        Self { heights, costs }
    }

    /// Height of a costmap cell, `None` when unknown.
    pub fn cell_height(&self, ix: usize, iy: usize) -> Option<f64> {
        let (sx, sy) = self.costs.source_cell(ix, iy);
        self.heights.height(sx, sy)
    }

    /// Costmap cells inside `rect` with their centre, total cost and height.
    pub fn region(&self, rect: &OrientedRect) -> Vec<RegionCell> {
        let spec = self.costs.spec();
        spec.cells_in(rect)
            .into_iter()
            .map(|(ix, iy)| RegionCell {
                cell: (ix, iy),
                center: spec.cell_center(ix, iy),
                total: self.costs.total(ix, iy),
                height: self.cell_height(ix, iy),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionCell {
    pub cell: (usize, usize),
    pub center: Vec2,
    pub total: f64,
    pub height: Option<f64>,
}
