//! Per-cell terrain features: windowed neighborhoods, PCA surface
//! estimates and the piecewise feature cost functions.

use super::{HeightMap, Result, TerrainError};
use crate::geom::Vec3;
use nalgebra::{Matrix3, SymmetricEigen};

/// Log-barrier cost parameters for a non-negative feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureParams {
    pub f_flat: f64,
    pub f_max: f64,
    pub t_max: f64,
}

impl FeatureParams {
    pub fn height_deviation() -> Self {
        Self {
            f_flat: 0.01,
            f_max: 0.06,
            t_max: 1.0,
        }
    }

    pub fn slope() -> Self {
        Self {
            f_flat: 1f64.to_radians(),
            f_max: 70f64.to_radians(),
            t_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.f_flat && self.f_flat < self.f_max && self.t_max > 0.0) {
            return Err(TerrainError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureParams {
    pub c_crack: f64,
    pub c_mild_lo: f64,
    pub c_mild_hi: f64,
    pub c_max: f64,
    pub t_max: f64,
}

impl Default for CurvatureParams {
    fn default() -> Self {
        Self {
            c_crack: -6.0,
            c_mild_lo: 6.0,
            c_mild_hi: 9.0,
            c_max: 9.0,
            t_max: 1.0,
        }
    }
}

impl CurvatureParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.c_crack < self.c_mild_lo
            && self.c_mild_lo < self.c_mild_hi
            && self.c_mild_hi <= self.c_max
            && self.t_max > 0.0;
        if !ok {
            return Err(TerrainError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Affine map from signed surface variation to curvature-feature units: `c = a·σ + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureMap {
    pub a: f64,
    pub b: f64,
}

impl Default for CurvatureMap {
    fn default() -> Self {
        // b places planar patches (σ = 0) in the zero-cost mild band.
        Self { a: 27.0, b: 7.5 }
    }
}

impl CurvatureMap {
    pub fn apply(&self, signed_sigma: f64) -> f64 {
        self.a * signed_sigma + self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceEstimate {
    /// Unit normal with non-negative z component.
    pub normal: Vec3,
    /// Surface variation λ0 / (λ0 + λ1 + λ2).
    pub curvature: f64,
    /// Ascending covariance eigenvalues.
    pub eigenvalues: [f64; 3],
    pub centroid: Vec3,
}

impl SurfaceEstimate {
    /// Angle between the normal and the vertical.
    pub fn slope(&self) -> f64 {
        self.normal.z.clamp(-1.0, 1.0).acos()
    }

    /// Curvature signed negative when `query` lies above the centroid along
    /// the normal (locally convex surface).
    pub fn signed_curvature(&self, query: &Vec3) -> f64 {
        if (query - self.centroid).dot(&self.normal) > 1e-12 {
            -self.curvature
        } else {
            self.curvature
        }
    }
}

/// Valid cell centres (x, y, z) within the axis-aligned `window` centred on `cell`.
pub fn neighborhood(hm: &HeightMap, cell: (usize, usize), window: f64) -> Result<Vec<Vec3>> {
    let spec = hm.spec();
    let (cx, cy) = spec.check_cell(cell.0 as i64, cell.1 as i64)?;
    if !(window >= spec.resolution) {
        return Err(TerrainError::InvalidParams(format!(
            "window {window} smaller than resolution {}",
            spec.resolution
        )));
    }
    let k = (window / 2.0 / spec.resolution + 1e-9).floor() as i64;
    let mut pts = Vec::with_capacity(((2 * k + 1) * (2 * k + 1)) as usize);
    for dy in -k..=k {
        let iy = cy as i64 + dy;
        if iy < 0 || iy as usize >= spec.ny {
            continue;
        }
        for dx in -k..=k {
            let ix = cx as i64 + dx;
            if ix < 0 || ix as usize >= spec.nx {
                continue;
            }
            let (ix, iy) = (ix as usize, iy as usize);
            if let Some(z) = hm.height(ix, iy) {
                let c = spec.cell_center(ix, iy);
                pts.push(Vec3::new(c.x, c.y, z));
            }
        }
    }
    Ok(pts)
}

/// PCA of the centred point covariance.
pub fn estimate_surface(points: &[Vec3]) -> Result<SurfaceEstimate> {
    if points.len() < 3 {
        return Err(TerrainError::DegenerateNeighborhood("fewer than 3 points"));
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lam = order.map(|i| eig.eigenvalues[i]);
    let scale = lam[2].abs().max(f64::MIN_POSITIVE);
    if lam[2] <= 0.0 || lam[1] <= 1e-12 * scale {
        return Err(TerrainError::DegenerateNeighborhood("rank < 2"));
    }
    let lam0 = lam[0].max(0.0);
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
    normal /= normal.norm();
    if normal.z < 0.0 {
        normal = -normal;
    }
    let curvature = lam0 / (lam0 + lam[1] + lam[2]);
    Ok(SurfaceEstimate {
        normal,
        curvature,
        eigenvalues: [lam0, lam[1], lam[2]],
        centroid,
    })
}

/// Log-barrier feature cost, zero up to `f_flat` and saturating at `t_max`.
pub fn feature_cost(f: f64, p: &FeatureParams) -> f64 {
    if f <= p.f_flat {
        0.0
    } else if f >= p.f_max {
        p.t_max
    } else {
        let u = (f - p.f_flat) / (p.f_max - p.f_flat);
        (-(1.0 - u).ln()).clamp(0.0, p.t_max)
    }
}

/// Piecewise curvature cost. Values between the crack barrier and the mild
/// band are not clamped and may exceed `t_max`.
pub fn curvature_cost(c: f64, p: &CurvatureParams) -> f64 {
    if c <= p.c_crack || c >= p.c_mild_hi {
        p.t_max
    } else if c >= p.c_mild_lo {
        0.0
    } else {
        p.t_max - ((c - p.c_crack) / (p.c_max - p.c_crack)).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::terrain::GridSpec;

    #[test]
    fn window_arithmetic() {
        let spec = GridSpec::new(Vec2::zeros(), 0.02, 10, 10, 0.01).unwrap();
        let mut hm = HeightMap::flat(spec, 0.0);
        assert_eq!(neighborhood(&hm, (5, 5), 0.06).unwrap().len(), 9);
        assert_eq!(neighborhood(&hm, (5, 5), 0.02).unwrap().len(), 1);
        assert_eq!(neighborhood(&hm, (0, 0), 0.06).unwrap().len(), 4);
        hm.set(4, 4, None);
        hm.set(4, 5, None);
        assert_eq!(neighborhood(&hm, (5, 5), 0.06).unwrap().len(), 7);
        assert!(neighborhood(&hm, (10, 0), 0.06).is_err());
    }

    #[test]
    fn feature_anchor_points() {
        let hd = FeatureParams::height_deviation();
        assert_eq!(feature_cost(0.005, &hd), 0.0);
        assert_eq!(feature_cost(0.06, &hd), 1.0);
        assert!((feature_cost(0.035, &hd) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn curvature_branches() {
        let p = CurvatureParams::default();
        assert_eq!(curvature_cost(7.0, &p), 0.0);
        assert_eq!(curvature_cost(-7.0, &p), 1.0);
        assert_eq!(curvature_cost(12.0, &p), 1.0);
        assert!((curvature_cost(0.0, &p) - (1.0 - (6.0f64 / 15.0).ln())).abs() < 1e-12);
    }

    #[test]
    fn horizontal_plane() {
        let pts: Vec<Vec3> = (0..9)
            .map(|i| Vec3::new((i % 3) as f64 * 0.02, (i / 3) as f64 * 0.02, 0.3))
            .collect();
        let s = estimate_surface(&pts).unwrap();
        assert!((s.normal - Vec3::z()).norm() < 1e-12);
        assert!(s.curvature.abs() < 1e-12);
    }

    #[test]
    fn degenerate_sets() {
        let two = [Vec3::zeros(), Vec3::x()];
        assert!(estimate_surface(&two).is_err());
        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(estimate_surface(&line).is_err());
    }
}
