mod common;

use common::{covariance, jacobi_eigen, random_patch, rng};
use proptest::prelude::*;
use rand::Rng;
use terraplan::geom::{Vec2, Vec3};
use terraplan::terrain::*;

#[test]
fn pca_matches_jacobi_oracle() {
    let mut r = rng(11);
    for _ in 0..100 {
        let pts = random_patch(&mut r);
        let s = estimate_surface(&pts).unwrap();
        let (vals, vecs) = jacobi_eigen(covariance(&pts));
        let mut n = Vec3::from(vecs[0]);
        if n.z < 0.0 {
            n = -n;
        }
        let angle = n.normalize().dot(&s.normal).clamp(-1.0, 1.0).acos();
        assert!(angle <= 1e-7, "normal angle {angle}");
        let sigma = vals[0].max(0.0) / (vals[0].max(0.0) + vals[1] + vals[2]);
        assert!((sigma - s.curvature).abs() <= 1e-9);
    }
}

#[test]
fn coplanar_sets_have_zero_curvature() {
    let mut r = rng(12);
    for _ in 0..50 {
        let (a, b, c) = (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let pts: Vec<Vec3> = (0..12)
            .map(|_| {
                let (x, y) = (r.random_range(-0.05..0.05), r.random_range(-0.05..0.05));
                Vec3::new(x, y, a * x + b * y + c)
            })
            .collect();
        let s = estimate_surface(&pts).unwrap();
        assert!(s.curvature.abs() <= 1e-12, "sigma {}", s.curvature);
        let expected = Vec3::new(-a, -b, 1.0).normalize();
        assert!((s.normal - expected).norm() < 1e-9);
    }
}

#[test]
fn feature_cost_table_anchors() {
    let hd = FeatureParams::height_deviation();
    assert_eq!(feature_cost(0.005, &hd), 0.0);
    assert_eq!(feature_cost(0.06, &hd), 1.0);
    let sl = FeatureParams::slope();
    assert_eq!(feature_cost(1f64.to_radians(), &sl), 0.0);
    assert_eq!(feature_cost(70f64.to_radians(), &sl), 1.0);
    assert_eq!(feature_cost(80f64.to_radians(), &sl), 1.0);
    let mid = 0.5 * (hd.f_flat + hd.f_max);
    assert!((feature_cost(mid, &hd) - std::f64::consts::LN_2).abs() < 1e-12);
    let mid = 0.5 * (sl.f_flat + sl.f_max);
    assert!((feature_cost(mid, &sl) - std::f64::consts::LN_2).abs() < 1e-12);
}

fn gap_map() -> HeightMap {
    let spec = GridSpec::new(Vec2::new(0.0, 0.0), 0.02, 60, 20, 0.001).unwrap();
    HeightMap::from_fn(spec, |c| if (0.5..0.74).contains(&c.x) { -0.3 } else { 0.0 })
}

/// Independent per-cell evaluation: explicit window scan, population
/// standard deviation, Jacobi PCA, affine curvature map.
fn oracle_total(hm: &HeightMap, ix: usize, iy: usize, p: &CostParams) -> f64 {
    let spec = hm.spec();
    let Some(z) = hm.height(ix, iy) else { return 1.0 };
    let c = spec.cell_center(ix, iy);
    let gather = |w: f64| -> Vec<Vec3> {
        let mut out = Vec::new();
        for jy in 0..spec.ny {
            for jx in 0..spec.nx {
                let q = spec.cell_center(jx, jy);
                if (q.x - c.x).abs() <= w / 2.0 + 1e-9 && (q.y - c.y).abs() <= w / 2.0 + 1e-9 {
                    if let Some(h) = hm.height(jx, jy) {
                        out.push(Vec3::new(q.x, q.y, h));
                    }
                }
            }
        }
        out
    };
    let hp = gather(p.height_window);
    let sp = gather(p.surface_window);
    if hp.len() < 3 || sp.len() < 3 {
        return 1.0;
    }
    let n = hp.len() as f64;
    let mean = hp.iter().map(|q| q.z).sum::<f64>() / n;
    let sd = (hp.iter().map(|q| (q.z - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (vals, vecs) = jacobi_eigen(covariance(&sp));
    let mut normal = Vec3::from(vecs[0]).normalize();
    if normal.z < 0.0 {
        normal = -normal;
    }
    let slope = normal.z.clamp(-1.0, 1.0).acos();
    let centroid = sp.iter().fold(Vec3::zeros(), |a, q| a + q) / sp.len() as f64;
    let sigma = vals[0].max(0.0) / (vals[0].max(0.0) + vals[1] + vals[2]);
    let above = (Vec3::new(c.x, c.y, z) - centroid).dot(&normal) > 1e-12;
    let curv = p.curvature_map.apply(if above { -sigma } else { sigma });
    let costs = [
        feature_cost(sd, &p.height_dev),
        feature_cost(slope, &p.slope),
        curvature_cost(curv, &p.curvature),
    ];
    let w = p.weights;
    let num: f64 = costs.iter().zip(w).map(|(c, w)| c * w).sum();
    let den = w[0] * p.height_dev.t_max + w[1] * p.slope.t_max + w[2] * p.curvature.t_max;
    (num / den).clamp(0.0, 1.0)
}

#[test]
fn gap_costmap_matches_oracle_and_edges_dominate() {
    let hm = gap_map();
    let p = CostParams::default();
    let cm = build_costmap(&hm, &p, &Rect::of_grid(hm.spec())).unwrap();
    let spec = *cm.spec();
    let (mut near, mut far) = (f64::INFINITY, f64::NEG_INFINITY);
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            let expect = oracle_total(&hm, ix, iy, &p);
            assert!((cm.total(ix, iy) - expect).abs() < 1e-9, "cell {ix},{iy}");
            let x = spec.cell_center(ix, iy).x;
            let d = (x - 0.5).abs().min((x - 0.74).abs());
            let interior = (1..spec.ny - 1).contains(&iy) && (1..spec.nx - 1).contains(&ix);
            if !interior {
                continue;
            }
            // Windows that straddle the edge.
            if d < p.height_window / 2.0 - 1e-9 {
                near = near.min(cm.total(ix, iy));
            } else if d >= 0.10 {
                far = far.max(cm.total(ix, iy));
            }
        }
    }
    assert!(near > far, "near {near} far {far}");
}

#[test]
fn incremental_update_equals_rebuild() {
    let mut hm = gap_map();
    let p = CostParams::default();
    let aoi = Rect::new(Vec2::new(0.1, 0.05), Vec2::new(1.0, 0.35));
    let mut cm = build_costmap(&hm, &p, &aoi).unwrap();
    let mut r = rng(3);
    let mut edited = Vec::new();
    for _ in 0..15 {
        let (ix, iy) = (r.random_range(0..60), r.random_range(0..20));
        let z = if r.random::<f64>() < 0.2 { None } else { Some(r.random_range(-0.1..0.1)) };
        hm.set(ix, iy, z);
        edited.push((ix, iy));
    }
    update_costmap(&mut cm, &hm, &edited);
    let full = build_costmap(&hm, &p, &aoi).unwrap();
    assert_eq!(cm.spec(), full.spec());
    for (a, b) in cm.cells().iter().zip(full.cells()) {
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        assert_eq!(a.known, b.known);
    }
}

#[test]
fn unknown_neighbourhood_is_maximally_risky() {
    let spec = GridSpec::new(Vec2::zeros(), 0.02, 5, 5, 0.001).unwrap();
    let mut hm = HeightMap::unknown(spec);
    hm.set(2, 2, Some(0.0));
    hm.set(2, 3, Some(0.0));
    let cm = build_costmap(&hm, &CostParams::default(), &Rect::of_grid(&spec)).unwrap();
    assert_eq!(cm.total(2, 2), 1.0);
    assert_eq!(cm.total(0, 0), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_cost_is_monotone(a in 0.0f64..0.1, b in 0.0f64..0.1) {
        let p = FeatureParams::height_deviation();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(feature_cost(lo, &p) <= feature_cost(hi, &p));
        prop_assert!((0.0..=p.t_max).contains(&feature_cost(a, &p)));
    }

    #[test]
    fn curvature_cost_falls_towards_mild_band(a in -5.99f64..5.99, b in -5.99f64..5.99) {
        let p = CurvatureParams::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(curvature_cost(lo, &p) >= curvature_cost(hi, &p));
    }

    #[test]
    fn heightmap_file_round_trip(seed in 0u64..1000, nx in 1usize..12, ny in 1usize..12) {
        let mut r = rng(seed);
        let spec = GridSpec::new(Vec2::new(-0.3, 0.7), 0.02, nx, ny, 0.005).unwrap();
        let mut hm = HeightMap::unknown(spec);
        for iy in 0..ny {
            for ix in 0..nx {
                if r.random::<f64>() > 0.2 {
                    hm.set(ix, iy, Some(r.random_range(-2.0..2.0)));
                }
            }
        }
        let mut buf = Vec::new();
        write_heightmap(&hm, &mut buf).unwrap();
        let back = read_heightmap(buf.as_slice()).unwrap();
        prop_assert_eq!(back, hm);
    }

    #[test]
    fn stored_heights_are_quantized(z in -3.0f64..3.0) {
        let spec = GridSpec::new(Vec2::zeros(), 0.02, 2, 2, 0.005).unwrap();
        let hm = HeightMap::flat(spec, z);
        let h = hm.height(0, 0).unwrap();
        prop_assert!(((h / 0.005).round() * 0.005 - h).abs() < 1e-12);
        prop_assert!((h - z).abs() <= 0.0025 + 1e-12);
    }
}
