use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use terraplan::qp::{solve, QpOptions, QpProblem, QpStatus};

/// Box-constrained random problem; PSD (rank-deficient) when `rank < n`.
fn random_box_qp(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> (QpProblem, Vec<f64>, Vec<f64>) {
    let m = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-1.0..1.0));
    let h = m.transpose() * m;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let hi: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let lo: Vec<f64> = hi.iter().map(|u| -u).collect();
    let mut c = DMatrix::zeros(2 * n, n);
    let mut d = DVector::zeros(2 * n);
    for i in 0..n {
        c[(i, i)] = 1.0;
        d[i] = lo[i];
        c[(n + i, i)] = -1.0;
        d[n + i] = -hi[i];
    }
    let mut p = QpProblem::unconstrained(h, g);
    p.c = c;
    p.d = d;
    (p, lo, hi)
}

/// Accelerated projected gradient with adaptive restart.
fn projected_gradient(p: &QpProblem, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    let n = p.dim();
    let l = p.h.clone().symmetric_eigen().eigenvalues.max().max(1e-12);
    let proj = |v: DVector<f64>| DVector::from_fn(n, |i, _| v[i].clamp(lo[i], hi[i]));
    let mut x = proj(DVector::zeros(n));
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..60_000 {
        let grad = &p.h * &y + &p.g;
        let xn = proj(&y - grad / l);
        if (&xn - &x).amax() < 1e-15 {
            x = xn;
            break;
        }
        let tn = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        if p.objective(&xn) > p.objective(&x) {
            t = 1.0;
            y = x.clone();
            continue;
        }
        y = &xn + (&xn - &x) * ((t - 1.0) / tn);
        x = xn;
        t = tn;
    }
    x
}

#[test]
fn matches_projected_gradient_on_random_box_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_gap = 0.0f64;
    let mut worst_kkt = 0.0f64;
    for k in 0..200 {
        let n = rng.random_range(1..=50);
        let rank = if k % 2 == 0 { n } else { (n / 2).max(1) };
        let (p, lo, hi) = random_box_qp(&mut rng, n, rank);
        let s = solve(&p, &QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal, "problem {k}");
        let reference = projected_gradient(&p, &lo, &hi);
        let gap = (s.objective - p.objective(&reference)).abs();
        worst_gap = worst_gap.max(gap);
        worst_kkt = worst_kkt.max(s.kkt.max());
        assert!(s.objective <= p.objective(&reference) + 1e-6, "problem {k}: {gap}");
    }
    assert!(worst_gap <= 1e-6, "objective gap {worst_gap}");
    assert!(worst_kkt <= 1e-8, "kkt {worst_kkt}");
}

#[test]
fn objective_scaling_keeps_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.random_range(2..=20);
        let (p, _, _) = random_box_qp(&mut rng, n, n);
        let base = solve(&p, &QpOptions::default()).unwrap();
        for alpha in [0.1, 10.0] {
            let mut q = p.clone();
            q.h *= alpha;
            q.g *= alpha;
            let s = solve(&q, &QpOptions::default()).unwrap();
            assert!((s.x.clone() - &base.x).amax() < 1e-9);
        }
    }
}

#[test]
fn equality_constrained_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let n = rng.random_range(3..=30);
        let (mut p, _, _) = random_box_qp(&mut rng, n, n);
        let me = rng.random_range(1..n);
        p.a = DMatrix::from_fn(me, n, |_, _| rng.random_range(-1.0..1.0));
        // Right-hand side from an interior point keeps the problem feasible.
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-0.3..0.3));
        p.b = &p.a * x0;
        let s = solve(&p, &QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(s.kkt.max() <= 1e-8, "{:?}", s.kkt);
    }
}
