//! Dense convex QP: minimize `½xᵀHx + gᵀx` subject to `Ax = b`, `Cx ≥ d`.
//!
//! Equalities are eliminated with an SVD null-space basis; the reduced
//! problem is solved with the Goldfarb–Idnani dual active-set method, which
//! starts from the unconstrained minimizer and adds the most violated
//! constraint each iteration. Active-set quantities are refactorized from
//! scratch at every step, which is affordable at the sizes used here and
//! keeps the KKT residuals tight.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Hessian is not positive semidefinite")]
    NotConvex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl QpProblem {
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            c: DMatrix::zeros(0, n),
            d: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    fn check(&self) -> Result<(), QpError> {
        let n = self.dim();
        let bad = |m: &str| Err(QpError::Dimension(m.to_string()));
        if self.h.shape() != (n, n) {
            return bad("H must be n×n");
        }
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return bad("A/b");
        }
        if self.c.ncols() != n || self.c.nrows() != self.d.len() {
            return bad("C/d");
        }
        let asym = (&self.h - self.h.transpose()).abs().max();
        if asym > 1e-12 * self.h.abs().max().max(1.0) {
            return bad("H not symmetric");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// ‖Hx + g − Aᵀλ − Cᵀμ‖∞
    pub stationarity: f64,
    /// Largest equality or inequality violation.
    pub primal: f64,
    /// max |μᵢ·(Cx − d)ᵢ| together with any negative multiplier.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    pub mu_ineq: DVector<f64>,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub objective: f64,
    pub iterations: usize,
    /// Set when the reduced Hessian needed Tikhonov regularization.
    pub regularized: bool,
}

/// Relative threshold below which singular values count as zero.
const RANK_TOL: f64 = 1e-12;
/// Relative eigenvalue floor below which the reduced Hessian is treated as singular.
const REGULARIZATION: f64 = 1e-10;
/// Relative proximal weight used for singular Hessians.
const PROXIMAL_WEIGHT: f64 = 1e-6;

struct Elimination {
    xp: DVector<f64>,
    /// Null-space basis of A (n × k).
    z: DMatrix<f64>,
    consistent: bool,
}

fn eliminate(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Elimination {
    let n = a.ncols();
    if a.nrows() == 0 {
        return Elimination {
            xp: DVector::zeros(n),
            z: DMatrix::identity(n, n),
            consistent: true,
        };
    }
    let rows = a.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.rows_mut(0, a.nrows()).copy_from(a);
    let svd = padded.svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let smax = svd.singular_values.max();
    let thresh = RANK_TOL * smax.max(f64::MIN_POSITIVE) * rows as f64;
    let mut bp = DVector::zeros(rows);
    bp.rows_mut(0, b.len()).copy_from(b);
    let mut xp = DVector::zeros(n);
    let mut null_rows = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > thresh {
            let coef = u.column(i).dot(&bp) / s;
            xp += vt.row(i).transpose() * coef;
        } else {
            null_rows.push(i);
        }
    }
    let z = DMatrix::from_fn(n, null_rows.len(), |r, c| vt[(null_rows[c], r)]);
    let resid = (a * &xp - b).amax();
    let scale = 1.0 + b.amax() + a.amax() * xp.amax();
    Elimination {
        xp,
        z,
        consistent: resid <= tol.max(1e-12) * scale,
    }
}

/// Least-squares multipliers λ with Aᵀλ ≈ r.
fn equality_multipliers(a: &DMatrix<f64>, r: &DVector<f64>) -> DVector<f64> {
    if a.nrows() == 0 {
        return DVector::zeros(0);
    }
    let at = a.transpose();
    let svd = at.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = RANK_TOL * smax.max(f64::MIN_POSITIVE) * a.ncols().max(a.nrows()) as f64;
    svd.solve(r, eps).unwrap_or_else(|_| DVector::zeros(a.nrows()))
}

enum DualOutcome {
    Optimal,
    Infeasible,
    MaxIter,
}

/// Goldfarb–Idnani on `min ½yᵀHy + gᵀy, Cy ≥ d` with positive definite `H`.
fn dual_active_set(
    hinv: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    opts: &QpOptions,
    iterations: &mut usize,
) -> (DVector<f64>, Vec<(usize, f64)>, DualOutcome) {
    let k = g.len();
    let m = c.nrows();
    let norms: Vec<f64> = (0..m).map(|i| c.row(i).norm()).collect();
    let mut y = -(hinv * g);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut is_active = vec![false; m];

    loop {
        // Most violated constraint, measured as distance.
        let mut pick = None;
        let mut worst = -opts.tol;
        for i in 0..m {
            if is_active[i] || norms[i] == 0.0 {
                continue;
            }
            let s = (c.row(i).dot(&y.transpose()) - d[i]) / norms[i];
            if s < worst {
                worst = s;
                pick = Some(i);
            }
        }
        if pick.is_none() {
            // Zero rows demand d ≤ 0.
            if (0..m).any(|i| norms[i] == 0.0 && d[i] > opts.tol) {
                return (y, Vec::new(), DualOutcome::Infeasible);
            }
            let pairs = active.iter().copied().zip(u.iter().copied()).collect();
            return (y, pairs, DualOutcome::Optimal);
        }
        let p = pick.unwrap();
        let np: DVector<f64> = c.row(p).transpose();
        let mut u_plus = 0.0;

        loop {
            *iterations += 1;
            if *iterations > opts.max_iter {
                let pairs = active.iter().copied().zip(u.iter().copied()).collect();
                return (y, pairs, DualOutcome::MaxIter);
            }
            let q = active.len();
            let hn = hinv * &np;
            let (z, r) = if q == 0 {
                (hn.clone(), DVector::zeros(0))
            } else {
                let n_act = DMatrix::from_fn(k, q, |row, col| c[(active[col], row)]);
                let hn_act = hinv * &n_act;
                let mmat = n_act.transpose() * &hn_act;
                let rhs = n_act.transpose() * &hn;
                let r = match mmat.clone().cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => mmat.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(q)),
                };
                (&hn - &hn_act * &r, r)
            };
            let s_p = np.dot(&y) - d[p];
            let zn = z.dot(&np);
            let zero_step = z.amax() <= 1e-14 * (1.0 + hn.amax()) || zn <= 1e-18 * norms[p].powi(2);
            let t2 = if zero_step { f64::INFINITY } else { -s_p / zn };
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for j in 0..q {
                if r[j] > 0.0 {
                    let t = u[j] / r[j];
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let t = t1.min(t2);
            if !t.is_finite() {
                return (y, Vec::new(), DualOutcome::Infeasible);
            }
            if t2.is_finite() {
                y += &z * t;
            }
            for j in 0..q {
                u[j] -= t * r[j];
            }
            u_plus += t;
            if t2 <= t1 {
                active.push(p);
                u.push(u_plus);
                is_active[p] = true;
                break;
            }
            let j = drop.expect("partial step has a blocking constraint");
            is_active[active[j]] = false;
            active.remove(j);
            u.remove(j);
        }
    }
}

/// Solve the KKT system of the original problem with the given constraints
/// held active; accept the point if it is primal and dual feasible.
fn exact_on_active_set(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    active: &[(usize, f64)],
    tol: f64,
) -> Option<(DVector<f64>, Vec<(usize, f64)>, DualOutcome)> {
    let k = g.len();
    let q = active.len();
    let mut kkt = DMatrix::zeros(k + q, k + q);
    kkt.view_mut((0, 0), (k, k)).copy_from(h);
    let mut rhs = DVector::zeros(k + q);
    rhs.rows_mut(0, k).copy_from(&(-g));
    for (j, &(i, _)) in active.iter().enumerate() {
        for r in 0..k {
            kkt[(r, k + j)] = -c[(i, r)];
            kkt[(k + j, r)] = -c[(i, r)];
        }
        rhs[k + j] = -d[i];
    }
    let lu = kkt.clone().lu();
    let mut sol = lu.solve(&rhs)?;
    sol += lu.solve(&(&rhs - &kkt * &sol))?;
    if (&kkt * &sol - &rhs).amax() > 1e-3 * tol * (1.0 + rhs.amax()) {
        return None;
    }
    let y = sol.rows(0, k).into_owned();
    let u: Vec<f64> = (0..q).map(|j| sol[k + j]).collect();
    if u.iter().any(|&v| v < -tol) {
        return None;
    }
    let feasible = (0..c.nrows()).all(|i| c.row(i).transpose().dot(&y) - d[i] >= -tol * (1.0 + c.row(i).norm()));
    if !feasible {
        return None;
    }
    let pairs = active.iter().zip(u).map(|(&(i, _), v)| (i, v.max(0.0))).collect();
    Some((y, pairs, DualOutcome::Optimal))
}

/// Proximal-point outer loop for singular `H`: each subproblem adds
/// `(ρ/2)‖y − y_k‖²`, which is positive definite, and the iterates converge
/// to a minimizer of the original problem.
fn proximal(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    opts: &QpOptions,
    iterations: &mut usize,
) -> (DVector<f64>, Vec<(usize, f64)>, DualOutcome) {
    let k = g.len();
    let rho = PROXIMAL_WEIGHT * h.amax().max(1.0);
    let hinv = match (h + DMatrix::identity(k, k) * rho).cholesky() {
        Some(ch) => ch.inverse(),
        None => return (DVector::zeros(k), Vec::new(), DualOutcome::Infeasible),
    };
    let mut y = DVector::zeros(k);
    let mut last = (y.clone(), Vec::new(), DualOutcome::MaxIter);
    for _ in 0..500 {
        let gk = g - &y * rho;
        let (yn, pairs, outcome) = dual_active_set(&hinv, &gk, c, d, opts, iterations);
        if !matches!(outcome, DualOutcome::Optimal) {
            return (yn, pairs, outcome);
        }
        if let Some(exact) = exact_on_active_set(h, g, c, d, &pairs, opts.tol) {
            return exact;
        }
        let step = (&yn - &y).amax();
        y = yn.clone();
        last = (yn, pairs, DualOutcome::Optimal);
        if rho * step <= 1e-3 * opts.tol && step <= 1e-10 * (1.0 + y.amax()) {
            return last;
        }
        if *iterations > opts.max_iter {
            return (last.0, last.1, DualOutcome::MaxIter);
        }
    }
    (last.0, last.1, DualOutcome::MaxIter)
}

/// Solve the QP; see the module docs for the method.
pub fn solve(p: &QpProblem, opts: &QpOptions) -> Result<QpSolution, QpError> {
    p.check()?;
    let elim = eliminate(&p.a, &p.b, opts.tol);
    let infeasible = |x: DVector<f64>| QpSolution {
        objective: p.objective(&x),
        x,
        lambda_eq: DVector::zeros(p.a.nrows()),
        mu_ineq: DVector::zeros(p.c.nrows()),
        status: QpStatus::Infeasible,
        kkt: KktResiduals::default(),
        iterations: 0,
        regularized: false,
    };
    if !elim.consistent {
        return Ok(infeasible(elim.xp));
    }
    let z = &elim.z;
    let k = z.ncols();
    let hr = z.transpose() * &p.h * z;
    let gr = z.transpose() * (&p.h * &elim.xp + &p.g);
    let cr = &p.c * z;
    let dr = &p.d - &p.c * &elim.xp;

    let mut iterations = 0;
    let mut regularized = false;
    let (y, pairs, outcome) = if k == 0 {
        let viol = (0..p.c.nrows()).any(|i| dr[i] > opts.tol * (1.0 + p.c.row(i).norm()));
        let out = if viol { DualOutcome::Infeasible } else { DualOutcome::Optimal };
        (DVector::zeros(0), Vec::new(), out)
    } else {
        let sym = (&hr + hr.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max().max(0.0));
        if lo < -1e-8 * hi.max(1.0) {
            return Err(QpError::NotConvex);
        }
        if lo > REGULARIZATION * hi.max(1.0) {
            let hinv = sym.clone().cholesky().ok_or(QpError::NotConvex)?.inverse();
            let (y, pairs, outcome) = dual_active_set(&hinv, &gr, &cr, &dr, opts, &mut iterations);
            match outcome {
                DualOutcome::Optimal => exact_on_active_set(&sym, &gr, &cr, &dr, &pairs, opts.tol)
                    .unwrap_or((y, pairs, DualOutcome::Optimal)),
                other => (y, pairs, other),
            }
        } else {
            regularized = true;
            proximal(&sym, &gr, &cr, &dr, opts, &mut iterations)
        }
    };

    let x = &elim.xp + z * &y;
    let status = match outcome {
        DualOutcome::Optimal => QpStatus::Optimal,
        DualOutcome::Infeasible => return Ok(QpSolution { iterations, ..infeasible(x) }),
        DualOutcome::MaxIter => QpStatus::MaxIter,
    };
    let mut mu = DVector::zeros(p.c.nrows());
    for (i, ui) in pairs {
        mu[i] = ui.max(0.0);
    }
    let grad = &p.h * &x + &p.g;
    let lambda = equality_multipliers(&p.a, &(&grad - p.c.transpose() * &mu));
    let kkt = residuals(p, &x, &lambda, &mu);
    Ok(QpSolution {
        objective: p.objective(&x),
        x,
        lambda_eq: lambda,
        mu_ineq: mu,
        status,
        kkt,
        iterations,
        regularized,
    })
}

/// KKT residuals of a candidate primal-dual point.
pub fn residuals(p: &QpProblem, x: &DVector<f64>, lambda: &DVector<f64>, mu: &DVector<f64>) -> KktResiduals {
    let stat = &p.h * x + &p.g - p.a.transpose() * lambda - p.c.transpose() * mu;
    let eq = if p.a.nrows() > 0 { (&p.a * x - &p.b).amax() } else { 0.0 };
    let slack = &p.c * x - &p.d;
    let ineq = slack.iter().fold(0.0f64, |a, &s| a.max(-s));
    let comp = slack
        .iter()
        .zip(mu.iter())
        .fold(0.0f64, |a, (&s, &m)| a.max((m * s).abs()).max(-m));
    KktResiduals {
        stationarity: if stat.is_empty() { 0.0 } else { stat.amax() },
        primal: eq.max(ineq),
        complementarity: comp,
    }
}
