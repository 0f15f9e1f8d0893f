//! (μ/μ_w, λ)-CMA-ES with box bounds.
//!
//! Out-of-box candidates are resampled up to [`MAX_RESAMPLES`] times, then
//! clipped; the clipped point is evaluated and a quadratic penalty on the
//! clipping distance is added for ranking.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::io::Write;
use thiserror::Error;

pub const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum CmaError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("objective returned {0}")]
    NonFinite(f64),
}

pub type Result<T> = std::result::Result<T, CmaError>;

#[derive(Debug, Clone, PartialEq)]
pub struct CmaConfig {
    /// Population size; `None` selects `4 + ⌊3·ln d⌋`.
    pub lambda: Option<usize>,
    pub sigma0: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub max_evals: usize,
    /// Stop once the best value is at or below this.
    pub f_target: Option<f64>,
    /// Stop when σ times the largest coordinate deviation falls below this.
    pub tol_x: f64,
    /// Stop when recent best values and the current generation span less than this.
    pub tol_fun: f64,
    pub seed: u64,
    pub penalty_weight: f64,
    /// Evaluate candidates of a generation concurrently.
    pub parallel: bool,
    /// Number of IPOP restarts (population doubled each time).
    pub ipop_restarts: usize,
    pub overrides: Hyperparameters,
}

impl Default for CmaConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            sigma0: 0.3,
            lower: None,
            upper: None,
            max_evals: 10_000,
            f_target: None,
            tol_x: 1e-12,
            tol_fun: 1e-12,
            seed: 0,
            penalty_weight: 1.0,
            parallel: false,
            ipop_restarts: 0,
            overrides: Hyperparameters::default(),
        }
    }
}

/// Optional replacements for the standard learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Hyperparameters {
    pub c_sigma: Option<f64>,
    pub d_sigma: Option<f64>,
    pub c_c: Option<f64>,
    pub c_1: Option<f64>,
    pub c_mu: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxEvaluations,
    TargetReached,
    TolX,
    TolFun,
    ConditionNumber,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub generation: usize,
    pub evaluations: usize,
    /// Best value found so far.
    pub best: f64,
    pub median: f64,
    /// Mean ranking value of the μ selected candidates.
    pub elite_mean: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
    pub termination: Termination,
    pub trace: Vec<TraceRow>,
}

impl CmaResult {
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "generation,best,median,sigma")?;
        for r in &self.trace {
            writeln!(w, "{},{:e},{:e},{:e}", r.generation, r.best, r.median, r.sigma)?;
        }
        Ok(())
    }
}

struct Strategy {
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
}

impl Strategy {
    fn new(n: usize, lambda: usize, hp: &Hyperparameters) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = hp.c_sigma.unwrap_or((mu_eff + 2.0) / (nf + mu_eff + 5.0));
        let d_sigma = hp.d_sigma.unwrap_or(
            1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma,
        );
        let c_c = hp
            .c_c
            .unwrap_or((4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf));
        let c_1 = hp.c_1.unwrap_or(2.0 / ((nf + 1.3).powi(2) + mu_eff));
        let c_mu = hp.c_mu.unwrap_or(
            (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff)),
        );
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

fn validate(x0: &[f64], cfg: &CmaConfig) -> Result<()> {
    let n = x0.len();
    let bad = |m: String| Err(CmaError::InvalidConfig(m));
    if n == 0 {
        return bad("dimension must be positive".into());
    }
    if !(cfg.sigma0 > 0.0 && cfg.sigma0.is_finite()) {
        return bad(format!("sigma0 {}", cfg.sigma0));
    }
    if let Some(l) = cfg.lambda {
        if l < 4 {
            return bad(format!("population {l} < 4"));
        }
    }
    if cfg.max_evals == 0 {
        return bad("max_evals must be positive".into());
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return bad("x0 not finite".into());
    }
    for b in [&cfg.lower, &cfg.upper].into_iter().flatten() {
        if b.len() != n {
            return bad(format!("bound length {} != dimension {n}", b.len()));
        }
    }
    if let (Some(lo), Some(hi)) = (&cfg.lower, &cfg.upper) {
        if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
            return bad("lower bound not below upper bound".into());
        }
    }
    let outside = x0.iter().enumerate().any(|(i, &v)| {
        cfg.lower.as_ref().is_some_and(|l| v < l[i]) || cfg.upper.as_ref().is_some_and(|u| v > u[i])
    });
    if outside {
        return bad("x0 outside bounds".into());
    }
    Ok(())
}

fn in_bounds(x: &DVector<f64>, cfg: &CmaConfig) -> bool {
    x.iter().enumerate().all(|(i, &v)| {
        cfg.lower.as_ref().is_none_or(|l| v >= l[i]) && cfg.upper.as_ref().is_none_or(|u| v <= u[i])
    })
}

fn clip(x: &DVector<f64>, cfg: &CmaConfig) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        x.iter().enumerate().map(|(i, &v)| {
            let v = cfg.lower.as_ref().map_or(v, |l| v.max(l[i]));
            cfg.upper.as_ref().map_or(v, |u| v.min(u[i]))
        }),
    )
}

/// Minimize `objective` from `x0`. The objective may return `+∞` for
/// infeasible points; NaN or `−∞` abort the run.
pub fn optimize<F>(objective: F, x0: &[f64], cfg: &CmaConfig) -> Result<CmaResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    validate(x0, cfg)?;
    let n = x0.len();
    let base_lambda = cfg.lambda.unwrap_or(4 + (3.0 * (n as f64).ln()).floor() as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best_point = x0.to_vec();
    let mut best_value = f64::INFINITY;
    let mut evaluations = 0usize;
    let mut trace = Vec::new();
    let mut generation = 0usize;
    let mut termination = Termination::MaxEvaluations;

    for restart in 0..=cfg.ipop_restarts {
        let lambda = base_lambda << restart;
        if evaluations + lambda > cfg.max_evals {
            termination = Termination::MaxEvaluations;
            break;
        }
        let st = Strategy::new(n, lambda, &cfg.overrides);
        let mut mean = DVector::from_column_slice(x0);
        let mut sigma = cfg.sigma0;
        let mut cov = DMatrix::<f64>::identity(n, n);
        let mut basis = DMatrix::<f64>::identity(n, n);
        let mut scales = DVector::<f64>::from_element(n, 1.0);
        let mut p_sigma = DVector::<f64>::zeros(n);
        let mut p_c = DVector::<f64>::zeros(n);
        let hist_len = 10 + (30.0 * n as f64 / lambda as f64).ceil() as usize;
        let mut history: Vec<f64> = Vec::new();
        let mut local_gen = 0usize;

        termination = loop {
            if evaluations + lambda > cfg.max_evals {
                break Termination::MaxEvaluations;
            }
            // Sample
            let mut raw = Vec::with_capacity(lambda);
            for _ in 0..lambda {
                let mut x = DVector::zeros(n);
                for _ in 0..MAX_RESAMPLES {
                    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                    let y = &basis * scales.component_mul(&z);
                    x = &mean + y * sigma;
                    if in_bounds(&x, cfg) {
                        break;
                    }
                }
                raw.push(x);
            }
            let clipped: Vec<DVector<f64>> = raw.iter().map(|x| clip(x, cfg)).collect();
            let values: Vec<f64> = if cfg.parallel {
                clipped.par_iter().map(|x| objective(x.as_slice())).collect()
            } else {
                clipped.iter().map(|x| objective(x.as_slice())).collect()
            };
            evaluations += lambda;
            if let Some(&bad) = values.iter().find(|v| v.is_nan() || **v == f64::NEG_INFINITY) {
                return Err(CmaError::NonFinite(bad));
            }
            let fitness: Vec<f64> = values
                .iter()
                .zip(raw.iter().zip(&clipped))
                .map(|(&f, (r, c))| f + cfg.penalty_weight * (r - c).norm_squared())
                .collect();
            for (i, &f) in values.iter().enumerate() {
                if f < best_value {
                    best_value = f;
                    best_point = clipped[i].as_slice().to_vec();
                }
            }
            let mut order: Vec<usize> = (0..lambda).collect();
            order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]));

            // Recombination and path updates
            let old_mean = mean.clone();
            mean = DVector::zeros(n);
            for (k, &i) in order.iter().take(st.mu).enumerate() {
                mean += &raw[i] * st.weights[k];
            }
            let y_w = (&mean - &old_mean) / sigma;
            let inv_sqrt = &basis
                * DMatrix::from_diagonal(&scales.map(|d| 1.0 / d))
                * basis.transpose();
            p_sigma = &p_sigma * (1.0 - st.c_sigma)
                + &inv_sqrt * &y_w * (st.c_sigma * (2.0 - st.c_sigma) * st.mu_eff).sqrt();
            let ps_norm = p_sigma.norm();
            let decay = 1.0 - (1.0 - st.c_sigma).powi(2 * (local_gen as i32 + 1));
            let h_sigma =
                ps_norm / decay.sqrt() < (1.4 + 2.0 / (n as f64 + 1.0)) * st.chi_n;
            let hs = if h_sigma { 1.0 } else { 0.0 };
            p_c = &p_c * (1.0 - st.c_c) + &y_w * (hs * (st.c_c * (2.0 - st.c_c) * st.mu_eff).sqrt());

            let mut rank_mu = DMatrix::<f64>::zeros(n, n);
            for (k, &i) in order.iter().take(st.mu).enumerate() {
                let y = (&raw[i] - &old_mean) / sigma;
                rank_mu += &y * y.transpose() * st.weights[k];
            }
            let keep = 1.0 - st.c_1 - st.c_mu + (1.0 - hs) * st.c_1 * st.c_c * (2.0 - st.c_c);
            cov = &cov * keep + &p_c * p_c.transpose() * st.c_1 + rank_mu * st.c_mu;
            cov = (&cov + cov.transpose()) * 0.5;

            sigma *= ((st.c_sigma / st.d_sigma) * (ps_norm / st.chi_n - 1.0)).exp();
            // Flat fitness: widen the search.
            if fitness[order[0]] == fitness[order[st.mu.min(lambda - 1)]] {
                sigma *= (0.2 + st.c_sigma / st.d_sigma).exp();
            }

            // Eigendecomposition with positive-definiteness repair
            let eig = SymmetricEigen::new(cov.clone());
            let max_ev = eig.eigenvalues.max();
            let floor = (max_ev * 1e-20).max(f64::MIN_POSITIVE);
            let repaired = eig.eigenvalues.iter().any(|&l| l < floor);
            let evals = eig.eigenvalues.map(|l| l.max(floor));
            if repaired {
                cov = &eig.eigenvectors * DMatrix::from_diagonal(&evals) * eig.eigenvectors.transpose();
                cov = (&cov + cov.transpose()) * 0.5;
            }
            assert!(evals.min() > 0.0, "covariance lost positive definiteness");
            basis = eig.eigenvectors;
            scales = evals.map(f64::sqrt);

            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let elite_mean = order.iter().take(st.mu).map(|&i| fitness[i]).sum::<f64>() / st.mu as f64;
            trace.push(TraceRow {
                generation,
                evaluations,
                best: best_value,
                median: sorted[lambda / 2],
                elite_mean,
                sigma,
            });
            generation += 1;
            local_gen += 1;

            if cfg.f_target.is_some_and(|t| best_value <= t) {
                break Termination::TargetReached;
            }
            let max_dev = cov.diagonal().iter().fold(0.0f64, |a, &c| a.max(c.sqrt()));
            if sigma * max_dev < cfg.tol_x {
                break Termination::TolX;
            }
            if max_ev / evals.min() > 1e14 {
                break Termination::ConditionNumber;
            }
            history.push(fitness[order[0]]);
            if history.len() > hist_len {
                history.remove(0);
            }
            if history.len() == hist_len {
                let (lo, hi) = history
                    .iter()
                    .chain(fitness.iter())
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                if hi.is_finite() && hi - lo < cfg.tol_fun {
                    break Termination::TolFun;
                }
            }
        };
        if matches!(termination, Termination::MaxEvaluations | Termination::TargetReached) {
            break;
        }
    }

    Ok(CmaResult {
        best_point,
        best_value,
        evaluations,
        termination,
        trace,
    })
}
