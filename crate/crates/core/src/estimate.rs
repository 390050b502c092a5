//! Gaussian maximum-likelihood estimation.
//!
//! Starting values are drawn uniformly, screened on the cheap uncorrected
//! small-state likelihood, and the best few are refined on the exact
//! likelihood. Standard errors come from a numerical Hessian on the
//! unconstrained scale mapped back by the delta method.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arma_map::ArmaApproxTable;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Normalization, ThetaParams, B_MAX};
use crate::optim::{central_gradient, central_hessian, minimize, OptimOptions};
use crate::ssm_exact::kalman_structured;
use crate::ssm_fast::{kalman_fast, kalman_uncorrected, ApproxMode};

/// Small-state approximation used by the fast filters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxKind {
    #[default]
    Truncation,
    Arma,
}

/// Which filter evaluates the likelihood being maximized.
///
/// `Structured` and `Corrected` give the same exact likelihood; the former
/// avoids the dense `np x np` Cholesky and is far cheaper for long samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodEngine {
    #[default]
    Structured,
    Corrected,
    Uncorrected,
}

/// How the trend scale is identified.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Identification {
    /// `sigma_eta^2 = 1`, loadings free (sign fixed afterwards).
    #[default]
    SigmaEtaUnity,
    /// `beta_1 = 1`, `sigma_eta^2` free.
    FirstLoadingUnity,
}

impl Identification {
    pub fn normalization(self) -> Normalization {
        match self {
            Self::SigmaEtaUnity => Normalization::FirstLoadingPositive,
            Self::FirstLoadingUnity => Normalization::FirstLoadingUnity,
        }
    }
}

/// Uniform supports of the random starting values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartSupport {
    pub b: (f64, f64),
    pub beta: (f64, f64),
    pub log_variance: (f64, f64),
}

impl Default for StartSupport {
    fn default() -> Self {
        Self {
            b: (0.05, 1.45),
            beta: (0.1, 3.0),
            log_variance: (-8.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Order of the truncated or ARMA small state.
    pub m: usize,
    pub mode: ApproxKind,
    pub engine: LikelihoodEngine,
    pub n_starts: usize,
    /// Starts refined on the exact likelihood.
    pub top_k: usize,
    /// Quasi-Newton iterations per start on the uncorrected likelihood;
    /// zero screens by a single evaluation.
    pub start_iters: u64,
    pub b_bounds: (f64, f64),
    pub fix_b: Option<f64>,
    pub identification: Identification,
    pub start_support: StartSupport,
    pub optim: OptimOptions,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            m: 4,
            mode: ApproxKind::Truncation,
            engine: LikelihoodEngine::Structured,
            n_starts: 1000,
            top_k: 5,
            start_iters: 20,
            b_bounds: (0.01, 1.49),
            fix_b: None,
            identification: Identification::SigmaEtaUnity,
            start_support: StartSupport::default(),
            optim: OptimOptions {
                max_iters: 500,
                grad_tol: 1e-9,
                cost_tol: 1e-15,
                fallback_iters: 3000,
            },
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.b_bounds;
        if !(lo >= 0.0 && lo < hi && hi < B_MAX) {
            return Err(Error::InvalidArgument(format!(
                "b_bounds ({lo}, {hi}) must satisfy 0 <= lo < hi < 1.5"
            )));
        }
        if let Some(b) = self.fix_b {
            if !(0.0..B_MAX).contains(&b) {
                return Err(Error::Domain {
                    what: "fix_b",
                    value: b,
                    domain: "[0, 1.5)",
                });
            }
        }
        if self.n_starts == 0 || self.top_k == 0 {
            return Err(Error::InvalidArgument("n_starts and top_k must be >= 1".into()));
        }
        let s = &self.start_support;
        for (name, (a, b)) in [("b", s.b), ("beta", s.beta), ("log_variance", s.log_variance)] {
            if !(a <= b) || !a.is_finite() || !b.is_finite() {
                return Err(Error::InvalidArgument(format!("start support for {name} is not an interval")));
            }
        }
        if self.fix_b.is_none() && !(s.b.0 > lo && s.b.1 < hi) {
            return Err(Error::InvalidArgument("start support for b must lie inside b_bounds".into()));
        }
        Ok(())
    }

    /// Number of free parameters for `p` series.
    pub fn n_free(&self, p: usize) -> usize {
        2 * p + usize::from(self.fix_b.is_none())
    }

    fn approx<'a>(&self, table: Option<&'a ArmaApproxTable>) -> Result<ApproxMode<'a>> {
        match self.mode {
            ApproxKind::Truncation => Ok(ApproxMode::Truncation),
            ApproxKind::Arma => table
                .map(ApproxMode::Arma)
                .ok_or_else(|| Error::InvalidArgument("arma mode needs an ARMA table".into())),
        }
    }
}

fn check_data(y: &Matrix<f64>) -> Result<()> {
    let (n, p) = y.shape();
    if n < 2 || p == 0 {
        return Err(Error::Shape(format!("need at least 2 observations of >= 1 series, got {n} x {p}")));
    }
    if let Some(k) = y.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite value at row {}, column {}", k / p, k % p)));
    }
    Ok(())
}

/// Log-likelihood of `theta` with the configured engine.
pub fn loglik(theta: &ThetaParams<f64>, y: &Matrix<f64>, config: &FitConfig, table: Option<&ArmaApproxTable>) -> Result<f64> {
    loglik_with(theta, y, config, table, config.engine)
}

fn loglik_with(
    theta: &ThetaParams<f64>,
    y: &Matrix<f64>,
    config: &FitConfig,
    table: Option<&ArmaApproxTable>,
    engine: LikelihoodEngine,
) -> Result<f64> {
    let run = || -> Result<f64> {
        let out = match engine {
            LikelihoodEngine::Structured => kalman_structured(y, theta)?,
            LikelihoodEngine::Corrected => kalman_fast(y, theta, config.m, config.approx(table)?)?,
            LikelihoodEngine::Uncorrected => kalman_uncorrected(y, theta, config.m, config.approx(table)?)?,
        };
        if out.loglik.is_finite() {
            Ok(out.loglik)
        } else {
            Err(Error::SingularCovariance { t: y.rows() - 1 })
        }
    };
    run().map_err(|e| Error::Likelihood {
        theta: format!("{theta:?}"),
        source: Box::new(e),
    })
}

fn logit_b(b: f64, (lo, hi): (f64, f64)) -> Result<f64> {
    if !(b > lo && b < hi) {
        return Err(Error::Domain {
            what: "b",
            value: b,
            domain: "open b_bounds interval",
        });
    }
    Ok(((b - lo) / (hi - b)).ln())
}

fn inv_logit_b(z: f64, (lo, hi): (f64, f64)) -> f64 {
    // written to stay inside (lo, hi) for large |z|
    if z >= 0.0 {
        let e = (-z).exp();
        (lo * e + hi) / (1.0 + e)
    } else {
        let e = z.exp();
        (lo + hi * e) / (1.0 + e)
    }
}

/// `theta` to the unconstrained vector: free loadings, log variances (the
/// matrix log of the diagonal `Sigma`), log shock variance if free, logistic
/// `b` unless fixed.
pub fn transform_params(theta: &ThetaParams<f64>, config: &FitConfig) -> Result<Vec<f64>> {
    let p = theta.p();
    let mut u = Vec::with_capacity(config.n_free(p));
    match config.identification {
        Identification::SigmaEtaUnity => u.extend_from_slice(&theta.beta),
        Identification::FirstLoadingUnity => u.extend_from_slice(&theta.beta[1..]),
    }
    for &s in &theta.sigma_diag {
        if !(s > 0.0) {
            return Err(Error::InvalidTheta(vec![format!("variance {s} is not positive")]));
        }
        u.push(s.ln());
    }
    if config.identification == Identification::FirstLoadingUnity {
        u.push(theta.sigma_eta2.ln());
    }
    if config.fix_b.is_none() {
        u.push(logit_b(theta.b, config.b_bounds)?);
    }
    Ok(u)
}

/// Inverse of [`transform_params`].
pub fn untransform_params(u: &[f64], p: usize, config: &FitConfig) -> Result<ThetaParams<f64>> {
    if u.len() != config.n_free(p) {
        return Err(Error::Shape(format!("expected {} parameters, got {}", config.n_free(p), u.len())));
    }
    let (beta, mut k) = match config.identification {
        Identification::SigmaEtaUnity => (u[..p].to_vec(), p),
        Identification::FirstLoadingUnity => (std::iter::once(1.0).chain(u[..p - 1].iter().copied()).collect(), p - 1),
    };
    let sigma_diag: Vec<f64> = u[k..k + p].iter().map(|v| v.exp()).collect();
    k += p;
    let sigma_eta2 = match config.identification {
        Identification::SigmaEtaUnity => 1.0,
        Identification::FirstLoadingUnity => {
            k += 1;
            u[k - 1].exp()
        }
    };
    let b = match config.fix_b {
        Some(b) => b,
        None => inv_logit_b(u[k], config.b_bounds),
    };
    Ok(ThetaParams {
        beta,
        sigma_diag,
        b,
        sigma_eta2,
        normalization: config.identification.normalization(),
    })
}

/// One screened starting value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedStart {
    /// Draw index.
    pub index: usize,
    pub theta: ThetaParams<f64>,
    /// Uncorrected log-likelihood after the short optimization.
    pub loglik: f64,
}

/// Compact per-start record kept in the fit result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub index: usize,
    pub b: f64,
    pub screen_loglik: Option<f64>,
    /// Exact log-likelihood after refinement, for the refined starts.
    pub final_loglik: Option<f64>,
    pub error: Option<String>,
}

fn draw_starts(p: usize, config: &FitConfig) -> Vec<ThetaParams<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let s = &config.start_support;
    (0..config.n_starts)
        .map(|_| {
            let b = rng.random_range(s.b.0..=s.b.1);
            let mut beta: Vec<f64> = (0..p).map(|_| rng.random_range(s.beta.0..=s.beta.1)).collect();
            let sigma_diag: Vec<f64> = (0..p).map(|_| rng.random_range(s.log_variance.0..=s.log_variance.1).exp()).collect();
            let log_eta = rng.random_range(s.log_variance.0..=s.log_variance.1);
            let (sigma_eta2, normalization) = match config.identification {
                Identification::SigmaEtaUnity => (1.0, Normalization::FirstLoadingPositive),
                Identification::FirstLoadingUnity => {
                    beta[0] = 1.0;
                    (log_eta.exp(), Normalization::FirstLoadingUnity)
                }
            };
            ThetaParams {
                beta,
                sigma_diag,
                b: config.fix_b.unwrap_or(b),
                sigma_eta2,
                normalization,
            }
        })
        .collect()
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Likelihood { source, .. } => error_kind(source),
        Error::OutsideTable { .. } => "outside_table",
        Error::SingularCovariance { .. } | Error::NotPositiveDefinite { .. } => "singular",
        Error::InvalidTheta(_) | Error::Domain { .. } => "invalid_theta",
        _ => "other",
    }
}

type Screened = (usize, ThetaParams<f64>, Result<f64>);

fn screen(y: &Matrix<f64>, config: &FitConfig, table: Option<&ArmaApproxTable>) -> Result<Vec<Screened>> {
    config.validate()?;
    check_data(y)?;
    let (n, p) = y.shape();
    let starts = draw_starts(p, config);
    let engine = LikelihoodEngine::Uncorrected;
    let results: Vec<Screened> = starts
        .into_par_iter()
        .enumerate()
        .map(|(i, th)| {
            let first = loglik_with(&th, y, config, table, engine);
            if config.start_iters == 0 || first.is_err() {
                return (i, th, first);
            }
            let u0 = match transform_params(&th, config) {
                Ok(u) => u,
                Err(e) => return (i, th, Err(e)),
            };
            let f = |u: &[f64]| match untransform_params(u, p, config) {
                Ok(t) => loglik_with(&t, y, config, table, engine).map(|l| -l / n as f64).unwrap_or(f64::INFINITY),
                Err(_) => f64::INFINITY,
            };
            let opts = OptimOptions {
                max_iters: config.start_iters,
                fallback_iters: 10 * config.start_iters,
                ..config.optim
            };
            let r = minimize(&f, &u0, &opts);
            match untransform_params(&r.x, p, config) {
                Ok(t) if r.fx.is_finite() => {
                    let l = loglik_with(&t, y, config, table, engine);
                    (i, t, l)
                }
                _ => (i, th, first),
            }
        })
        .collect();
    Ok(results)
}

fn rank(results: &[Screened]) -> Result<Vec<RankedStart>> {
    let mut ok: Vec<RankedStart> = results
        .iter()
        .filter_map(|(i, th, l)| match l {
            Ok(l) => Some(RankedStart {
                index: *i,
                theta: th.clone(),
                loglik: *l,
            }),
            Err(_) => None,
        })
        .collect();
    if ok.is_empty() {
        let mut census: std::collections::BTreeMap<&str, usize> = Default::default();
        for (_, _, l) in results {
            if let Err(e) = l {
                *census.entry(error_kind(e)).or_default() += 1;
            }
        }
        let census = census.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join(", ");
        return Err(Error::AllStartsFailed { census });
    }
    ok.sort_by(|a, b| b.loglik.total_cmp(&a.loglik).then(a.index.cmp(&b.index)));
    Ok(ok)
}

/// Draws `n_starts` uniform starts, runs a short optimization of the
/// uncorrected likelihood from each (in parallel), and returns the
/// successful ones in descending order of the achieved likelihood.
pub fn search_starts(y: &Matrix<f64>, config: &FitConfig, table: Option<&ArmaApproxTable>) -> Result<Vec<RankedStart>> {
    rank(&screen(y, config, table)?)
}

/// Hessian of the log-likelihood on the unconstrained scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianReport {
    pub matrix: Matrix<f64>,
    pub negative_definite: bool,
}

/// Central-difference Hessian of the log-likelihood at `theta_hat`, taken in
/// the unconstrained coordinates.
pub fn numerical_hessian(
    theta_hat: &ThetaParams<f64>,
    y: &Matrix<f64>,
    config: &FitConfig,
    table: Option<&ArmaApproxTable>,
) -> Result<HessianReport> {
    let p = y.cols();
    let u = transform_params(theta_hat, config)?;
    let f = |v: &[f64]| match untransform_params(v, p, config) {
        Ok(t) => loglik(&t, y, config, table).unwrap_or(f64::NAN),
        Err(_) => f64::NAN,
    };
    let h = central_hessian(&f, &u);
    let matrix = Matrix::from_rows(&h)?;
    if matrix.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Likelihood {
            theta: format!("{theta_hat:?}"),
            source: Box::new(Error::InvalidArgument("likelihood failed next to the estimate".into())),
        });
    }
    let negative_definite = matrix.symmetric_eigenvalues().iter().all(|&e| e < 0.0);
    Ok(HessianReport {
        matrix,
        negative_definite,
    })
}

/// Standard errors on the reported scale; `None` for fixed parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StandardErrors {
    pub beta: Vec<Option<f64>>,
    pub sigma_diag: Vec<Option<f64>>,
    pub log_sigma_diag: Vec<Option<f64>>,
    pub b: Option<f64>,
    pub sigma_eta2: Option<f64>,
    pub log_sigma_eta2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: ThetaParams<f64>,
    pub theta_unconstrained: Vec<f64>,
    pub se: StandardErrors,
    pub loglik: f64,
    /// Unconstrained-scale Hessian at the estimate.
    pub hessian: Matrix<f64>,
    /// Euclidean norm of the log-likelihood gradient (unconstrained scale).
    pub grad_norm: f64,
    pub converged: bool,
    pub b_near_half: bool,
    pub flags: Vec<String>,
    pub start_trace: Vec<StartSummary>,
    pub config: FitConfig,
    pub version: String,
}

impl FitResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// t-ratio of `b` against `b0`.
    pub fn b_t_stat(&self, b0: f64) -> Option<f64> {
        self.se.b.map(|s| (self.theta_hat.b - b0) / s)
    }
}

/// Gradient norms below this on the total log-likelihood count as a
/// stationary point.
const GRAD_TOL: f64 = 1e-3;

fn standard_errors(theta: &ThetaParams<f64>, cov: Option<&Matrix<f64>>, config: &FitConfig) -> StandardErrors {
    let p = theta.p();
    let sd = |k: usize| -> Option<f64> {
        cov.and_then(|c| {
            let v = c[(k, k)];
            (v >= 0.0).then(|| v.sqrt())
        })
    };
    let (beta, mut k): (Vec<Option<f64>>, usize) = match config.identification {
        Identification::SigmaEtaUnity => ((0..p).map(sd).collect(), p),
        Identification::FirstLoadingUnity => (std::iter::once(None).chain((0..p - 1).map(sd)).collect(), p - 1),
    };
    let log_sigma_diag: Vec<Option<f64>> = (k..k + p).map(sd).collect();
    let sigma_diag = log_sigma_diag
        .iter()
        .zip(&theta.sigma_diag)
        .map(|(s, v)| s.map(|s| s * v))
        .collect();
    k += p;
    let (log_sigma_eta2, sigma_eta2) = match config.identification {
        Identification::SigmaEtaUnity => (None, None),
        Identification::FirstLoadingUnity => {
            k += 1;
            let s = sd(k - 1);
            (s, s.map(|s| s * theta.sigma_eta2))
        }
    };
    let b = match config.fix_b {
        Some(_) => None,
        None => {
            let (lo, hi) = config.b_bounds;
            sd(k).map(|s| s * (theta.b - lo) * (hi - theta.b) / (hi - lo))
        }
    };
    StandardErrors {
        beta,
        sigma_diag,
        log_sigma_diag,
        b,
        sigma_eta2,
        log_sigma_eta2,
    }
}

/// Safeguarded Newton steps on the total log-likelihood `ll`.
///
/// Quasi-Newton with difference gradients stalls when the curvature along
/// the cointegrating rotation is orders of magnitude above the rest; a few
/// full-Hessian steps clear the residual gradient there. A step is kept
/// only if the log-likelihood does not drop and the gradient shrinks.
fn newton_polish<F: Fn(&[f64]) -> f64>(ll: &F, mut u: Vec<f64>) -> Vec<f64> {
    const STEPS: usize = 4;
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut l0 = ll(&u);
    let mut gn = norm(&central_gradient(ll, &u));
    for _ in 0..STEPS {
        if !(gn >= GRAD_TOL) || !l0.is_finite() {
            break;
        }
        let g = central_gradient(ll, &u);
        let Ok(h) = Matrix::from_rows(&central_hessian(ll, &u)) else {
            break;
        };
        let Ok(cov) = h.scale(-1.0).inverse_spd() else {
            break;
        };
        let step = cov.mul_vec(&g);
        let mut accepted = false;
        let mut a = 1.0;
        for _ in 0..8 {
            let cand: Vec<f64> = u.iter().zip(&step).map(|(x, s)| x + a * s).collect();
            let l1 = ll(&cand);
            if l1.is_finite() && l1 >= l0 - 1e-9 * l0.abs().max(1.0) {
                let g1 = norm(&central_gradient(ll, &cand));
                if g1 < gn {
                    u = cand;
                    l0 = l1;
                    gn = g1;
                    accepted = true;
                    break;
                }
            }
            a *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    u
}

/// Maximum-likelihood fit.
///
/// Screens `n_starts` draws on the uncorrected likelihood, refines the
/// `top_k` best on the exact likelihood with quasi-Newton (simplex
/// fallback) and keeps the best. Non-convergence is reported in the result.
pub fn fit(y: &Matrix<f64>, config: &FitConfig, table: Option<&ArmaApproxTable>) -> Result<FitResult> {
    let (n, p) = y.shape();
    let screened = screen(y, config, table)?;
    let ranked = rank(&screened)?;
    let mut trace: Vec<StartSummary> = screened
        .iter()
        .map(|(i, th, l)| StartSummary {
            index: *i,
            b: th.b,
            screen_loglik: l.as_ref().ok().copied(),
            final_loglik: None,
            error: l.as_ref().err().map(|e| e.to_string()),
        })
        .collect();

    let objective = |u: &[f64]| match untransform_params(u, p, config) {
        Ok(t) => loglik(&t, y, config, table).map(|l| -l / n as f64).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in ranked.iter().take(config.top_k) {
        let Ok(u0) = transform_params(&start.theta, config) else {
            continue;
        };
        let mut r = minimize(&objective, &u0, &config.optim);
        // a restart resets the quasi-Newton curvature, which helps when the
        // first run stalls on a poorly scaled valley
        for _ in 0..3 {
            let g = central_gradient(&objective, &r.x);
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt() * n as f64;
            if gn < GRAD_TOL || !r.fx.is_finite() {
                break;
            }
            let again = minimize(&objective, &r.x, &config.optim);
            if again.fx < r.fx {
                r = again;
            } else {
                break;
            }
        }
        if r.fx.is_finite() {
            trace[start.index].final_loglik = Some(-r.fx * n as f64);
        }
        if best.as_ref().is_none_or(|b| r.fx < b.1) {
            best = Some((r.x, r.fx));
        }
    }
    let (u_best, f_best) = best.ok_or_else(|| Error::AllStartsFailed {
        census: "no refined start produced a parameter vector".into(),
    })?;
    if !f_best.is_finite() {
        return Err(Error::AllStartsFailed {
            census: format!("all {} refined starts ended at an infeasible point", config.top_k.min(ranked.len())),
        });
    }

    let total = |u: &[f64]| -objective(u) * n as f64;
    let u_best = newton_polish(&total, u_best);

    let mut theta = untransform_params(&u_best, p, config)?;
    if config.identification == Identification::SigmaEtaUnity && theta.beta[0] < 0.0 {
        // the likelihood is invariant to the sign of the trend
        theta.beta.iter_mut().for_each(|v| *v = -*v);
    }
    let u_hat = transform_params(&theta, config)?;
    let ll = loglik(&theta, y, config, table)?;
    let grad_norm = central_gradient(&total, &u_hat).iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut flags = Vec::new();
    let (hessian, cov) = match numerical_hessian(&theta, y, config, table) {
        Ok(h) => {
            let cov = if h.negative_definite {
                h.matrix.scale(-1.0).inverse_spd().ok()
            } else {
                flags.push("hessian_not_negative_definite".to_string());
                None
            };
            (h.matrix, cov)
        }
        Err(_) => {
            flags.push("hessian_failed".to_string());
            let k = u_hat.len();
            (Matrix::from_fn(k, k, |_, _| f64::NAN), None)
        }
    };
    let converged = grad_norm.is_finite() && grad_norm < GRAD_TOL && cov.is_some();
    if !converged {
        flags.push("not_converged".to_string());
    }
    let b_near_half = theta.near_half();
    if b_near_half {
        flags.push("b_near_half".to_string());
    }
    if config.fix_b.is_none() {
        let (lo, hi) = config.b_bounds;
        if (theta.b - lo).min(hi - theta.b) < 1e-3 {
            flags.push("b_at_bound".to_string());
        }
    }
    let se = standard_errors(&theta, cov.as_ref(), config);
    Ok(FitResult {
        theta_hat: theta,
        theta_unconstrained: u_hat,
        se,
        loglik: ll,
        hessian,
        grad_norm,
        converged,
        b_near_half,
        flags,
        start_trace: trace,
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate;
    use proptest::prelude::*;

    fn small_config() -> FitConfig {
        FitConfig {
            n_starts: 20,
            top_k: 2,
            start_iters: 0,
            ..FitConfig::default()
        }
    }

    #[test]
    fn white_noise_likelihood_is_iid_gaussian() {
        let y = Matrix::from_vec(5, 1, vec![0.3, -1.2, 0.8, 0.1, -0.4]).unwrap();
        // b = 0 with a vanishing loading leaves y ~ N(0, 1) i.i.d.
        let th = ThetaParams::new(vec![1e-9], vec![1.0], 0.0);
        let ll = loglik(&th, &y, &FitConfig::default(), None).unwrap();
        let iid: f64 = y
            .as_slice()
            .iter()
            .map(|v| -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * v * v)
            .sum();
        assert!((ll - iid).abs() < 1e-9);
    }

    #[test]
    fn log_variance_rounding() {
        // a reported log variance of -4.374 is the variance printed as 0.013
        let th = ThetaParams::new(vec![1.0], vec![(-4.374f64).exp()], 0.5);
        let u = transform_params(&th, &FitConfig::default()).unwrap();
        assert!((u[1] + 4.374).abs() < 1e-12);
        assert_eq!((th.sigma_diag[0] * 1000.0).round() / 1000.0, 0.013);
        let th = ThetaParams::new(vec![1.0], vec![0.013], 0.5);
        let u = transform_params(&th, &FitConfig::default()).unwrap();
        assert!((u[1] - 0.013f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logistic_midpoint_is_zero() {
        let cfg = FitConfig::default();
        let th = ThetaParams::new(vec![1.0], vec![1.0], 0.75);
        assert!(transform_params(&th, &cfg).unwrap()[2].abs() < 1e-15);
        let out = ThetaParams::new(vec![1.0], vec![1.0], 1.495);
        assert!(transform_params(&out, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn transform_round_trips(
            beta in proptest::collection::vec(0.05f64..4.0, 3),
            sig in proptest::collection::vec(1e-3f64..5.0, 3),
            b in 0.02f64..1.48,
            eta in 0.01f64..10.0,
            unity in any::<bool>(),
        ) {
            let cfg = FitConfig {
                identification: if unity { Identification::FirstLoadingUnity } else { Identification::SigmaEtaUnity },
                ..FitConfig::default()
            };
            let th = if unity {
                ThetaParams::with_free_shock_variance(vec![1.0, beta[1], beta[2]], sig.clone(), b, eta)
            } else {
                ThetaParams::new(beta.clone(), sig.clone(), b)
            };
            let back = untransform_params(&transform_params(&th, &cfg).unwrap(), 3, &cfg).unwrap();
            prop_assert!((back.b - th.b).abs() < 1e-12);
            prop_assert!((back.sigma_eta2 - th.sigma_eta2).abs() < 1e-12 * th.sigma_eta2.max(1.0));
            for i in 0..3 {
                prop_assert!((back.beta[i] - th.beta[i]).abs() < 1e-12);
                prop_assert!((back.sigma_diag[i] - th.sigma_diag[i]).abs() < 1e-12 * th.sigma_diag[i].max(1.0));
            }
        }
    }

    #[test]
    fn config_checks() {
        let bad = FitConfig { b_bounds: (0.5, 0.4), ..FitConfig::default() };
        assert!(bad.validate().is_err());
        let bad = FitConfig { fix_b: Some(1.5), ..FitConfig::default() };
        assert!(bad.validate().is_err());
        let bad = FitConfig { n_starts: 0, ..FitConfig::default() };
        assert!(bad.validate().is_err());
        let arma = FitConfig { mode: ApproxKind::Arma, engine: LikelihoodEngine::Corrected, ..FitConfig::default() };
        let th = ThetaParams::new(vec![1.0], vec![1.0], 0.4);
        let y = Matrix::zeros(10, 1);
        assert!(loglik(&th, &y, &arma, None).is_err());
    }

    #[test]
    fn ranking_is_descending_and_deterministic() {
        let th = ThetaParams::new(vec![1.0, 0.8], vec![0.5, 0.5], 0.6);
        let s = simulate(&th, 300, 4).unwrap();
        let cfg = FitConfig { n_starts: 15, start_iters: 2, ..FitConfig::default() };
        let a = search_starts(&s.y, &cfg, None).unwrap();
        assert!(a.windows(2).all(|w| w[0].loglik >= w[1].loglik));
        assert_eq!(a, search_starts(&s.y, &cfg, None).unwrap());
        let one = FitConfig { n_starts: 1, ..cfg };
        assert_eq!(search_starts(&s.y, &one, None).unwrap().len(), 1);
    }

    #[test]
    fn likelihood_does_not_depend_on_the_order() {
        let th = ThetaParams::new(vec![1.0, 0.8], vec![0.5, 0.7], 0.8);
        let s = simulate(&th, 120, 9).unwrap();
        let base = loglik(&th, &s.y, &FitConfig::default(), None).unwrap();
        for m in [1, 4, 8] {
            let cfg = FitConfig { m, engine: LikelihoodEngine::Corrected, ..FitConfig::default() };
            assert!((loglik(&th, &s.y, &cfg, None).unwrap() - base).abs() < 1e-6);
        }
    }

    #[test]
    fn recovers_simulated_parameters() {
        let th = ThetaParams::new(vec![1.0, 0.8], vec![0.5, 0.5], 0.8);
        let s = simulate(&th, 1500, 17).unwrap();
        let r = fit(&s.y, &small_config(), None).unwrap();
        assert!(r.converged, "{:?}", r.flags);
        assert!((r.theta_hat.b - 0.8).abs() < 0.1, "b = {}", r.theta_hat.b);
        assert!(r.grad_norm < 1e-3);
        assert!(r.theta_hat.beta[0] > 0.0);
        let fresh = loglik(&r.theta_hat, &s.y, &r.config, None).unwrap();
        assert!((fresh - r.loglik).abs() < 1e-8);
        let h = &r.hessian;
        assert!(h.max_abs_diff(&h.transpose()) < 1e-12 * h.max_abs().max(1.0));
        assert!(r.se.b.unwrap() > 0.0 && r.se.b.unwrap() < 0.1);
        // identical inputs, identical output
        assert_eq!(r, fit(&s.y, &small_config(), None).unwrap());
    }

    #[test]
    fn identification_schemes_agree() {
        let th = ThetaParams::new(vec![1.2, 0.6], vec![0.4, 0.6], 0.7);
        let s = simulate(&th, 800, 23).unwrap();
        let a = fit(&s.y, &small_config(), None).unwrap();
        let cfg_b = FitConfig { identification: Identification::FirstLoadingUnity, ..small_config() };
        let b = fit(&s.y, &cfg_b, None).unwrap();
        assert!((a.loglik - b.loglik).abs() < 1e-4, "{} vs {}", a.loglik, b.loglik);
        assert!(b.se.beta[0].is_none() && b.se.sigma_eta2.is_some());
        let fa = kalman_structured(&s.y, &a.theta_hat).unwrap();
        let fb = kalman_structured(&s.y, &b.theta_hat).unwrap();
        for t in 0..800 {
            for i in 0..2 {
                let ta = a.theta_hat.beta[i] * fa.x_filt[t];
                let tb = b.theta_hat.beta[i] * fb.x_filt[t];
                assert!((ta - tb).abs() < 1e-6 * ta.abs().max(1.0), "t = {t}: {ta} vs {tb}");
            }
        }
    }

    #[test]
    fn fixed_order_fit() {
        let th = ThetaParams::new(vec![1.0, 0.5], vec![0.3, 0.3], 1.0);
        let s = simulate(&th, 400, 5).unwrap();
        let cfg = FitConfig { fix_b: Some(1.0), ..small_config() };
        let r = fit(&s.y, &cfg, None).unwrap();
        assert_eq!(r.theta_hat.b, 1.0);
        assert!(r.se.b.is_none());
        assert_eq!(r.theta_unconstrained.len(), 4);
    }
}
