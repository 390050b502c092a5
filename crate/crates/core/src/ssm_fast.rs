//! Small-state filtering with an exact correction for the neglected lags.
//!
//! The trend is split as `x_t = x~_t + eps_t`, where `x~_t` is generated by a
//! small companion system (the first `m` lags of the fractional expansion, or
//! an ARMA(m, m) fit to it) and `eps_t` collects what that system misses.
//! Only `E(eps_t | y_1..y_{t-1})` matters for prediction; it is a weighted sum
//! of `E(eta_j | y_1..y_{t-1})`, which the joint Gaussian law of shocks and
//! observations gives in closed form through one Cholesky factorization of the
//! stacked observation covariance.
//!
//! The small state mean is propagated with the gains implied by that same
//! law, `Cov(alpha~_t, e_t)` for the standardized innovations `e`, so the
//! corrected filter reproduces the exact prediction errors. Filtering the
//! corrected observations with the truncated system's own Riccati gains is
//! also available ([`GainMode::TruncatedRiccati`]); it is what the start
//! search uses with the correction switched off.

use serde::{Deserialize, Serialize};

use crate::arma_map::ArmaApproxTable;
use crate::error::{Error, Result};
use crate::fracdiff::{frac_diff, frac_int_coeffs, split_order, trend_weights};
use crate::linalg::{cholesky_in_place, Matrix};
use crate::model::ThetaParams;
use crate::scalar::{dot, Real};
use crate::ssm_exact::{steady_state_loglik, FilterOutput};

/// Largest number of stacked observations `n p` accepted by default.
pub const DEFAULT_COV_CAP: usize = 10_000;

/// Joint second moments of the stacked observations and the trend shocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsCovariance<T> {
    /// `np x np` covariance of `(y_1', ..., y_n')'`.
    pub sigma_y: Matrix<T>,
    /// Lower Cholesky factor of `sigma_y`.
    pub chol: Matrix<T>,
    /// `n x np` cross-covariance `Cov(eta_j, y_s)`.
    pub sigma_eta_y: Matrix<T>,
    pub n: usize,
    pub p: usize,
}

impl<T: Real> ObsCovariance<T> {
    /// `p x p` block `(s, t)` of `sigma_y`.
    pub fn block(&self, s: usize, t: usize) -> Matrix<T> {
        let p = self.p;
        Matrix::from_fn(p, p, |i, j| self.sigma_y[(s * p + i, t * p + j)])
    }

    /// Diagonal block `L_tt` of the Cholesky factor.
    pub fn chol_block(&self, t: usize) -> Matrix<T> {
        let p = self.p;
        Matrix::from_fn(p, p, |i, j| self.chol[(t * p + i, t * p + j)])
    }
}

pub fn build_obs_covariance<T: Real>(theta: &ThetaParams<T>, n: usize) -> Result<ObsCovariance<T>> {
    build_obs_covariance_capped(theta, n, DEFAULT_COV_CAP)
}

/// `Cov(y_s, y_t) = Gamma(s, t) beta beta' + 1{s = t} Sigma` with
/// `Gamma(s, t) = sigma_eta^2 sum_j c_{s-j} c_{t-j}`, computed through
/// `Gamma(s, t) = Gamma(s-1, t-1) + sigma_eta^2 c_s c_t`; and
/// `Cov(eta_j, y_s) = sigma_eta^2 beta c_{s-j}` for `s >= j`.
pub fn build_obs_covariance_capped<T: Real>(
    theta: &ThetaParams<T>,
    n: usize,
    cap: usize,
) -> Result<ObsCovariance<T>> {
    let p = theta.p();
    theta.ensure_valid(p)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let np = n * p;
    if np > cap {
        return Err(Error::StateTooLarge { requested: np, cap });
    }
    let c = trend_weights(theta.b, n)?;
    let s2 = theta.sigma_eta2;
    let beta = &theta.beta;

    let mut gamma = Matrix::zeros(n, n);
    for t in 0..n {
        gamma[(0, t)] = s2 * c[0] * c[t];
    }
    for s in 1..n {
        for t in s..n {
            gamma[(s, t)] = gamma[(s - 1, t - 1)] + s2 * c[s] * c[t];
        }
    }
    let mut sigma_y = Matrix::zeros(np, np);
    for s in 0..n {
        for t in s..n {
            let g = gamma[(s, t)];
            for i in 0..p {
                for j in 0..p {
                    let mut v = g * beta[i] * beta[j];
                    if s == t && i == j {
                        v += theta.sigma_diag[i];
                    }
                    sigma_y[(s * p + i, t * p + j)] = v;
                    sigma_y[(t * p + j, s * p + i)] = v;
                }
            }
        }
    }
    let mut sigma_eta_y = Matrix::zeros(n, np);
    for j in 0..n {
        for s in j..n {
            for i in 0..p {
                sigma_eta_y[(j, s * p + i)] = s2 * beta[i] * c[s - j];
            }
        }
    }
    let mut chol = sigma_y.clone();
    cholesky_in_place(&mut chol)?;
    Ok(ObsCovariance {
        sigma_y,
        chol,
        sigma_eta_y,
        n,
        p,
    })
}

/// Which small system carries the trend.
#[derive(Clone, Copy, Debug)]
pub enum ApproxMode<'a> {
    /// First `m` lags of the fractional expansion.
    Truncation,
    /// ARMA(m, m) coefficients from a precomputed table.
    Arma(&'a ArmaApproxTable),
}

/// Serializable tag of the approximation used for a correction series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CorrectionMode {
    Truncation { m: usize },
    Arma { m: usize },
}

/// Approximation errors `E(x_t - x~_t | y_1..y_{t-1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSeries<T> {
    pub eps: Vec<T>,
    pub mode: CorrectionMode,
}

/// Companion-form system `s_{t+1} = A s_t + B eta_{t+1}` whose first state
/// element is the approximate trend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallSystem<T> {
    /// First column of `A`; ones sit on the superdiagonal.
    pub ar: Vec<T>,
    /// `B = (1, ma_1, ..., ma_{r-1})`.
    pub loading: Vec<T>,
}

impl<T: Real> SmallSystem<T> {
    pub fn dim(&self) -> usize {
        self.ar.len()
    }

    /// Builds the `(m+1)`-state system for `theta`. A unit root is folded
    /// into the autoregressive polynomial, so the dimension stays `m + 1`.
    pub fn for_theta(theta: &ThetaParams<T>, m: usize, mode: ApproxMode<'_>) -> Result<Self> {
        let split = split_order(theta.b)?;
        let r = m + 1;
        let (mut ar, ma) = match mode {
            ApproxMode::Truncation => {
                let phi = frac_int_coeffs(split.d, r)?.coeffs;
                (vec![T::zero(); r], phi[1..].to_vec())
            }
            ApproxMode::Arma(table) => {
                if table.m != m {
                    return Err(Error::InvalidArgument(format!(
                        "ARMA table has order {}, filter asked for {m}",
                        table.m
                    )));
                }
                let fit = table.eval::<T>(theta.b, 1)?;
                let mut ar = fit.ar.clone();
                ar.push(T::zero());
                (ar, fit.ma)
            }
        };
        if split.unit_root {
            // (1 - a(L)) (1 - L): a_1 + 1, a_i - a_{i-1}, ..., -a_m
            let a = ar.clone();
            ar[0] = a[0] + T::one();
            for i in 1..r {
                ar[i] = a[i] - a[i - 1];
            }
        }
        let mut loading = Vec::with_capacity(r);
        loading.push(T::one());
        loading.extend(ma);
        Ok(Self { ar, loading })
    }

    /// `A s`.
    pub fn apply(&self, s: &[T]) -> Vec<T> {
        let r = self.dim();
        (0..r)
            .map(|i| self.ar[i] * s[0] + if i + 1 < r { s[i + 1] } else { T::zero() })
            .collect()
    }

    /// `A^k B` for `k < len`.
    pub fn impulse_states(&self, len: usize) -> Vec<Vec<T>> {
        let mut out = Vec::with_capacity(len);
        let mut s = self.loading.clone();
        for _ in 0..len {
            let next = self.apply(&s);
            out.push(std::mem::replace(&mut s, next));
        }
        out
    }

    pub fn as_matrix(&self) -> Matrix<T> {
        let r = self.dim();
        Matrix::from_fn(r, r, |i, j| {
            if j == 0 {
                self.ar[i]
            } else if j == i + 1 {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}

/// Everything the corrected filter needs from one pass over the data.
struct CorrectionPass<T> {
    eps: Vec<T>,
    /// Per-period gains `Cov(alpha~_t, e_t)`, each `r x p` row-major.
    gains: Vec<Vec<T>>,
}

/// Single sequential pass computing `eps_t` and, optionally, the exact-law
/// gains of the small state.
///
/// `g_j = L^{-1} Cov(y, eta_j)` (the covariances of `eta_j` with the
/// standardized innovations) is built one block of rows at a time by forward
/// substitution; since `eta_j` is uncorrelated with `y_s` for `s < j`, the
/// substitution for `g_j` starts at block `j`. The running posterior means
/// `mu_j = E(eta_j | y_1..y_{t-1})` are updated with each new innovation.
fn correction_pass<T: Real>(
    cov: &ObsCovariance<T>,
    sys: &SmallSystem<T>,
    weights: &[T],
    e: &[T],
    want_gains: bool,
) -> CorrectionPass<T> {
    let (n, p) = (cov.n, cov.p);
    let np = n * p;
    let r = sys.dim();
    let lambda = if want_gains { sys.impulse_states(n) } else { Vec::new() };
    let mut g = Matrix::zeros(n, np);
    let mut mu = vec![T::zero(); n];
    let mut eps = vec![T::zero(); n];
    let mut gains = Vec::with_capacity(if want_gains { n } else { 0 });
    for t in 0..n {
        let mut acc = T::zero();
        for j in 0..t {
            acc += weights[t - j] * mu[j];
        }
        eps[t] = acc;
        for a in 0..p {
            let row = t * p + a;
            let lrow = cov.chol.row(row);
            let diag = lrow[row];
            for j in 0..=t {
                let start = j * p;
                let gj = g.row_mut(j);
                let s = cov.sigma_eta_y[(j, row)] - dot(&lrow[start..row], &gj[start..row]);
                gj[row] = s / diag;
            }
        }
        let et = &e[t * p..(t + 1) * p];
        for j in 0..=t {
            mu[j] += dot(&g.row(j)[t * p..(t + 1) * p], et);
        }
        if want_gains {
            let mut k = vec![T::zero(); r * p];
            for j in 0..=t {
                let gjt = &g.row(j)[t * p..(t + 1) * p];
                let lam = &lambda[t - j];
                for i in 0..r {
                    for a in 0..p {
                        k[i * p + a] += lam[i] * gjt[a];
                    }
                }
            }
            gains.push(k);
        }
    }
    CorrectionPass { eps, gains }
}

/// `delta_k = c_k - c~_k`: trend weight missed by the small system at lag k.
fn tail_weights<T: Real>(theta: &ThetaParams<T>, sys: &SmallSystem<T>, n: usize) -> Result<Vec<T>> {
    let c = trend_weights(theta.b, n)?;
    let approx = sys.impulse_states(n);
    Ok(c.iter().zip(&approx).map(|(&ck, s)| ck - s[0]).collect())
}

fn stacked<T: Real>(y: &Matrix<T>) -> Vec<T> {
    y.as_slice().to_vec()
}

fn check_inputs<T: Real>(y: &Matrix<T>, theta: &ThetaParams<T>, cov: Option<&ObsCovariance<T>>) -> Result<()> {
    let p = theta.p();
    theta.ensure_valid(p)?;
    if y.cols() != p {
        return Err(Error::Shape(format!("y has {} columns, theta has p = {p}", y.cols())));
    }
    if y.rows() == 0 {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    if y.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("y contains non-finite values".into()));
    }
    if let Some(cov) = cov {
        if cov.n != y.rows() || cov.p != p {
            return Err(Error::Shape(format!(
                "covariance built for n = {}, p = {}; data has n = {}, p = {p}",
                cov.n,
                cov.p,
                y.rows()
            )));
        }
    }
    Ok(())
}

/// Approximation errors `eps_t = sum_{j<t} delta_{t-j} E(eta_j | y_1..y_{t-1})`.
///
/// `cov` must have been built at the same `theta` and sample length.
pub fn approximation_error<T: Real>(
    theta: &ThetaParams<T>,
    cov: &ObsCovariance<T>,
    y: &Matrix<T>,
    m: usize,
    mode: ApproxMode<'_>,
) -> Result<CorrectionSeries<T>> {
    check_inputs(y, theta, Some(cov))?;
    let n = y.rows();
    let tag = correction_tag(m, mode);
    if m >= n {
        log::warn!("truncation order m = {m} >= n = {n}: nothing is truncated");
        if matches!(mode, ApproxMode::Truncation) {
            return Ok(CorrectionSeries { eps: vec![T::zero(); n], mode: tag });
        }
    }
    let sys = SmallSystem::for_theta(theta, m, mode)?;
    let weights = tail_weights(theta, &sys, n)?;
    let e = crate::linalg::forward_solve(&cov.chol, &stacked(y));
    let pass = correction_pass(cov, &sys, &weights, &e, false);
    Ok(CorrectionSeries { eps: pass.eps, mode: tag })
}

fn correction_tag(m: usize, mode: ApproxMode<'_>) -> CorrectionMode {
    match mode {
        ApproxMode::Truncation => CorrectionMode::Truncation { m },
        ApproxMode::Arma(_) => CorrectionMode::Arma { m },
    }
}

/// How the small state mean is updated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// Gains `Cov(alpha~_t, e_t)` from the joint law; exact.
    #[default]
    Exact,
    /// Kalman gains of the small system run as if it were the truth.
    TruncatedRiccati,
}

/// Corrected fast filter: same prediction errors and likelihood as the
/// full-state filter.
pub fn kalman_fast<T: Real>(
    y: &Matrix<T>,
    theta: &ThetaParams<T>,
    m: usize,
    mode: ApproxMode<'_>,
) -> Result<FilterOutput<T>> {
    let cov = build_obs_covariance(theta, y.rows())?;
    kalman_fast_with_cov(y, theta, &cov, m, mode, GainMode::Exact)
}

/// Corrected filter reusing a prebuilt covariance.
pub fn kalman_fast_with_cov<T: Real>(
    y: &Matrix<T>,
    theta: &ThetaParams<T>,
    cov: &ObsCovariance<T>,
    m: usize,
    mode: ApproxMode<'_>,
    gain: GainMode,
) -> Result<FilterOutput<T>> {
    check_inputs(y, theta, Some(cov))?;
    let (n, p) = y.shape();
    let sys = SmallSystem::for_theta(theta, m, mode)?;
    let weights = tail_weights(theta, &sys, n)?;
    let e_data = crate::linalg::forward_solve(&cov.chol, &stacked(y));
    let pass = correction_pass(cov, &sys, &weights, &e_data, gain == GainMode::Exact);
    match gain {
        GainMode::TruncatedRiccati => riccati_filter(y, theta, &sys, &pass.eps),
        GainMode::Exact => {
            let r = sys.dim();
            let mut a = vec![T::zero(); r];
            let mut v = Matrix::zeros(n, p);
            let mut fs = Vec::with_capacity(n);
            let mut x_pred = Vec::with_capacity(n);
            let mut x_filt = Vec::with_capacity(n);
            let mut p11 = Vec::with_capacity(n);
            let mut p11_filt = Vec::with_capacity(n);
            let bb: T = dot(&theta.beta, &theta.beta);
            for t in 0..n {
                let xp = a[0] + pass.eps[t];
                for i in 0..p {
                    // y_t - beta eps_t - beta a_t[0]
                    v[(t, i)] = y[(t, i)] - theta.beta[i] * pass.eps[t] - theta.beta[i] * a[0];
                }
                let ltt = cov.chol_block(t);
                let et = crate::linalg::forward_solve(&ltt, v.row(t));
                let k = &pass.gains[t];
                let mut af = a.clone();
                for i in 0..r {
                    af[i] += dot(&k[i * p..(i + 1) * p], &et);
                }
                a = sys.apply(&af);

                let mut f = ltt.matmul(&ltt.transpose());
                f.symmetrize();
                // F_t - Sigma = omega_t beta beta'
                let mut num = T::zero();
                for i in 0..p {
                    for j in 0..p {
                        let s = if i == j { theta.sigma_diag[i] } else { T::zero() };
                        num += theta.beta[i] * (f[(i, j)] - s) * theta.beta[j];
                    }
                }
                let omega = (num / (bb * bb)).max(T::zero());
                let fb = f.solve_spd(&theta.beta).map_err(|_| Error::SingularCovariance { t })?;
                let gain_x = omega * dot(&fb, v.row(t));
                let bfb = dot(&fb, &theta.beta);
                x_pred.push(xp);
                x_filt.push(xp + gain_x);
                p11.push(omega);
                p11_filt.push(omega - omega * omega * bfb);
                fs.push(f);
            }
            let f_steady = fs.last().cloned().expect("n >= 1");
            let loglik = steady_state_loglik(&v, &f_steady)?;
            Ok(FilterOutput {
                v,
                f: fs,
                x_pred,
                x_filt,
                p11,
                p11_filt,
                loglik,
                f_steady,
            })
        }
    }
}

/// Filter of the small system alone (no correction): the cheap likelihood
/// used to screen starting values.
pub fn kalman_uncorrected<T: Real>(
    y: &Matrix<T>,
    theta: &ThetaParams<T>,
    m: usize,
    mode: ApproxMode<'_>,
) -> Result<FilterOutput<T>> {
    check_inputs(y, theta, None)?;
    let sys = SmallSystem::for_theta(theta, m, mode)?;
    riccati_filter(y, theta, &sys, &vec![T::zero(); y.rows()])
}

/// Standard Kalman filter of `y_t - beta eps_t` on the small system with its
/// own Riccati recursion, `P_{1|0} = sigma_eta^2 B B'`.
fn riccati_filter<T: Real>(
    y: &Matrix<T>,
    theta: &ThetaParams<T>,
    sys: &SmallSystem<T>,
    eps: &[T],
) -> Result<FilterOutput<T>> {
    let (n, p) = y.shape();
    let r = sys.dim();
    let a_mat = sys.as_matrix();
    let a_t = a_mat.transpose();
    let q = Matrix::from_fn(r, r, |i, j| theta.sigma_eta2 * sys.loading[i] * sys.loading[j]);
    let mut a = vec![T::zero(); r];
    let mut pm = q.clone();
    let mut v = Matrix::zeros(n, p);
    let mut fs = Vec::with_capacity(n);
    let mut x_pred = Vec::with_capacity(n);
    let mut x_filt = Vec::with_capacity(n);
    let mut p11 = Vec::with_capacity(n);
    let mut p11_filt = Vec::with_capacity(n);
    for t in 0..n {
        let omega = pm[(0, 0)];
        let f = Matrix::from_fn(p, p, |i, j| {
            let base = theta.beta[i] * omega * theta.beta[j];
            if i == j {
                base + theta.sigma_diag[i]
            } else {
                base
            }
        });
        for i in 0..p {
            v[(t, i)] = y[(t, i)] - theta.beta[i] * (eps[t] + a[0]);
        }
        let fb = f.solve_spd(&theta.beta).map_err(|_| Error::SingularCovariance { t })?;
        let gv = dot(&fb, v.row(t));
        let bfb = dot(&fb, &theta.beta);
        // P Z' F^{-1} v with Z = [beta 0 ...]: first column of P times beta'F^{-1}v
        let pcol: Vec<T> = (0..r).map(|i| pm[(i, 0)]).collect();
        let mut af = a.clone();
        for i in 0..r {
            af[i] += pcol[i] * gv;
        }
        let mut pf = pm.clone();
        for i in 0..r {
            for j in 0..r {
                pf[(i, j)] -= pcol[i] * pcol[j] * bfb;
            }
        }
        x_pred.push(a[0] + eps[t]);
        x_filt.push(af[0] + eps[t]);
        p11.push(omega);
        p11_filt.push(pf[(0, 0)]);
        fs.push(f);
        a = sys.apply(&af);
        let mut next = a_mat.matmul(&pf).matmul(&a_t).add(&q);
        next.symmetrize();
        pm = next;
    }
    let f_steady = fs.last().cloned().expect("n >= 1");
    let loglik = steady_state_loglik(&v, &f_steady)?;
    Ok(FilterOutput {
        v,
        f: fs,
        x_pred,
        x_filt,
        p11,
        p11_filt,
        loglik,
        f_steady,
    })
}

/// Trend, two-standard-deviation band, idiosyncratic parts and recovered
/// shocks from a filter run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Components<T> {
    pub trend: Vec<T>,
    /// `2 sqrt(Var(x_t | y_1..y_t))`.
    pub trend_band: Vec<T>,
    pub idio: Matrix<T>,
    /// `(1 - L)_+^b` applied to the filtered trend.
    pub eta_hat: Vec<T>,
}

pub fn extract_components<T: Real>(
    y: &Matrix<T>,
    theta: &ThetaParams<T>,
    filter: &FilterOutput<T>,
) -> Result<Components<T>> {
    let (n, p) = y.shape();
    if filter.n() != n || p != theta.p() {
        return Err(Error::Shape("filter output does not match the data".into()));
    }
    let trend = filter.x_filt.clone();
    let trend_band = filter
        .p11_filt
        .iter()
        .map(|&v| T::lit(2.0) * v.max(T::zero()).sqrt())
        .collect();
    let idio = Matrix::from_fn(n, p, |t, i| y[(t, i)] - theta.beta[i] * trend[t]);
    let eta_hat = frac_diff(&trend, theta.b)?;
    Ok(Components {
        trend,
        trend_band,
        idio,
        eta_hat,
    })
}
