//! Exact filtering of the fractional trend model.
//!
//! Two engines produce the same one-step predictions:
//!
//! * [`kalman_exact`] runs the textbook Kalman recursion on the full
//!   `(n+1)`-dimensional state `alpha_t = (x_t, sum_{j>=1} phi_j eta_{t+1-j}, ...)`.
//!   It uses dense matrix products throughout and serves as the reference.
//! * [`kalman_structured`] exploits that `y_t` only enters through the GLS
//!   combination `w_t = beta' Sigma^{-1} y_t / beta' Sigma^{-1} beta`. The
//!   covariance of `w` is Toeplitz-like with displacement rank two, so the
//!   generalized Schur algorithm factors it in `O(n^2)` time and `O(n)` memory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fracdiff::{frac_diff_coeffs, frac_int_coeffs, split_order, trend_weights};
use crate::linalg::Matrix;
use crate::model::ThetaParams;
use crate::scalar::Real;

/// Largest sample length accepted by the full-state filter.
pub const DEFAULT_STATE_CAP: usize = 5000;

/// Exact state-space system for a sample of length `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactSystem<T> {
    /// `(n+1) x (n+1)` transition: unit-root indicator at `(0,0)`, ones on
    /// the superdiagonal.
    pub transition: Matrix<T>,
    /// Shock loading `(1, phi_1(d), ..., phi_n(d))`.
    pub r: Vec<T>,
    /// `p x (n+1)` observation matrix `[beta 0 ... 0]`.
    pub z: Matrix<T>,
    /// Diagonal observation covariance.
    pub sigma: Matrix<T>,
    pub sigma_eta2: T,
    pub n: usize,
}

impl<T: Real> ExactSystem<T> {
    pub fn state_dim(&self) -> usize {
        self.n + 1
    }

    /// `P_{1|0} = sigma_eta^2 R R'`, implied by zero pre-sample shocks.
    pub fn initial_covariance(&self) -> Matrix<T> {
        let k = self.state_dim();
        Matrix::from_fn(k, k, |i, j| self.sigma_eta2 * self.r[i] * self.r[j])
    }
}

/// Builds the exact system, refusing samples longer than [`DEFAULT_STATE_CAP`].
pub fn build_exact_system<T: Real>(theta: &ThetaParams<T>, n: usize) -> Result<ExactSystem<T>> {
    build_exact_system_capped(theta, n, DEFAULT_STATE_CAP)
}

pub fn build_exact_system_capped<T: Real>(
    theta: &ThetaParams<T>,
    n: usize,
    cap: usize,
) -> Result<ExactSystem<T>> {
    let p = theta.p();
    theta.ensure_valid(p)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if n > cap {
        return Err(Error::StateTooLarge { requested: n, cap });
    }
    let split = split_order(theta.b)?;
    let k = n + 1;
    let mut transition = Matrix::zeros(k, k);
    if split.unit_root {
        transition[(0, 0)] = T::one();
    }
    for i in 0..n {
        transition[(i, i + 1)] = T::one();
    }
    let r = frac_int_coeffs(split.d, k)?.coeffs;
    let mut z = Matrix::zeros(p, k);
    for i in 0..p {
        z[(i, 0)] = theta.beta[i];
    }
    Ok(ExactSystem {
        transition,
        r,
        z,
        sigma: Matrix::diag(&theta.sigma_diag),
        sigma_eta2: theta.sigma_eta2,
        n,
    })
}

/// Which prediction-error covariance enters the likelihood.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SteadyState {
    /// `F_n`, the last value of the recursion.
    #[default]
    LastPeriod,
    /// Continue the Riccati recursion of the fixed system until successive
    /// `F` differ by less than `tol` (max-abs) or `max_iter` is reached.
    RiccatiFixedPoint { tol: f64, max_iter: usize },
}

/// Options for the full-state filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactConfig {
    pub state_cap: usize,
    pub steady: SteadyState,
    /// Check the smallest eigenvalue of every `P_{t|t-1}` instead of only
    /// its diagonal. Costly; meant for tests.
    pub eigen_psd_check: bool,
}

impl Default for ExactConfig {
    fn default() -> Self {
        Self {
            state_cap: DEFAULT_STATE_CAP,
            steady: SteadyState::LastPeriod,
            eigen_psd_check: false,
        }
    }
}

/// Per-period filter output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput<T> {
    /// `n x p` prediction errors `y_t - beta x_{t|t-1}`.
    pub v: Matrix<T>,
    /// Prediction-error covariances `F_t = beta omega_t beta' + Sigma`.
    pub f: Vec<Matrix<T>>,
    pub x_pred: Vec<T>,
    pub x_filt: Vec<T>,
    /// `omega_t = Var(x_t | y_1..y_{t-1})`.
    pub p11: Vec<T>,
    /// `Var(x_t | y_1..y_t)`.
    pub p11_filt: Vec<T>,
    pub loglik: T,
    pub f_steady: Matrix<T>,
}

impl<T: Real> FilterOutput<T> {
    pub fn n(&self) -> usize {
        self.v.rows()
    }

    /// Largest absolute difference of prediction errors.
    pub fn max_v_diff(&self, other: &Self) -> T {
        self.v.max_abs_diff(&other.v)
    }
}

/// `-(n/2) log det F - (1/2) tr(F^{-1} sum v v') - (np/2) log 2 pi`.
pub fn steady_state_loglik<T: Real>(v: &Matrix<T>, f_steady: &Matrix<T>) -> Result<T> {
    let (n, p) = v.shape();
    let l = f_steady.cholesky()?;
    let log_det = (0..p).map(|i| l[(i, i)].ln()).sum::<T>() * T::lit(2.0);
    let mut quad = T::zero();
    for t in 0..n {
        let e = crate::linalg::forward_solve(&l, v.row(t));
        quad += crate::scalar::dot(&e, &e);
    }
    let nf = T::from_count(n);
    let pf = T::from_count(p);
    let two_pi = T::lit(2.0 * std::f64::consts::PI);
    Ok(-nf / T::lit(2.0) * log_det - quad / T::lit(2.0) - nf * pf / T::lit(2.0) * two_pi.ln())
}

fn check_data<T: Real>(y: &Matrix<T>, p: usize) -> Result<()> {
    if y.cols() != p {
        return Err(Error::Shape(format!("y has {} columns, theta has p = {p}", y.cols())));
    }
    if y.rows() == 0 {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    if y.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("y contains non-finite values".into()));
    }
    Ok(())
}

/// Full-state Kalman filter with default options.
pub fn kalman_exact<T: Real>(y: &Matrix<T>, theta: &ThetaParams<T>) -> Result<FilterOutput<T>> {
    kalman_exact_with(y, theta, &ExactConfig::default())
}

/// Textbook prediction/update recursion on the exact `(n+1)`-state system.
///
/// The covariance update uses the Joseph form, evaluated through the gain so
/// that it costs `O(p N^2)`; the prediction step `T P T' + sigma^2 R R'` uses
/// dense products.
pub fn kalman_exact_with<T: Real>(
    y: &Matrix<T>,
    theta: &ThetaParams<T>,
    cfg: &ExactConfig,
) -> Result<FilterOutput<T>> {
    let p = theta.p();
    check_data(y, p)?;
    let n = y.rows();
    let sys = build_exact_system_capped(theta, n, cfg.state_cap)?;
    let k = sys.state_dim();
    let tt = sys.transition.transpose();
    let q = Matrix::from_fn(k, k, |i, j| sys.sigma_eta2 * sys.r[i] * sys.r[j]);
    let z_t = sys.z.transpose();

    let mut a = vec![T::zero(); k];
    let mut pm = sys.initial_covariance();
    let mut v = Matrix::zeros(n, p);
    let mut fs = Vec::with_capacity(n);
    let mut x_pred = Vec::with_capacity(n);
    let mut x_filt = Vec::with_capacity(n);
    let mut p11 = Vec::with_capacity(n);
    let mut p11_filt = Vec::with_capacity(n);

    let step = |a: &mut Vec<T>, pm: &mut Matrix<T>, obs: Option<&[T]>, t: usize| -> Result<(Matrix<T>, Vec<T>, Vec<T>, T)> {
        check_psd(pm, cfg.eigen_psd_check, t)?;
        let zp = sys.z.matmul(pm);
        let mut f = zp.matmul(&z_t).add(&sys.sigma);
        f.symmetrize();
        let f_inv = f.inverse_spd().map_err(|_| Error::SingularCovariance { t })?;
        // K = P Z' F^{-1}
        let kg = zp.transpose().matmul(&f_inv);
        let mut vt = vec![T::zero(); p];
        if let Some(obs) = obs {
            let za = sys.z.mul_vec(a);
            for i in 0..p {
                vt[i] = obs[i] - za[i];
            }
        }
        let kv = kg.mul_vec(&vt);
        let af: Vec<T> = a.iter().zip(&kv).map(|(&x, &d)| x + d).collect();
        // Joseph form: (I - K Z) P (I - K Z)' + K Sigma K'
        let lhs = pm.sub(&kg.matmul(&zp));
        let lz = lhs.matmul(&z_t);
        let mut pf = lhs.sub(&lz.matmul(&kg.transpose())).add(&kg.matmul(&sys.sigma).matmul(&kg.transpose()));
        pf.symmetrize();
        let filt_var = pf[(0, 0)];
        let mut next = sys.transition.matmul(&pf).matmul(&tt).add(&q);
        next.symmetrize();
        *pm = next;
        *a = sys.transition.mul_vec(&af);
        Ok((f, vt, af, filt_var))
    };

    for t in 0..n {
        x_pred.push(a[0]);
        p11.push(pm[(0, 0)]);
        let (f, vt, af, filt_var) = step(&mut a, &mut pm, Some(y.row(t)), t)?;
        v.row_mut(t).copy_from_slice(&vt);
        x_filt.push(af[0]);
        p11_filt.push(filt_var);
        fs.push(f);
    }

    let f_last = fs.last().cloned().expect("n >= 1");
    let f_steady = match cfg.steady {
        SteadyState::LastPeriod => f_last,
        SteadyState::RiccatiFixedPoint { tol, max_iter } => {
            let mut prev = f_last;
            let mut it = 0;
            loop {
                let (f, _, _, _) = step(&mut a, &mut pm, None, n + it)?;
                let diff = f.max_abs_diff(&prev).to_f64_lossy();
                prev = f;
                it += 1;
                if diff < tol || it >= max_iter {
                    break;
                }
            }
            prev
        }
    };
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

const PSD_TOL: f64 = -1e-10;

fn check_psd<T: Real>(pm: &Matrix<T>, eigen: bool, t: usize) -> Result<()> {
    let scale = pm.max_abs().max(T::one());
    let bad = if eigen {
        pm.symmetric_eigenvalues()
            .first()
            .map_or(false, |&e| (e / scale).to_f64_lossy() < PSD_TOL)
    } else {
        (0..pm.rows()).any(|i| (pm[(i, i)] / scale).to_f64_lossy() < PSD_TOL)
    };
    if bad {
        return Err(Error::NotPositiveDefinite {
            pivot: t,
            value: f64::NAN,
        });
    }
    Ok(())
}

/// Exact one-step predictions through the generalized Schur algorithm.
///
/// With `h = Sigma^{-1} beta / c`, `c = beta' Sigma^{-1} beta`, the
/// combination `w_t = h' y_t = x_t + noise` (noise variance `s^2 = 1/c`)
/// carries all information about the trend; the orthogonal residual
/// `y_t - beta w_t` is independent white noise. `Cov(w) = sigma_eta^2 C C' +
/// s^2 I` with `C` lower-triangular Toeplitz in the trend weights, so
/// `Cov(w) - Z Cov(w) Z' = g g' + s^2 e_1 e_1'` for the down-shift `Z`.
/// Each Schur step rotates the two generators, yields one column of the
/// Cholesky factor and advances the innovation recursion for `w`.
pub fn kalman_structured<T: Real>(y: &Matrix<T>, theta: &ThetaParams<T>) -> Result<FilterOutput<T>> {
    let p = theta.p();
    theta.ensure_valid(p)?;
    check_data(y, p)?;
    let n = y.rows();
    let c = trend_weights(theta.b, n)?;
    let h = theta.gls_weights();
    let s2 = T::one() / theta.signal_precision();
    let s = s2.sqrt();
    let sd_eta = theta.sigma_eta2.sqrt();

    // residual of the forward substitution: starts as w, row i is the
    // innovation of w_i once columns 0..i have been eliminated
    let mut res: Vec<T> = (0..n).map(|t| crate::scalar::dot(&h, y.row(t))).collect();
    let w = res.clone();
    // generator 1 is stored relative to the current step: g1[k] is row i + k
    let mut g1: Vec<T> = c.iter().map(|&ck| sd_eta * ck).collect();
    let mut g2 = vec![T::zero(); n];
    g2[0] = s;

    let mut innov = vec![T::zero(); n];
    let mut dvar = vec![T::zero(); n];
    for i in 0..n {
        let len = n - i;
        let (a0, b0) = (g1[0], g2[i]);
        let rho = a0.hypot(b0);
        if !(rho > T::zero()) || !rho.is_finite() {
            return Err(Error::SingularCovariance { t: i });
        }
        let (cs, sn) = (a0 / rho, b0 / rho);
        let g2i = &mut g2[i..];
        for k in 0..len {
            let (x1, x2) = (g1[k], g2i[k]);
            g1[k] = cs * x1 + sn * x2;
            g2i[k] = cs * x2 - sn * x1;
        }
        g1[0] = rho;
        g2i[0] = T::zero();
        let a = res[i];
        innov[i] = a;
        dvar[i] = rho * rho;
        let e = a / rho;
        for k in 1..len {
            res[i + k] -= g1[k] * e;
        }
        // shift generator 1 down by one row for the next step
        // (row i + 1 + k of the next step is row i + k of this one)
    }

    let mut v = Matrix::zeros(n, p);
    let mut fs = Vec::with_capacity(n);
    let mut x_pred = Vec::with_capacity(n);
    let mut x_filt = Vec::with_capacity(n);
    let mut p11 = Vec::with_capacity(n);
    let mut p11_filt = Vec::with_capacity(n);
    for t in 0..n {
        let xp = w[t] - innov[t];
        let omega = (dvar[t] - s2).max(T::zero());
        for i in 0..p {
            v[(t, i)] = y[(t, i)] - theta.beta[i] * xp;
        }
        let f = Matrix::from_fn(p, p, |i, j| {
            let base = theta.beta[i] * omega * theta.beta[j];
            if i == j {
                base + theta.sigma_diag[i]
            } else {
                base
            }
        });
        x_pred.push(xp);
        x_filt.push(xp + omega / dvar[t] * innov[t]);
        p11.push(omega);
        p11_filt.push(omega - omega * omega / dvar[t]);
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

/// Result of recomputing the trend prediction from the GLS projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition<T> {
    /// `z_t = h'(Delta^b y_t - E(Delta^b y_t | y_1..y_{t-1}))`.
    pub z: Vec<T>,
    /// `max_t |x_{t|t-1} - h' y_t + z_t|`.
    pub max_deviation: T,
}

/// Checks `x_{t|t-1} = h' y_t - z_t` where `h' = beta' Sigma^{-1} / beta'
/// Sigma^{-1} beta` and `z_t` is the projected innovation of the
/// fractionally differenced observation. The conditional expectation of
/// `Delta^b y_t` is assembled from the lagged observations and the filter's
/// own `beta x_{t|t-1}`.
pub fn decomposition_check<T: Real>(
    filter: &FilterOutput<T>,
    y: &Matrix<T>,
    theta: &ThetaParams<T>,
) -> Result<Decomposition<T>> {
    let p = theta.p();
    check_data(y, p)?;
    let n = y.rows();
    if filter.n() != n {
        return Err(Error::Shape(format!("filter has {} periods, data {n}", filter.n())));
    }
    let h = theta.gls_weights();
    let pi = frac_diff_coeffs(theta.b, n)?.coeffs;
    let mut diffed = Matrix::zeros(n, p);
    for i in 0..p {
        let col = crate::fracdiff::convolve_truncated(&y.column(i), &pi);
        for t in 0..n {
            diffed[(t, i)] = col[t];
        }
    }
    let mut z = Vec::with_capacity(n);
    let mut worst = T::zero();
    for t in 0..n {
        let mut zt = T::zero();
        let mut hy = T::zero();
        for i in 0..p {
            let lagged: T = (1..=t).map(|j| pi[j] * y[(t - j, i)]).sum();
            let cond = lagged + theta.beta[i] * filter.x_pred[t];
            zt += h[i] * (diffed[(t, i)] - cond);
            hy += h[i] * y[(t, i)];
        }
        worst = worst.max((filter.x_pred[t] - hy + zt).abs());
        z.push(zt);
    }
    Ok(Decomposition {
        z,
        max_deviation: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate;

    fn theta(p: usize, b: f64) -> ThetaParams<f64> {
        let beta = [1.0, 0.8, 1.2][..p].to_vec();
        let sig = [0.5, 0.7, 0.9][..p].to_vec();
        ThetaParams::new(beta, sig, b)
    }

    #[test]
    fn system_at_unit_root() {
        let sys = build_exact_system(&ThetaParams::new(vec![2.0], vec![1.0], 1.0), 3).unwrap();
        let expect = Matrix::from_rows(&[
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(sys.transition, expect);
        assert_eq!(sys.r, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn system_loading_and_observation_matrix() {
        let sys = build_exact_system(&theta(3, 0.5), 2).unwrap();
        assert_eq!(sys.r, vec![1.0, 0.5, 0.375]);
        for i in 0..3 {
            for j in 1..3 {
                assert_eq!(sys.z[(i, j)], 0.0);
            }
            assert_ne!(sys.z[(i, 0)], 0.0);
        }
        let p0 = sys.initial_covariance();
        assert_eq!(p0[(1, 2)], 0.5 * 0.375);
    }

    #[test]
    fn refuses_oversized_state() {
        let e = build_exact_system_capped(&theta(1, 0.3), 11, 10).unwrap_err();
        assert!(matches!(e, Error::StateTooLarge { requested: 11, cap: 10 }));
    }

    #[test]
    fn nearly_observed_white_noise_trend() {
        // b = 0 and Sigma -> 0: y_t = x_t is observed but x_{t+1} is fresh noise
        let th = ThetaParams::new(vec![1.0f64], vec![1e-12], 0.0);
        let y = Matrix::from_vec(3, 1, vec![0.7, -1.1, 0.4]).unwrap();
        let out = kalman_exact(&y, &th).unwrap();
        assert_eq!(out.x_pred, vec![0.0; 3]);
        for t in 0..3 {
            assert!((out.v[(t, 0)] - y[(t, 0)]).abs() < 1e-15);
            assert!((out.x_filt[t] - y[(t, 0)]).abs() < 1e-9);
        }
    }

    #[test]
    fn white_noise_loglik_is_closed_form() {
        let th = ThetaParams::new(vec![0.6], vec![1.3], 0.0);
        let s = simulate(&th, 80, 5).unwrap();
        let var = 0.36 + 1.3;
        let closed: f64 = s
            .y
            .column(0)
            .iter()
            .map(|v| -0.5 * (2.0 * std::f64::consts::PI * var).ln() - v * v / (2.0 * var))
            .sum();
        let exact = kalman_exact(&s.y, &th).unwrap();
        let fast = kalman_structured(&s.y, &th).unwrap();
        assert!((exact.loglik - closed).abs() < 1e-10);
        assert!((fast.loglik - closed).abs() < 1e-10);
    }

    /// Scalar-state filter for `x_t = x_{t-1} + eta_t`, written independently.
    fn local_level(y: &Matrix<f64>, th: &ThetaParams<f64>) -> (Vec<f64>, Vec<f64>) {
        let (n, p) = y.shape();
        let (mut a, mut pp) = (0.0, th.sigma_eta2);
        let mut vs = Vec::new();
        let mut xp = Vec::new();
        for t in 0..n {
            xp.push(a);
            let f = Matrix::from_fn(p, p, |i, j| {
                th.beta[i] * th.beta[j] * pp + if i == j { th.sigma_diag[i] } else { 0.0 }
            });
            let fi = f.inverse().unwrap();
            let v: Vec<f64> = (0..p).map(|i| y[(t, i)] - th.beta[i] * a).collect();
            let g = fi.mul_vec(&th.beta);
            let gain: f64 = g.iter().zip(&v).map(|(x, y)| x * y).sum();
            let bfb: f64 = g.iter().zip(&th.beta).map(|(x, y)| x * y).sum();
            a += pp * gain;
            pp = pp - pp * pp * bfb + th.sigma_eta2;
            vs.extend(v);
        }
        (vs, xp)
    }

    #[test]
    fn unit_root_matches_independent_local_level_filter() {
        let th = theta(3, 1.0);
        let s = simulate(&th, 60, 11).unwrap();
        let (v, xp) = local_level(&s.y, &th);
        for out in [kalman_exact(&s.y, &th).unwrap(), kalman_structured(&s.y, &th).unwrap()] {
            for (a, b) in out.v.as_slice().iter().zip(&v) {
                assert!((a - b).abs() < 1e-10);
            }
            for (a, b) in out.x_pred.iter().zip(&xp) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn structured_engine_equals_full_state_filter() {
        for (p, b) in [(1, 0.2), (2, 0.476), (3, 0.8), (2, 1.2), (3, 1.45)] {
            let th = theta(p, b);
            let s = simulate(&th, 90, 7 + p as u64).unwrap();
            let e = kalman_exact_with(&s.y, &th, &ExactConfig { eigen_psd_check: true, ..Default::default() }).unwrap();
            let f = kalman_structured(&s.y, &th).unwrap();
            assert!(e.max_v_diff(&f) < 1e-10, "b = {b}");
            assert!((e.loglik - f.loglik).abs() < 1e-8);
            for t in 0..90 {
                assert!(e.f[t].max_abs_diff(&f.f[t]) < 1e-10);
                assert!((e.x_filt[t] - f.x_filt[t]).abs() < 1e-10);
                assert!((e.p11_filt[t] - f.p11_filt[t]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn free_shock_variance_is_respected() {
        let th = ThetaParams::with_free_shock_variance(vec![1.0, 0.8], vec![0.1, 0.2], 0.6, 0.05);
        let s = simulate(&th, 70, 3).unwrap();
        let e = kalman_exact(&s.y, &th).unwrap();
        let f = kalman_structured(&s.y, &th).unwrap();
        assert!(e.max_v_diff(&f) < 1e-10);
    }

    #[test]
    fn innovations_are_uncorrelated_at_the_truth() {
        let th = theta(2, 0.7);
        let s = simulate(&th, 4000, 21).unwrap();
        let out = kalman_structured(&s.y, &th).unwrap();
        let n = 4000.0f64;
        for i in 0..2 {
            let v = out.v.column(i);
            let c0: f64 = v.iter().map(|x| x * x).sum();
            let mut bad = 0;
            for lag in 1..=10 {
                let c: f64 = (lag..v.len()).map(|t| v[t] * v[t - lag]).sum();
                if (c / c0).abs() > 2.0 / n.sqrt() {
                    bad += 1;
                }
            }
            assert!(bad <= 2, "component {i}: {bad} lags outside the band");
        }
    }

    #[test]
    fn prediction_variance_settles() {
        for b in [0.3, 0.8, 1.2] {
            let th = theta(2, b);
            let s = simulate(&th, 400, 2).unwrap();
            let out = kalman_structured(&s.y, &th).unwrap();
            let d = |t: usize| out.f[t].max_abs_diff(&out.f[t - 1]);
            // changes shrink and F is stable to six digits well before n
            assert!(d(399) <= d(100) && d(100) <= d(20), "b = {b}");
            let rel = out.f[399].max_abs_diff(&out.f[300]) / out.f[399].max_abs();
            assert!(rel < 1e-6 || b >= 1.0 && rel < 1e-4, "b = {b}: {rel}");
        }
    }

    #[test]
    fn riccati_fixed_point_is_close_to_last_period() {
        let th = theta(2, 0.4);
        let s = simulate(&th, 40, 1).unwrap();
        let cfg = ExactConfig {
            steady: SteadyState::RiccatiFixedPoint { tol: 1e-12, max_iter: 400 },
            ..Default::default()
        };
        let a = kalman_exact(&s.y, &th).unwrap();
        let b = kalman_exact_with(&s.y, &th, &cfg).unwrap();
        assert_eq!(a.v, b.v);
        assert!(a.f_steady.max_abs_diff(&b.f_steady) < 1e-2);
        assert!((a.loglik - b.loglik).abs() < 1.0);
    }

    #[test]
    fn decomposition_identity_holds() {
        for b in [0.3, 0.9, 1.3] {
            let th = theta(3, b);
            let s = simulate(&th, 120, 4).unwrap();
            let fit_at = theta(3, (b - 0.2f64).max(0.0));
            for t in [&th, &fit_at] {
                let out = kalman_structured(&s.y, t).unwrap();
                let d = decomposition_check(&out, &s.y, t).unwrap();
                assert!(d.max_deviation < 1e-8, "b = {b}: {}", d.max_deviation);
            }
        }
    }

    #[test]
    fn rejects_mismatched_data() {
        let th = theta(2, 0.3);
        let y = Matrix::<f64>::zeros(5, 3);
        assert!(matches!(kalman_exact(&y, &th), Err(Error::Shape(_))));
        let mut y = Matrix::<f64>::zeros(5, 2);
        y[(1, 1)] = f64::NAN;
        assert!(matches!(kalman_structured(&y, &th), Err(Error::Data(_))));
    }

    #[test]
    fn single_precision_filters_agree_loosely() {
        let th = theta(2, 0.6);
        let s = simulate(&th, 50, 8).unwrap();
        let y32 = Matrix::from_fn(50, 2, |i, j| s.y[(i, j)] as f32);
        let a = kalman_structured(&y32, &th.cast::<f32>()).unwrap();
        let b = kalman_structured(&s.y, &th).unwrap();
        for t in 0..50 {
            assert!((a.x_pred[t] as f64 - b.x_pred[t]).abs() < 1e-3);
        }
    }
}
