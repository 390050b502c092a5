//! Parameters, identification rules and the exact data-generating process.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fracdiff::{cumulate, frac_int_coeffs, split_order};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Upper end (exclusive) of the admissible integration orders.
pub const B_MAX: f64 = 1.5;

/// Distance from `b = 1/2` under which estimates are flagged.
pub const HALF_FLAG_RADIUS: f64 = 0.02;

/// How the scale of the common trend is pinned down.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `Var(eta) = 1` and `beta[0] > 0`.
    #[default]
    FirstLoadingPositive,
    /// `beta[0] = 1` and `Var(eta)` free.
    FirstLoadingUnity,
}

/// Model parameters `(beta, diag Sigma, b, sigma_eta^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaParams<T> {
    pub beta: Vec<T>,
    pub sigma_diag: Vec<T>,
    pub b: T,
    pub sigma_eta2: T,
    #[serde(default)]
    pub normalization: Normalization,
}

impl<T: Real> ThetaParams<T> {
    /// Parameters under the unit shock-variance normalization.
    pub fn new(beta: Vec<T>, sigma_diag: Vec<T>, b: T) -> Self {
        Self {
            beta,
            sigma_diag,
            b,
            sigma_eta2: T::one(),
            normalization: Normalization::FirstLoadingPositive,
        }
    }

    /// Parameters with `beta[0] = 1` and a free shock variance.
    pub fn with_free_shock_variance(beta: Vec<T>, sigma_diag: Vec<T>, b: T, sigma_eta2: T) -> Self {
        Self {
            beta,
            sigma_diag,
            b,
            sigma_eta2,
            normalization: Normalization::FirstLoadingUnity,
        }
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// Number of free parameters. Both normalizations free `2p + 1` values:
    /// `p` loadings or `p - 1` loadings plus the shock variance, `p`
    /// variances and `b`.
    pub fn dim(&self) -> usize {
        2 * self.p() + 1
    }

    /// Every violated constraint, described in words. Empty when valid.
    pub fn validate(&self, p: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.beta.len() != p {
            out.push(format!("beta has length {}, expected {p}", self.beta.len()));
        }
        if self.sigma_diag.len() != p {
            out.push(format!("sigma_diag has length {}, expected {p}", self.sigma_diag.len()));
        }
        if self.beta.iter().any(|v| !v.is_finite()) {
            out.push("beta contains non-finite values".into());
        }
        if self.sigma_diag.iter().any(|v| !v.is_finite()) {
            out.push("sigma_diag contains non-finite values".into());
        } else if self.sigma_diag.iter().any(|&v| v <= T::zero()) {
            out.push("Σ not full rank: every idiosyncratic variance must be > 0".into());
        }
        if !(self.b >= T::zero() && self.b < T::lit(B_MAX)) {
            out.push(format!("b outside [0, 1.5): {}", self.b));
        }
        if !(self.sigma_eta2.is_finite() && self.sigma_eta2 > T::zero()) {
            out.push(format!("sigma_eta2 must be positive, got {}", self.sigma_eta2));
        }
        if let Some(&b0) = self.beta.first() {
            match self.normalization {
                Normalization::FirstLoadingPositive => {
                    if !(b0 > T::zero()) {
                        out.push(format!("first loading must be positive, got {b0}"));
                    }
                    if self.sigma_eta2 != T::one() {
                        out.push(format!(
                            "sigma_eta2 is fixed at 1 under this normalization, got {}",
                            self.sigma_eta2
                        ));
                    }
                }
                Normalization::FirstLoadingUnity => {
                    if b0 != T::one() {
                        out.push(format!("first loading must equal 1, got {b0}"));
                    }
                }
            }
        }
        out
    }

    /// `Err(InvalidTheta)` carrying every violation.
    pub fn ensure_valid(&self, p: usize) -> Result<()> {
        let v = self.validate(p);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidTheta(v))
        }
    }

    /// True when `b` is within the inference caveat radius of 1/2.
    pub fn near_half(&self) -> bool {
        (self.b.to_f64_lossy() - 0.5).abs() < HALF_FLAG_RADIUS
    }

    /// `beta' Sigma^{-1} beta`.
    pub fn signal_precision(&self) -> T {
        self.beta
            .iter()
            .zip(&self.sigma_diag)
            .map(|(&b, &s)| b * b / s)
            .sum()
    }

    /// Row vector `beta' Sigma^{-1} / (beta' Sigma^{-1} beta)`: the GLS
    /// projection that maps `y_t` to `x_t` plus noise.
    pub fn gls_weights(&self) -> Vec<T> {
        let c = self.signal_precision();
        self.beta
            .iter()
            .zip(&self.sigma_diag)
            .map(|(&b, &s)| b / s / c)
            .collect()
    }

    /// Same model expressed under the other normalization.
    pub fn renormalized(&self, target: Normalization) -> Self {
        if target == self.normalization {
            return self.clone();
        }
        match target {
            Normalization::FirstLoadingUnity => {
                // beta x = (beta / beta0) (beta0 x)
                let b0 = self.beta[0];
                Self {
                    beta: self.beta.iter().map(|&v| v / b0).collect(),
                    sigma_diag: self.sigma_diag.clone(),
                    b: self.b,
                    sigma_eta2: self.sigma_eta2 * b0 * b0,
                    normalization: target,
                }
            }
            Normalization::FirstLoadingPositive => {
                let s = self.sigma_eta2.sqrt();
                let sign = if self.beta[0] < T::zero() { -T::one() } else { T::one() };
                Self {
                    beta: self.beta.iter().map(|&v| v * s * sign).collect(),
                    sigma_diag: self.sigma_diag.clone(),
                    b: self.b,
                    sigma_eta2: T::one(),
                    normalization: target,
                }
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ThetaParams<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        ThetaParams {
            beta: self.beta.iter().map(|&v| c(v)).collect(),
            sigma_diag: self.sigma_diag.iter().map(|&v| c(v)).collect(),
            b: c(self.b),
            sigma_eta2: c(self.sigma_eta2),
            normalization: self.normalization,
        }
    }
}

/// One simulated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOutput<T> {
    pub y: Matrix<T>,
    pub x: Vec<T>,
    pub eta: Vec<T>,
    pub u: Matrix<T>,
    pub seed: u64,
}

/// Draws `n` periods of `y_t = beta x_t + u_t`, `x_t = (1 - L)_+^{-b} eta_t`.
///
/// The trend is built by direct convolution with `phi(d)` and then summed
/// when `b >= 1`, so the sample follows the exact process rather than any
/// approximation of it.
pub fn simulate<T: Real>(theta: &ThetaParams<T>, n: usize, seed: u64) -> Result<SimOutput<T>> {
    let p = theta.p();
    theta.ensure_valid(p)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> T {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::lit(z)
    };
    let sd_eta = theta.sigma_eta2.sqrt();
    let eta: Vec<T> = (0..n).map(|_| draw() * sd_eta).collect();
    let sds: Vec<T> = theta.sigma_diag.iter().map(|s| s.sqrt()).collect();
    let mut u = Matrix::zeros(n, p);
    for t in 0..n {
        for i in 0..p {
            u[(t, i)] = draw() * sds[i];
        }
    }
    let x = trend_from_shocks(&eta, theta.b)?;
    let mut y = Matrix::zeros(n, p);
    for t in 0..n {
        for i in 0..p {
            y[(t, i)] = theta.beta[i] * x[t] + u[(t, i)];
        }
    }
    Ok(SimOutput { y, x, eta, u, seed })
}

/// `x_t = 1{b>=1} x_{t-1} + sum_{j<t} phi_j(d) eta_{t-j}`.
pub fn trend_from_shocks<T: Real>(eta: &[T], b: T) -> Result<Vec<T>> {
    let split = split_order(b)?;
    let n = eta.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let phi = frac_int_coeffs(split.d, n)?.coeffs;
    let mut x = crate::fracdiff::convolve_truncated(eta, &phi);
    if split.unit_root {
        cumulate(&mut x);
    }
    Ok(x)
}
