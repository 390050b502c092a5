//! Truncated fractional difference and integration operators.
//!
//! `(1 - L)^b` expands as `sum_j pi_j(b) L^j` with `pi_0 = 1` and
//! `pi_j = (j - b - 1)/j * pi_{j-1}`; the inverse operator has coefficients
//! `phi_j(b) = pi_j(-b)`. All operators are applied with zero pre-sample
//! values, so for a series of length `n` only the first `n` coefficients
//! matter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which operator a coefficient sequence represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Difference,
    Integration,
}

/// Coefficients of a truncated fractional operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FracCoeffs<T> {
    pub b: T,
    pub kind: OperatorKind,
    pub coeffs: Vec<T>,
}

impl<T: Real> FracCoeffs<T> {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Coefficients of the same operator extended (or cut) to length `k`.
    pub fn resized(&self, k: usize) -> Result<Self> {
        if k <= self.coeffs.len() {
            return Ok(Self {
                b: self.b,
                kind: self.kind,
                coeffs: self.coeffs[..k].to_vec(),
            });
        }
        match self.kind {
            OperatorKind::Difference => frac_diff_coeffs(self.b, k),
            OperatorKind::Integration => frac_int_coeffs(self.b, k),
        }
    }
}

/// `pi_0(b), ..., pi_{k-1}(b)` by the multiplicative recursion.
pub fn frac_diff_coeffs<T: Real>(b: T, k: usize) -> Result<FracCoeffs<T>> {
    Ok(FracCoeffs {
        b,
        kind: OperatorKind::Difference,
        coeffs: recursion(b, k)?,
    })
}

/// `phi_0(b), ..., phi_{k-1}(b)`, the coefficients of `(1 - L)^{-b}`.
pub fn frac_int_coeffs<T: Real>(b: T, k: usize) -> Result<FracCoeffs<T>> {
    Ok(FracCoeffs {
        b,
        kind: OperatorKind::Integration,
        coeffs: recursion(-b, k)?,
    })
}

fn recursion<T: Real>(order: T, k: usize) -> Result<Vec<T>> {
    if !order.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "fractional order must be finite, got {order}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("coefficient count must be >= 1".into()));
    }
    let mut c = Vec::with_capacity(k);
    c.push(T::one());
    for j in 1..k {
        let jf = T::from_count(j);
        let prev = c[j - 1];
        c.push((jf - order - T::one()) / jf * prev);
    }
    Ok(c)
}

/// Applies a truncated operator: `out[t] = sum_{j<=t} coeffs[j] * series[t-j]`.
/// The coefficient sequence is extended if it is shorter than the series.
pub fn apply_frac_op<T: Real>(series: &[T], coeffs: &FracCoeffs<T>) -> Result<Vec<T>> {
    let n = series.len();
    let owned;
    let c = if coeffs.len() >= n {
        &coeffs.coeffs[..]
    } else {
        owned = coeffs.resized(n)?;
        &owned.coeffs[..]
    };
    Ok(convolve_truncated(series, c))
}

/// Causal convolution truncated to the length of `series`.
pub(crate) fn convolve_truncated<T: Real>(series: &[T], c: &[T]) -> Vec<T> {
    let n = series.len();
    let mut out = vec![T::zero(); n];
    for (t, o) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for j in 0..=t.min(c.len().saturating_sub(1)) {
            acc += c[j] * series[t - j];
        }
        *o = acc;
    }
    out
}

/// `(1 - L)_+^b x` for a plain slice.
pub fn frac_diff<T: Real>(series: &[T], b: T) -> Result<Vec<T>> {
    if series.is_empty() {
        return Ok(Vec::new());
    }
    apply_frac_op(series, &frac_diff_coeffs(b, series.len())?)
}

/// `(1 - L)_+^{-b} x` for a plain slice.
pub fn frac_integrate<T: Real>(series: &[T], b: T) -> Result<Vec<T>> {
    if series.is_empty() {
        return Ok(Vec::new());
    }
    apply_frac_op(series, &frac_int_coeffs(b, series.len())?)
}

/// Integer/fractional split of an integration order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderSplit<T> {
    /// `true` when `b >= 1`: the trend carries a unit root.
    pub unit_root: bool,
    /// Mean-reverting fraction `d = b - 1{b >= 1}`, in `[0, 1)`.
    pub d: T,
}

impl<T: Real> OrderSplit<T> {
    pub fn indicator(&self) -> u8 {
        u8::from(self.unit_root)
    }
}

/// Splits `b in [0, 1.5)` into its unit-root indicator and fractional part.
pub fn split_order<T: Real>(b: T) -> Result<OrderSplit<T>> {
    if !(b >= T::zero() && b < T::lit(1.5)) {
        return Err(Error::Domain {
            what: "b",
            value: b.to_f64_lossy(),
            domain: "[0, 1.5)",
        });
    }
    let unit_root = b >= T::one();
    let d = if unit_root { b - T::one() } else { b };
    Ok(OrderSplit { unit_root, d })
}

/// Coefficients `c_k` of `eta_{t-k}` in the trend `x_t`, i.e. `phi_k(b)`,
/// built through the split: `phi(d)` for `b < 1`, running sums of `phi(d)`
/// for `b >= 1`.
pub fn trend_weights<T: Real>(b: T, k: usize) -> Result<Vec<T>> {
    let split = split_order(b)?;
    let mut c = frac_int_coeffs(split.d, k)?.coeffs;
    if split.unit_root {
        cumulate(&mut c);
    }
    Ok(c)
}

pub(crate) fn cumulate<T: Real>(v: &mut [T]) {
    let mut acc = T::zero();
    for x in v.iter_mut() {
        acc += *x;
        *x = acc;
    }
}
