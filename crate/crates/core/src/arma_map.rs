//! Smooth map from the integration order to ARMA(m, m) coefficients whose
//! Wold expansion mimics the fractional weights `phi_j(d)`.
//!
//! Only the mean-reverting fraction `d = b - 1{b >= 1}` is fitted; a unit
//! root is carried by the filter's transition. Orders `b` and `b + 1`
//! therefore share coefficients and the splines run over `d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fracdiff::{frac_int_coeffs, split_order};
use crate::optim::{minimize, OptimOptions};
use crate::scalar::Real;

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_HORIZON: usize = 500;

/// MSE above which a fit that also failed to meet its stopping rule is
/// reported as an error.
const FAILED_FIT_MSE: f64 = 1e-3;

/// One fitted grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmaFit {
    pub b: f64,
    /// AR coefficients `a_i` of `x_t = sum a_i x_{t-i} + e_t + sum ma_i e_{t-i}`.
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    /// Mean squared gap between the Wold weights and `phi_j(d)` over the horizon.
    pub mse: f64,
}

/// Wold weights `psi_0..psi_{len-1}` of `(1 + ma(L)) / (1 - ar(L))`.
pub fn arma_psi<T: Real>(ar: &[T], ma: &[T], len: usize) -> Vec<T> {
    let mut psi = Vec::with_capacity(len);
    for j in 0..len {
        let mut v = if j == 0 {
            T::one()
        } else if j <= ma.len() {
            ma[j - 1]
        } else {
            T::zero()
        };
        for (i, &a) in ar.iter().enumerate() {
            if i < j {
                v += a * psi[j - 1 - i];
            }
        }
        psi.push(v);
    }
    psi
}

/// Partial autocorrelations in (-1, 1) to stationary AR coefficients.
pub fn pacf_to_ar(pacf: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = Vec::with_capacity(pacf.len());
    for (k, &r) in pacf.iter().enumerate() {
        let prev = a.clone();
        for j in 0..k {
            a[j] = prev[j] - r * prev[k - 1 - j];
        }
        a.push(r);
    }
    a
}

/// Inverse of [`pacf_to_ar`]; `None` if the AR polynomial is not stationary.
pub fn ar_to_pacf(ar: &[f64]) -> Option<Vec<f64>> {
    let k = ar.len();
    let mut a = ar.to_vec();
    let mut pacf = vec![0.0; k];
    for m in (0..k).rev() {
        let r = a[m];
        if !(r.abs() < 1.0) {
            return None;
        }
        pacf[m] = r;
        let denom = 1.0 - r * r;
        let prev = a.clone();
        for j in 0..m {
            a[j] = (prev[j] + r * prev[m - 1 - j]) / denom;
        }
    }
    Some(pacf)
}

/// `atanh` of the partial autocorrelations; the coordinates the AR part is
/// optimized and interpolated in.
fn ar_to_unconstrained(ar: &[f64]) -> Option<Vec<f64>> {
    let pacf = ar_to_pacf(ar)?;
    Some(pacf.iter().map(|r| r.clamp(-PACF_CLAMP, PACF_CLAMP).atanh()).collect())
}

fn unconstrained_to_ar(u: &[f64]) -> Vec<f64> {
    pacf_to_ar(&u.iter().map(|v| v.tanh()).collect::<Vec<_>>())
}

const PACF_CLAMP: f64 = 1.0 - 1e-12;

struct FitProblem {
    m: usize,
    target: Vec<f64>,
}

impl FitProblem {
    fn new(d: f64, m: usize, horizon: usize) -> Result<Self> {
        Ok(Self {
            m,
            target: frac_int_coeffs(d, horizon)?.coeffs,
        })
    }

    fn unpack(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (unconstrained_to_ar(&u[..self.m]), u[self.m..].to_vec())
    }

    fn pack(&self, ar: &[f64], ma: &[f64]) -> Option<Vec<f64>> {
        let mut u = ar_to_unconstrained(ar)?;
        u.extend_from_slice(ma);
        Some(u)
    }

    fn mse(&self, u: &[f64]) -> f64 {
        let (ar, ma) = self.unpack(u);
        let psi = arma_psi(&ar, &ma, self.target.len());
        let s: f64 = psi.iter().zip(&self.target).map(|(a, b)| (a - b).powi(2)).sum();
        let v = s / self.target.len() as f64;
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }

    fn solve(&self, u0: &[f64]) -> (Vec<f64>, f64, bool) {
        let opts = OptimOptions {
            max_iters: 500,
            grad_tol: 1e-10,
            cost_tol: 1e-16,
            fallback_iters: 4000,
        };
        // the MSE spans many decades across d; its log is far better scaled
        let r = minimize(&|u: &[f64]| (self.mse(u) + 1e-300).ln(), u0, &opts);
        let fx = self.mse(&r.x);
        (r.x, fx, r.converged)
    }
}

fn check_fit_args(b: f64, m: usize, horizon: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("ARMA order must be >= 1".into()));
    }
    if horizon < 10 * m {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must be at least 10 m = {}",
            10 * m
        )));
    }
    Ok(round12(split_order(b)?.d))
}

fn finish(b: f64, prob: &FitProblem, u: &[f64], mse: f64, converged: bool) -> Result<ArmaFit> {
    if !mse.is_finite() || (!converged && mse > FAILED_FIT_MSE) {
        return Err(Error::ArmaFit { b, best_mse: mse });
    }
    let (ar, ma) = prob.unpack(u);
    Ok(ArmaFit { b, ar, ma, mse })
}

/// Least-squares ARMA(m, m) fit to `phi_j(d)`, `j < horizon`.
///
/// Orders are added one at a time, each warm-started from the previous
/// solution padded with zeros, so the result is never worse than any lower
/// order fit along the path. A few seeded random restarts guard against a
/// poor basin at the final order.
pub fn fit_arma_for_b(b: f64, m: usize, horizon: usize) -> Result<ArmaFit> {
    let d = check_fit_args(b, m, horizon)?;
    let mut u: Vec<f64> = Vec::new();
    let mut last = (f64::INFINITY, false);
    for k in 1..=m {
        let prob = FitProblem::new(d, k, horizon)?;
        let mut u0 = vec![0.0; 2 * k];
        for i in 0..k - 1 {
            u0[i] = u[i];
            u0[k + i] = u[k - 1 + i];
        }
        let (x, f, c) = prob.solve(&u0);
        u = x;
        last = (f, c);
    }
    let prob = FitProblem::new(d, m, horizon)?;
    let mut best = (u, last.0, last.1);
    for start in random_starts(m, 4, d.to_bits()) {
        let (x, f, c) = prob.solve(&start);
        if f < best.1 {
            best = (x, f, c);
        }
    }
    finish(b, &prob, &best.0, best.1, best.2)
}

/// Fit warm-started from given coefficients.
pub fn fit_arma_from(b: f64, m: usize, horizon: usize, ar: &[f64], ma: &[f64]) -> Result<ArmaFit> {
    let d = check_fit_args(b, m, horizon)?;
    let prob = FitProblem::new(d, m, horizon)?;
    let u0 = prob
        .pack(ar, ma)
        .ok_or_else(|| Error::InvalidArgument("warm start is not stationary".into()))?;
    let (x, f, c) = prob.solve(&u0);
    finish(b, &prob, &x, f, c)
}

fn random_starts(m: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut u: Vec<f64> = (0..m).map(|_| rng.random_range(-1.5..1.5)).collect();
            u.extend((0..m).map(|_| rng.random_range(-1.0..1.0)));
            u
        })
        .collect()
}

/// Grid of integration orders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    /// Additional points, e.g. close to `d = 1` to widen the spline hull.
    pub extra: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 1.475,
            step: 0.025,
            extra: vec![0.995],
        }
    }
}

impl GridSpec {
    /// Sorted, de-duplicated grid points.
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        let mut pts: Vec<f64> = (0..=count)
            .map(|i| round12(self.lo + i as f64 * self.step))
            .chain(self.extra.iter().map(|&v| round12(v)))
            .collect();
        pts.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
        pts.dedup();
        pts
    }
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// Natural cubic spline through `(x_i, y_i)`.
#[derive(Clone, Debug, PartialEq)]
struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m2: Vec<f64>,
}

impl NaturalSpline {
    fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        let mut m2 = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives
            let mut diag = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            let mut upper = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for i in 2..n - 1 {
                let h0 = x[i] - x[i - 1];
                let w = h0 / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            for i in (1..n - 1).rev() {
                let next = if i + 1 < n - 1 { m2[i + 1] } else { 0.0 };
                m2[i] = (rhs[i] - upper[i] * next) / diag[i];
            }
        }
        Self { x, y, m2 }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if n == 1 {
            return self.y[0];
        }
        let k = match self.x.binary_search_by(|v| v.partial_cmp(&t).expect("finite")) {
            Ok(i) => return self.y[i],
            Err(i) => i.clamp(1, n - 1),
        };
        let (x0, x1) = (self.x[k - 1], self.x[k]);
        let h = x1 - x0;
        let a = (x1 - t) / h;
        let b = (t - x0) / h;
        a * self.y[k - 1]
            + b * self.y[k]
            + ((a * a * a - a) * self.m2[k - 1] + (b * b * b - b) * self.m2[k]) * h * h / 6.0
    }
}

/// Serialized form of the table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TableData {
    format_version: u32,
    m: usize,
    horizon: usize,
    grid: Vec<f64>,
    ar: Vec<Vec<f64>>,
    ma: Vec<Vec<f64>>,
    mse: Vec<f64>,
}

/// Precomputed coefficients on a grid of `b` plus splines over `d`.
///
/// The AR splines run through the `atanh` partial autocorrelations, so the
/// interpolated AR polynomial is stationary at every `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableData", into = "TableData")]
pub struct ArmaApproxTable {
    pub m: usize,
    pub horizon: usize,
    pub grid: Vec<f64>,
    /// `grid.len() x m` AR coefficients.
    pub ar: Vec<Vec<f64>>,
    pub ma: Vec<Vec<f64>>,
    pub mse: Vec<f64>,
    knots: Vec<f64>,
    splines: Vec<NaturalSpline>,
}

impl From<ArmaApproxTable> for TableData {
    fn from(t: ArmaApproxTable) -> Self {
        TableData {
            format_version: FORMAT_VERSION,
            m: t.m,
            horizon: t.horizon,
            grid: t.grid,
            ar: t.ar,
            ma: t.ma,
            mse: t.mse,
        }
    }
}

impl TryFrom<TableData> for ArmaApproxTable {
    type Error = String;

    fn try_from(d: TableData) -> std::result::Result<Self, String> {
        if d.format_version != FORMAT_VERSION {
            return Err(format!(
                "unsupported ARMA table format version {} (expected {FORMAT_VERSION})",
                d.format_version
            ));
        }
        Self::assemble(d.m, d.horizon, d.grid, d.ar, d.ma, d.mse).map_err(|e| e.to_string())
    }
}

/// Coefficients and Wold weights at one order.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmaEval<T> {
    pub ar: Vec<T>,
    pub ma: Vec<T>,
    pub psi: Vec<T>,
}

impl ArmaApproxTable {
    fn assemble(
        m: usize,
        horizon: usize,
        grid: Vec<f64>,
        ar: Vec<Vec<f64>>,
        ma: Vec<Vec<f64>>,
        mse: Vec<f64>,
    ) -> Result<Self> {
        let g = grid.len();
        if g == 0 || ar.len() != g || ma.len() != g || mse.len() != g {
            return Err(Error::Shape("ARMA table rows disagree with the grid".into()));
        }
        if ar.iter().chain(&ma).any(|r| r.len() != m) {
            return Err(Error::Shape(format!("ARMA table rows must have {m} coefficients")));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Data("ARMA table grid must be strictly increasing".into()));
        }
        // one knot per distinct d; rows at b and b + 1 coincide
        let mut rows: Vec<(f64, usize)> = Vec::new();
        for (i, &b) in grid.iter().enumerate() {
            let d = round12(split_order(b)?.d);
            match rows.iter().position(|&(k, _)| k == d) {
                Some(_) => {}
                None => rows.push((d, i)),
            }
        }
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
        let knots: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut splines = Vec::with_capacity(2 * m);
        let mut u_rows = Vec::with_capacity(rows.len());
        for r in &rows {
            u_rows.push(ar_to_unconstrained(&ar[r.1]).ok_or_else(|| {
                Error::Data(format!("ARMA table AR row at b = {} is not stationary", grid[r.1]))
            })?);
        }
        for k in 0..m {
            splines.push(NaturalSpline::new(knots.clone(), u_rows.iter().map(|u| u[k]).collect()));
        }
        for k in 0..m {
            splines.push(NaturalSpline::new(knots.clone(), rows.iter().map(|r| ma[r.1][k]).collect()));
        }
        Ok(Self {
            m,
            horizon,
            grid,
            ar,
            ma,
            mse,
            knots,
            splines,
        })
    }

    /// Range of `d` covered by the splines.
    pub fn d_hull(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().expect("non-empty"))
    }

    /// Spline coefficients and `len` Wold weights at `b`. No extrapolation.
    pub fn eval<T: Real>(&self, b: T, len: usize) -> Result<ArmaEval<T>> {
        let bf = b.to_f64_lossy();
        let (glo, ghi) = (self.grid[0], *self.grid.last().expect("non-empty"));
        let split = split_order(bf)?;
        let (dlo, dhi) = self.d_hull();
        let d = split.d;
        let shift = if split.unit_root { 1.0 } else { 0.0 };
        const TOL: f64 = 1e-12;
        if bf < glo - TOL || bf > ghi + TOL || d < dlo - TOL || d > dhi + TOL {
            let lo = (dlo + shift).max(glo);
            let hi = (dhi + shift).min(ghi);
            return Err(Error::OutsideTable { b: bf, lo, hi });
        }
        let m = self.m;
        let u: Vec<f64> = (0..m).map(|k| self.splines[k].eval(d)).collect();
        let ar: Vec<T> = unconstrained_to_ar(&u).into_iter().map(T::lit).collect();
        let ma: Vec<T> = (0..m).map(|k| T::lit(self.splines[m + k].eval(d))).collect();
        let psi = arma_psi(&ar, &ma, len);
        Ok(ArmaEval { ar, ma, psi })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// `spline(b)` convenience wrapper.
pub fn eval_table<T: Real>(table: &ArmaApproxTable, b: T, len: usize) -> Result<ArmaEval<T>> {
    table.eval(b, len)
}

/// Indices `i` where some coefficient path jumps by more than five times
/// the smaller of its neighbouring steps (floored at `floor`).
pub fn continuity_violations(paths: &[Vec<f64>], floor: f64) -> Vec<usize> {
    let g = paths.len();
    let mut bad = Vec::new();
    if g < 3 {
        return bad;
    }
    let m = paths[0].len();
    for i in 1..g {
        for k in 0..m {
            let jump = (paths[i][k] - paths[i - 1][k]).abs();
            let before = if i >= 2 { (paths[i - 1][k] - paths[i - 2][k]).abs() } else { f64::INFINITY };
            let after = if i + 1 < g { (paths[i + 1][k] - paths[i][k]).abs() } else { f64::INFINITY };
            let scale = before.min(after).max(floor);
            if jump > 5.0 * scale {
                bad.push(i);
                break;
            }
        }
    }
    bad
}

/// Absolute floor for the continuity check: steps below this are never
/// treated as jumps.
const CONTINUITY_FLOOR: f64 = 0.05;

/// Fits every grid point in order of `d`, warm-starting each from its
/// neighbour, then refits any point that breaks coefficient continuity from
/// several random starts (choosing the candidate closest to its neighbours
/// among those within a factor two of the best MSE).
pub fn build_table(m: usize, grid: &GridSpec, horizon: usize) -> Result<ArmaApproxTable> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    if points[0] < 0.0 || *points.last().expect("non-empty") >= 1.5 {
        return Err(Error::Domain {
            what: "grid",
            value: points[0].min(*points.last().expect("non-empty")),
            domain: "[0, 1.5)",
        });
    }
    if points.windows(2).any(|w| w[1] - w[0] > 0.05 + 1e-12) {
        return Err(Error::InvalidArgument("grid spacing must not exceed 0.05".into()));
    }
    // distinct d values, ascending
    let mut ds: Vec<f64> = points.iter().map(|&b| round12(split_order(b).map(|s| s.d).unwrap_or(b))).collect();
    ds.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    ds.dedup();

    // Walk down from the largest d, warm-starting each point from its upper
    // neighbour. Near d = 0 the optimum degenerates into a near-cancelling
    // pole/zero pair; approaching it along the path keeps the coefficients
    // continuous instead of snapping to zero.
    let mut fits: Vec<Option<ArmaFit>> = vec![None; ds.len()];
    for i in (0..ds.len()).rev() {
        let d = ds[i];
        let warm = fits.get(i + 1).and_then(|f| f.as_ref()).map(|prev| fit_arma_from(d, m, horizon, &prev.ar, &prev.ma));
        let chosen = match warm {
            Some(Ok(w)) => w,
            _ => fit_arma_for_b(d, m, horizon).map_err(|e| match e {
                Error::ArmaFit { best_mse, .. } => Error::ArmaFit { b: d, best_mse },
                other => other,
            })?,
        };
        fits[i] = Some(chosen);
    }
    let mut fits: Vec<ArmaFit> = fits.into_iter().map(|f| f.expect("every d fitted")).collect();

    // Alternate sweeps let a better basin found at one point spread to its
    // neighbours.
    for sweep in 0..6 {
        let mut improved = false;
        let order: Vec<usize> = if sweep % 2 == 0 {
            (1..ds.len()).collect()
        } else {
            (0..ds.len().saturating_sub(1)).rev().collect()
        };
        for i in order {
            let j = if sweep % 2 == 0 { i - 1 } else { i + 1 };
            let (ar, ma) = (fits[j].ar.clone(), fits[j].ma.clone());
            if let Ok(f) = fit_arma_from(ds[i], m, horizon, &ar, &ma) {
                if f.mse < fits[i].mse * (1.0 - 1e-6) {
                    fits[i] = f;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }

    for _round in 0..3 {
        let paths: Vec<Vec<f64>> = fits.iter().map(|f| f.ar.iter().chain(&f.ma).copied().collect()).collect();
        let bad = continuity_violations(&paths, CONTINUITY_FLOOR);
        if bad.is_empty() {
            break;
        }
        for i in bad {
            let d = ds[i];
            let prob = FitProblem::new(d, m, horizon)?;
            let mut cands: Vec<(Vec<f64>, f64)> = Vec::new();
            let mut starts = random_starts(m, 12, d.to_bits() ^ 0x5eed);
            for j in [i.wrapping_sub(1), i + 1] {
                if let Some(nb) = fits.get(j) {
                    if let Some(u) = prob.pack(&nb.ar, &nb.ma) {
                        starts.push(u);
                    }
                }
            }
            for s in starts {
                let (x, f, _) = prob.solve(&s);
                if f.is_finite() {
                    cands.push((x, f));
                }
            }
            let best = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            let target: Vec<f64> = neighbour_mean(&fits, i);
            let pick = cands
                .iter()
                .filter(|c| c.1 <= 2.0 * best)
                .min_by(|a, b| {
                    let da = dist(&prob, &a.0, &target);
                    let db = dist(&prob, &b.0, &target);
                    da.partial_cmp(&db).expect("finite")
                });
            if let Some((x, f)) = pick {
                let (ar, ma) = prob.unpack(x);
                fits[i] = ArmaFit { b: d, ar, ma, mse: *f };
            }
        }
    }

    let paths: Vec<Vec<f64>> = fits.iter().map(|f| f.ar.iter().chain(&f.ma).copied().collect()).collect();
    for i in continuity_violations(&paths, CONTINUITY_FLOOR) {
        log::warn!("ARMA coefficients switch basin between d = {} and d = {}", ds[i - 1], ds[i]);
    }

    let mut ar = Vec::with_capacity(points.len());
    let mut ma = Vec::with_capacity(points.len());
    let mut mse = Vec::with_capacity(points.len());
    for &b in &points {
        let d = round12(split_order(b)?.d);
        let i = ds.iter().position(|&x| x == d).expect("d fitted");
        ar.push(fits[i].ar.clone());
        ma.push(fits[i].ma.clone());
        mse.push(fits[i].mse);
    }
    ArmaApproxTable::assemble(m, horizon, points, ar, ma, mse)
}

fn neighbour_mean(fits: &[ArmaFit], i: usize) -> Vec<f64> {
    let coef = |f: &ArmaFit| -> Vec<f64> { f.ar.iter().chain(&f.ma).copied().collect() };
    let nb: Vec<Vec<f64>> = [i.checked_sub(1), Some(i + 1)]
        .into_iter()
        .flatten()
        .filter_map(|j| fits.get(j))
        .map(coef)
        .collect();
    let k = nb[0].len();
    (0..k).map(|c| nb.iter().map(|v| v[c]).sum::<f64>() / nb.len() as f64).collect()
}

fn dist(prob: &FitProblem, u: &[f64], target: &[f64]) -> f64 {
    let (ar, ma) = prob.unpack(u);
    ar.iter().chain(&ma).zip(target).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Table shipped with the command-line tool and used by default.
pub fn default_table_spec() -> (usize, GridSpec, usize) {
    (DEFAULT_ORDER, GridSpec::default(), DEFAULT_HORIZON)
}
