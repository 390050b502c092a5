//! Monte Carlo harness: finite-sample checks of consistency, asymptotic
//! normality and the faster convergence of the cointegrating directions,
//! plus exact-versus-fast filter timings.

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::arma_map::ArmaApproxTable;
use crate::diagnostics::whiteness_report;
use crate::error::{Error, Result};
use crate::estimate::{fit, FitConfig};
use crate::linalg::Matrix;
use crate::model::{simulate, ThetaParams};
use crate::scalar::Real;
use crate::ssm_exact::{kalman_exact, kalman_structured};
use crate::ssm_fast::{kalman_fast, ApproxMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McTarget {
    Consistency,
    Normality,
    RotationRate,
    MdsCheck,
    Speed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McDesign {
    pub theta0: ThetaParams<f64>,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub targets: BTreeSet<McTarget>,
    pub fit: FitConfig,
}

impl McDesign {
    /// Fit settings used for Monte Carlo work: 50 starts screened by one
    /// evaluation each, the best refined.
    pub fn mc_fit_config() -> FitConfig {
        FitConfig {
            n_starts: 50,
            top_k: 1,
            start_iters: 0,
            ..FitConfig::default()
        }
    }

    pub fn new(theta0: ThetaParams<f64>, n_grid: Vec<usize>, replications: usize, seed: u64) -> Self {
        Self {
            theta0,
            n_grid,
            replications,
            seed,
            targets: [McTarget::Consistency, McTarget::Normality].into_iter().collect(),
            fit: Self::mc_fit_config(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.theta0.ensure_valid(self.theta0.p())?;
        self.fit.validate()?;
        if self.n_grid.is_empty() || self.n_grid.iter().any(|&n| n < 10) {
            return Err(Error::InvalidArgument("n_grid must be non-empty with n >= 10".into()));
        }
        let distributional = self.targets.contains(&McTarget::Normality) || self.targets.contains(&McTarget::RotationRate);
        if distributional && self.replications < 50 {
            return Err(Error::InvalidArgument(format!(
                "distributional targets need >= 50 replications, got {}",
                self.replications
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be >= 1".into()));
        }
        if self.targets.contains(&McTarget::RotationRate) && self.theta0.p() < 2 {
            return Err(Error::InvalidArgument("rotation rate needs p >= 2".into()));
        }
        Ok(())
    }

    fn needs_fits(&self) -> bool {
        self.targets
            .iter()
            .any(|t| matches!(t, McTarget::Consistency | McTarget::Normality | McTarget::RotationRate))
    }
}

/// `p x (p-1)` basis of the complement of `beta_0` that is orthonormal in
/// the `Sigma_0^{-1}` inner product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gamma0 {
    pub gamma: Matrix<f64>,
}

impl Gamma0 {
    /// `Gamma_0' Sigma_0^{-1} v`.
    pub fn rotate(&self, sigma_diag: &[f64], v: &[f64]) -> Vec<f64> {
        let (p, k) = self.gamma.shape();
        (0..k)
            .map(|j| (0..p).map(|i| self.gamma[(i, j)] * v[i] / sigma_diag[i]).sum())
            .collect()
    }
}

/// Gram-Schmidt in the `Sigma_0^{-1}` metric, starting from `beta_0` and the
/// unit vectors; `beta_0` is dropped from the result.
pub fn build_gamma0(theta0: &ThetaParams<f64>) -> Result<Gamma0> {
    let p = theta0.p();
    if p < 2 {
        return Err(Error::InvalidArgument("Gamma_0 needs p >= 2".into()));
    }
    theta0.ensure_valid(p)?;
    let s = &theta0.sigma_diag;
    let ip = |a: &[f64], b: &[f64]| -> f64 { (0..p).map(|i| a[i] * b[i] / s[i]).sum() };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(p);
    let candidates = std::iter::once(theta0.beta.clone())
        .chain((0..p).map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect()));
    for mut v in candidates {
        // two passes keep the basis orthogonal to working precision
        for _ in 0..2 {
            for q in &basis {
                let c = ip(&v, q);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let norm = ip(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
        if basis.len() == p {
            break;
        }
    }
    let gamma = Matrix::from_fn(p, p - 1, |i, j| basis[j + 1][i]);
    Ok(Gamma0 { gamma })
}

/// Outcome of one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub b_hat: Option<f64>,
    pub se_b: Option<f64>,
    pub beta_hat: Option<Vec<f64>>,
    /// `Gamma_0' Sigma_0^{-1} beta_hat`.
    pub rotation: Option<Vec<f64>>,
    /// `beta_0' Sigma_0^{-1} (beta_hat - beta_0) / sqrt(beta_0' Sigma_0^{-1} beta_0)`.
    pub beta_direction: Option<f64>,
    pub loglik: Option<f64>,
    pub failure: Option<String>,
}

impl ReplicationRecord {
    fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

/// Aggregates at one sample size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NSummary {
    pub n: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    pub bias_b: f64,
    pub rmse_b: f64,
    pub median_abs_err_b: f64,
    pub sd_b: f64,
    pub mean_se_b: f64,
    /// Share of nominal 95% intervals `b_hat +- 1.96 se` covering `b_0`.
    pub coverage_b: f64,
    /// Kolmogorov-Smirnov distance of `(b_hat - b_0) / se` from N(0, 1).
    pub ks_b: f64,
    pub sd_rotation: Vec<f64>,
    pub sd_beta_direction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdsSummary {
    pub n: usize,
    pub seeds: usize,
    /// Share of seeds where every component passes Ljung-Box at 1%.
    pub pass_fraction: f64,
    /// `p_values[seed][component]`.
    pub p_values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub exact_secs: f64,
    pub fast_secs: f64,
    pub structured_secs: f64,
    pub speedup: f64,
    pub max_v_diff: f64,
    pub loglik_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub design: McDesign,
    pub per_n: Vec<NSummary>,
    /// Log-log slope of `sd(Gamma_0' Sigma_0^{-1} beta_hat)` on `n`, per
    /// component.
    pub rotation_slopes: Option<Vec<f64>>,
    pub beta_direction_slope: Option<f64>,
    pub mds: Option<Vec<MdsSummary>>,
    pub bench: Option<Vec<BenchRow>>,
    pub records: Vec<ReplicationRecord>,
    pub n_failed: usize,
    /// False when more than 5% of the fits failed.
    pub valid: bool,
    pub version: String,
}

impl McReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per replication.
    pub fn records_csv(&self) -> String {
        let mut s = String::from("n,rep,seed,b_hat,se_b,loglik,beta_direction,rotation,failure\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let rot = r
                .rotation
                .as_ref()
                .map(|v| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";"))
                .unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.n,
                r.rep,
                r.seed,
                opt(r.b_hat),
                opt(r.se_b),
                opt(r.loglik),
                opt(r.beta_direction),
                rot,
                r.failure.as_deref().unwrap_or("").replace([',', '\n'], " ")
            ));
        }
        s
    }

    /// One row per sample size.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("n,n_ok,n_failed,bias_b,rmse_b,median_abs_err_b,sd_b,mean_se_b,coverage_b,ks_b,sd_beta_direction\n");
        for r in &self.per_n {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.n,
                r.n_ok,
                r.n_failed,
                r.bias_b,
                r.rmse_b,
                r.median_abs_err_b,
                r.sd_b,
                r.mean_se_b,
                r.coverage_b,
                r.ks_b,
                r.sd_beta_direction
            ));
        }
        s
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for replication `rep` at sample size `n`; does not
/// depend on scheduling.
pub fn replication_seed(seed: u64, n: usize, rep: usize) -> u64 {
    splitmix64(seed ^ splitmix64((n as u64) ^ splitmix64(rep as u64 ^ 0x5eed)))
}

fn one_replication(
    design: &McDesign,
    gamma: Option<&Gamma0>,
    table: Option<&ArmaApproxTable>,
    n: usize,
    rep: usize,
) -> ReplicationRecord {
    let seed = replication_seed(design.seed, n, rep);
    let mut rec = ReplicationRecord {
        n,
        rep,
        seed,
        b_hat: None,
        se_b: None,
        beta_hat: None,
        rotation: None,
        beta_direction: None,
        loglik: None,
        failure: None,
    };
    let th0 = &design.theta0;
    let outcome = simulate(th0, n, seed).and_then(|s| {
        let cfg = FitConfig {
            seed: splitmix64(seed),
            ..design.fit.clone()
        };
        fit(&s.y, &cfg, table)
    });
    match outcome {
        Err(e) => {
            log::warn!("replication n = {n}, rep = {rep} failed: {e}");
            rec.failure = Some(e.to_string());
        }
        Ok(r) => {
            // compare on the scale of theta0
            let est = r.theta_hat.renormalized(th0.normalization);
            rec.b_hat = Some(est.b);
            rec.se_b = r.se.b;
            rec.loglik = Some(r.loglik);
            if let Some(g) = gamma {
                rec.rotation = Some(g.rotate(&th0.sigma_diag, &est.beta));
            }
            let c = th0.signal_precision();
            let dir: f64 = (0..th0.p())
                .map(|i| th0.beta[i] * (est.beta[i] - th0.beta[i]) / th0.sigma_diag[i])
                .sum::<f64>()
                / c.sqrt();
            rec.beta_direction = Some(dir);
            rec.beta_hat = Some(est.beta);
            if !r.converged {
                rec.failure = Some(format!("not converged: {}", r.flags.join(", ")));
            }
        }
    }
    rec
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// Kolmogorov-Smirnov distance of a sample from N(0, 1).
pub fn ks_distance_normal(sample: &[f64]) -> f64 {
    let normal = Normal::standard();
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            ((i + 1) as f64 / k - f).max(f - i as f64 / k)
        })
        .fold(0.0, f64::max)
}

/// OLS slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn summarize(n: usize, recs: &[&ReplicationRecord], b0: f64) -> NSummary {
    let ok: Vec<&&ReplicationRecord> = recs.iter().filter(|r| r.ok()).collect();
    let b: Vec<f64> = ok.iter().filter_map(|r| r.b_hat).collect();
    let err: Vec<f64> = b.iter().map(|v| v - b0).collect();
    let with_se: Vec<(f64, f64)> = ok.iter().filter_map(|r| Some((r.b_hat?, r.se_b?))).collect();
    let t: Vec<f64> = with_se.iter().map(|(b, s)| (b - b0) / s).collect();
    let covered = t.iter().filter(|v| v.abs() <= 1.959_963_984_540_054).count();
    let k = ok.first().and_then(|r| r.rotation.as_ref()).map_or(0, |v| v.len());
    let sd_rotation = (0..k)
        .map(|j| sd(&ok.iter().filter_map(|r| r.rotation.as_ref().map(|v| v[j])).collect::<Vec<_>>()))
        .collect();
    let dir: Vec<f64> = ok.iter().filter_map(|r| r.beta_direction).collect();
    NSummary {
        n,
        n_ok: ok.len(),
        n_failed: recs.len() - ok.len(),
        bias_b: mean(&err),
        rmse_b: (err.iter().map(|e| e * e).sum::<f64>() / err.len() as f64).sqrt(),
        median_abs_err_b: median(&err.iter().map(|e| e.abs()).collect::<Vec<_>>()),
        sd_b: sd(&b),
        mean_se_b: mean(&with_se.iter().map(|v| v.1).collect::<Vec<_>>()),
        coverage_b: covered as f64 / t.len() as f64,
        ks_b: ks_distance_normal(&t),
        sd_rotation,
        sd_beta_direction: sd(&dir),
    }
}

/// Ljung-Box whiteness of the prediction errors at the true parameters.
pub fn mds_check(theta0: &ThetaParams<f64>, n: usize, seeds: usize, seed: u64) -> Result<MdsSummary> {
    let p_values: Vec<Vec<f64>> = (0..seeds)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let s = simulate(theta0, n, replication_seed(seed, n, k))?;
            let out = kalman_structured(&s.y, theta0)?;
            (0..theta0.p())
                .map(|i| Ok(whiteness_report(&out.v.column(i))?.p_value))
                .collect()
        })
        .collect::<Result<_>>()?;
    let pass = p_values.iter().filter(|ps| ps.iter().all(|&p| p > 0.01)).count();
    Ok(MdsSummary {
        n,
        seeds,
        pass_fraction: pass as f64 / seeds as f64,
        p_values,
    })
}

/// Repetitions for [`run_bench`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchRepeats {
    pub fast: usize,
    /// The dense exact filter is slow at large `n`; it gets its own count.
    pub exact: usize,
}

/// Median wall-clock times of the dense exact filter, the corrected fast
/// filter (covariance build included) and the structured exact engine, with
/// the largest prediction-error discrepancy.
pub fn run_bench(theta: &ThetaParams<f64>, n_grid: &[usize], m: usize, repeats: BenchRepeats, seed: u64) -> Result<Vec<BenchRow>> {
    if repeats.fast == 0 || repeats.exact == 0 {
        return Err(Error::InvalidArgument("bench repeats must be >= 1".into()));
    }
    let time = |f: &dyn Fn() -> Result<f64>| -> Result<f64> {
        let t0 = Instant::now();
        f()?;
        Ok(t0.elapsed().as_secs_f64())
    };
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let s = simulate(theta, n, seed)?;
        // the first timed run of each filter also supplies its output
        let t0 = Instant::now();
        let exact = kalman_exact(&s.y, theta)?;
        let mut te = vec![t0.elapsed().as_secs_f64()];
        for _ in 1..repeats.exact {
            te.push(time(&|| Ok(kalman_exact(&s.y, theta)?.loglik))?);
        }
        let t0 = Instant::now();
        let fast = kalman_fast(&s.y, theta, m, ApproxMode::Truncation)?;
        let mut tf = vec![t0.elapsed().as_secs_f64()];
        for _ in 1..repeats.fast {
            tf.push(time(&|| Ok(kalman_fast(&s.y, theta, m, ApproxMode::Truncation)?.loglik))?);
        }
        let ts: Vec<f64> = (0..repeats.fast)
            .map(|_| time(&|| Ok(kalman_structured(&s.y, theta)?.loglik)))
            .collect::<Result<_>>()?;
        let (e, f) = (median(&te), median(&tf));
        rows.push(BenchRow {
            n,
            p: theta.p(),
            m,
            exact_secs: e,
            fast_secs: f,
            structured_secs: median(&ts),
            speedup: e / f,
            max_v_diff: exact.max_v_diff(&fast),
            loglik_diff: (exact.loglik - fast.loglik).abs(),
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("n,p,m,exact_secs,fast_secs,structured_secs,speedup,max_v_diff,loglik_diff\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.n, r.p, r.m, r.exact_secs, r.fast_secs, r.structured_secs, r.speedup, r.max_v_diff, r.loglik_diff
        ));
    }
    s
}

/// Runs every requested target. Replications are independent and run in
/// parallel; results do not depend on the thread count.
pub fn run_mc(design: &McDesign, table: Option<&ArmaApproxTable>) -> Result<McReport> {
    design.validate()?;
    let th0 = &design.theta0;
    let gamma = if th0.p() >= 2 { Some(build_gamma0(th0)?) } else { None };
    let mut records = Vec::new();
    let mut per_n = Vec::new();
    if design.needs_fits() {
        let jobs: Vec<(usize, usize)> = design
            .n_grid
            .iter()
            .flat_map(|&n| (0..design.replications).map(move |r| (n, r)))
            .collect();
        records = jobs
            .into_par_iter()
            .map(|(n, rep)| one_replication(design, gamma.as_ref(), table, n, rep))
            .collect();
        for &n in &design.n_grid {
            let recs: Vec<&ReplicationRecord> = records.iter().filter(|r| r.n == n).collect();
            per_n.push(summarize(n, &recs, th0.b.to_f64_lossy()));
        }
    }
    let n_failed = records.iter().filter(|r| !r.ok()).count();
    let valid = records.is_empty() || (n_failed as f64) < 0.05 * records.len() as f64;

    let rate = design.targets.contains(&McTarget::RotationRate) && per_n.len() >= 2;
    let log_n: Vec<f64> = per_n.iter().map(|s| (s.n as f64).ln()).collect();
    let rotation_slopes = rate.then(|| {
        let k = per_n[0].sd_rotation.len();
        (0..k)
            .map(|j| ols_slope(&log_n, &per_n.iter().map(|s| s.sd_rotation[j].ln()).collect::<Vec<_>>()))
            .collect()
    });
    let beta_direction_slope =
        rate.then(|| ols_slope(&log_n, &per_n.iter().map(|s| s.sd_beta_direction.ln()).collect::<Vec<_>>()));

    let mds = if design.targets.contains(&McTarget::MdsCheck) {
        Some(
            design
                .n_grid
                .iter()
                .map(|&n| mds_check(th0, n, design.replications, design.seed))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let bench = if design.targets.contains(&McTarget::Speed) {
        Some(run_bench(th0, &design.n_grid, design.fit.m, BenchRepeats { fast: 3, exact: 1 }, design.seed)?)
    } else {
        None
    };
    Ok(McReport {
        design: design.clone(),
        per_n,
        rotation_slopes,
        beta_direction_slope,
        mds,
        bench,
        records,
        n_failed,
        valid,
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}


#[cfg(test)]
mod tests {
    use super::*;

    fn check_gamma(th: &ThetaParams<f64>) {
        let g = build_gamma0(th).unwrap();
        let p = th.p();
        let s = &th.sigma_diag;
        for j in 0..p - 1 {
            let orth: f64 = (0..p).map(|i| g.gamma[(i, j)] * th.beta[i] / s[i]).sum();
            assert!(orth.abs() < 1e-10);
            for k in 0..p - 1 {
                let ip: f64 = (0..p).map(|i| g.gamma[(i, j)] * g.gamma[(i, k)] / s[i]).sum();
                assert!((ip - if j == k { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gamma_examples() {
        let g = build_gamma0(&ThetaParams::new(vec![1.0, 0.0], vec![1.0, 1.0], 0.5)).unwrap();
        assert!((g.gamma[(0, 0)]).abs() < 1e-15 && (g.gamma[(1, 0)].abs() - 1.0).abs() < 1e-15);
        let g = build_gamma0(&ThetaParams::new(vec![1.0, 1.0], vec![1.0, 1.0], 0.5)).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((g.gamma[(0, 0)].abs() - r).abs() < 1e-15);
        assert!((g.gamma[(0, 0)] + g.gamma[(1, 0)]).abs() < 1e-15);
        assert!(build_gamma0(&ThetaParams::new(vec![1.0], vec![1.0], 0.5)).is_err());
    }

    #[test]
    fn gamma_identities_for_random_parameters() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let beta: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..3.0)).collect();
            let sig: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..4.0)).collect();
            check_gamma(&ThetaParams::new(beta, sig, 0.7));
        }
    }

    #[test]
    fn seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for n in [250, 1000] {
            for r in 0..500 {
                assert!(seen.insert(replication_seed(7, n, r)));
            }
        }
    }

    #[test]
    fn ks_and_slope_helpers() {
        assert!((ols_slope(&[1.0, 2.0, 3.0], &[2.0, 0.0, -2.0]) + 2.0).abs() < 1e-15);
        // a single point at the median is half a step from either side
        assert!((ks_distance_normal(&[0.0]) - 0.5).abs() < 1e-15);
        let q: Vec<f64> = (1..=999)
            .map(|i| Normal::standard().inverse_cdf(i as f64 / 1000.0))
            .collect();
        assert!(ks_distance_normal(&q) < 0.002);
    }

    #[test]
    fn design_checks() {
        let th = ThetaParams::new(vec![1.0, 0.8], vec![0.5, 0.5], 0.3);
        let mut d = McDesign::new(th, vec![200], 10, 1);
        assert!(d.validate().is_err());
        d.targets = [McTarget::Consistency].into_iter().collect();
        assert!(d.validate().is_ok());
    }

    #[test]
    fn small_mc_is_deterministic() {
        let th = ThetaParams::new(vec![1.0, 0.8], vec![0.5, 0.5], 0.6);
        let mut d = McDesign::new(th, vec![150, 300], 4, 11);
        d.targets = [McTarget::Consistency, McTarget::MdsCheck].into_iter().collect();
        d.fit.n_starts = 8;
        let a = run_mc(&d, None).unwrap();
        let b = run_mc(&d, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 8);
        assert_eq!(a.per_n.len(), 2);
        assert_eq!(a.mds.as_ref().unwrap()[0].p_values.len(), 4);
        assert!(a.records_csv().lines().count() == 9);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        assert_eq!(single.install(|| run_mc(&d, None)).unwrap(), a);
    }

    #[test]
    fn bench_reports_agreement() {
        let th = ThetaParams::new(vec![1.0, 0.8, 1.2], vec![0.5, 0.5, 0.5], 0.476);
        let rows = run_bench(&th, &[50], 4, BenchRepeats { fast: 2, exact: 2 }, 1).unwrap();
        assert!(rows[0].max_v_diff < 1e-8);
        assert!(rows[0].exact_secs > 0.0 && rows[0].fast_secs > 0.0);
        assert_eq!(bench_csv(&rows).lines().count(), 2);
    }
}
