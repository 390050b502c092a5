//! Spectral and memory diagnostics: periodogram with Daniell smoothing,
//! exact local Whittle estimation of the memory parameter, and residual
//! whiteness checks.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::fracdiff::frac_diff;

/// Ordinates at the Fourier frequencies `2 pi j / n`, `j = 1..n/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Periodogram {
    pub freqs: Vec<f64>,
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// Half-width of the Daniell window.
    pub bandwidth: usize,
}

impl Periodogram {
    /// `freq,raw,smoothed` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("freq,raw,smoothed\n");
        for ((f, r), m) in self.freqs.iter().zip(&self.raw).zip(&self.smoothed) {
            s.push_str(&format!("{f},{r},{m}\n"));
        }
        s
    }
}

/// `floor(sqrt n)`, kept below `n / 4`.
pub fn default_bandwidth(n: usize) -> usize {
    let b = (n as f64).sqrt().floor() as usize;
    b.min(n.div_ceil(4).saturating_sub(1))
}

/// `|sum_t x_t e^{-i lambda_j t}|^2 / (2 pi n)` for `j = 1..n/2`.
pub fn raw_periodogram(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / (2.0 * std::f64::consts::PI * n as f64);
    let half = n / 2;
    let freqs = (1..=half).map(|j| 2.0 * std::f64::consts::PI * j as f64 / n as f64).collect();
    // the time origin only rotates the phase, so t = 0.. is fine
    let raw = (1..=half).map(|j| buf[j].norm_sqr() * scale).collect();
    (freqs, raw)
}

/// Periodogram smoothed by a Daniell window of half-width `bandwidth`,
/// reflecting at both ends.
pub fn periodogram(x: &[f64], bandwidth: usize) -> Result<Periodogram> {
    let n = x.len();
    if n < 16 {
        return Err(Error::InvalidArgument(format!("periodogram needs n >= 16, got {n}")));
    }
    if 4 * bandwidth >= n {
        return Err(Error::InvalidArgument(format!("bandwidth {bandwidth} must be below n / 4 = {}", n / 4)));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("series contains non-finite values".into()));
    }
    let (freqs, raw) = raw_periodogram(x);
    let len = raw.len() as isize;
    let reflect = |i: isize| -> usize {
        let mut i = i;
        if i < 0 {
            i = -i - 1;
        }
        if i >= len {
            i = 2 * len - i - 1;
        }
        i as usize
    };
    let w = bandwidth as isize;
    let smoothed = (0..len)
        .map(|j| (-w..=w).map(|k| raw[reflect(j + k)]).sum::<f64>() / (2 * w + 1) as f64)
        .collect();
    Ok(Periodogram {
        freqs,
        raw,
        smoothed,
        bandwidth,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElwResult {
    pub d_hat: f64,
    pub m_used: usize,
    pub objective_value: f64,
    /// Asymptotic standard error `1 / (2 sqrt m)`.
    pub se: f64,
}

impl ElwResult {
    pub fn to_csv(&self) -> String {
        format!(
            "d_hat,m_used,objective_value,se\n{},{},{},{}\n",
            self.d_hat, self.m_used, self.objective_value, self.se
        )
    }
}

/// Options for [`elw_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElwOptions {
    /// Frequencies used; `None` means `floor(n^0.65)`.
    pub m: Option<usize>,
    /// Subtract the sample mean first (for raw data with a level).
    pub demean: bool,
    pub interval: (f64, f64),
    pub grid_step: f64,
    pub tol: f64,
}

impl Default for ElwOptions {
    fn default() -> Self {
        Self {
            m: None,
            demean: false,
            interval: (-1.0, 2.0),
            grid_step: 0.02,
            tol: 1e-7,
        }
    }
}

pub fn default_elw_m(n: usize) -> usize {
    (n as f64).powf(0.65).floor() as usize
}

/// Exact local Whittle objective
/// `R(d) = log G(d) - 2 d mean(log lambda_j)`, `G(d) = mean I_{(1-L)^d x}(lambda_j)`
/// over `j = 1..m`.
pub fn elw_objective(x: &[f64], d: f64, m: usize) -> Result<f64> {
    let z = frac_diff(x, d)?;
    let (freqs, raw) = raw_periodogram(&z);
    let g = raw[..m].iter().sum::<f64>() / m as f64;
    let mean_log = freqs[..m].iter().map(|l| l.ln()).sum::<f64>() / m as f64;
    Ok(g.ln() - 2.0 * d * mean_log)
}

/// Exact local Whittle estimate with the default options.
pub fn elw(x: &[f64], m: Option<usize>) -> Result<ElwResult> {
    elw_with(x, &ElwOptions { m, ..ElwOptions::default() })
}

/// Grid search over the interval followed by golden-section refinement of
/// the best grid cell.
pub fn elw_with(x: &[f64], opts: &ElwOptions) -> Result<ElwResult> {
    let n = x.len();
    if n < 128 {
        return Err(Error::InvalidArgument(format!("exact local Whittle needs n >= 128, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("series contains non-finite values".into()));
    }
    let m = opts.m.unwrap_or_else(|| default_elw_m(n));
    if m < 2 || m > n / 2 {
        return Err(Error::InvalidArgument(format!("m = {m} must lie in [2, n/2]")));
    }
    let (lo, hi) = opts.interval;
    if !(lo < hi) || !(opts.grid_step > 0.0) {
        return Err(Error::InvalidArgument("invalid search interval".into()));
    }
    let series: Vec<f64> = if opts.demean {
        let mean = x.iter().sum::<f64>() / n as f64;
        x.iter().map(|v| v - mean).collect()
    } else {
        x.to_vec()
    };
    let r = |d: f64| elw_objective(&series, d, m);

    let steps = ((hi - lo) / opts.grid_step).round() as usize;
    let mut best = (lo, f64::INFINITY);
    for i in 0..=steps {
        let d = (lo + i as f64 * opts.grid_step).min(hi);
        let v = r(d)?;
        if v < best.1 {
            best = (d, v);
        }
    }
    let (mut a, mut b) = ((best.0 - opts.grid_step).max(lo), (best.0 + opts.grid_step).min(hi));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (r(c)?, r(d)?);
    while b - a > opts.tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = r(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = r(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    let fm = r(mid)?;
    let (d_hat, objective_value) = [(best.0, best.1), (mid, fm)]
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("two candidates");
    Ok(ElwResult {
        d_hat,
        m_used: m,
        objective_value,
        se: 1.0 / (2.0 * (m as f64).sqrt()),
    })
}

/// Sample autocorrelations and the Ljung-Box portmanteau test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitenessReport {
    pub n: usize,
    pub lags: usize,
    /// `acf[k - 1]` is the lag-`k` autocorrelation.
    pub acf: Vec<f64>,
    pub ljung_box: f64,
    pub p_value: f64,
    /// Lags with `|acf| > 2 / sqrt(n)`.
    pub exceedances: usize,
}

pub const DEFAULT_LB_LAGS: usize = 20;

/// Sample autocorrelations at lags `1..=lags` (demeaned, biased).
pub fn acf(x: &[f64], lags: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0: f64 = c.iter().map(|v| v * v).sum();
    (1..=lags)
        .map(|k| c[k..].iter().zip(&c[..n - k]).map(|(a, b)| a * b).sum::<f64>() / c0)
        .collect()
}

/// Whiteness report with [`DEFAULT_LB_LAGS`] lags.
pub fn whiteness_report(x: &[f64]) -> Result<WhitenessReport> {
    whiteness_report_lags(x, DEFAULT_LB_LAGS)
}

pub fn whiteness_report_lags(x: &[f64], lags: usize) -> Result<WhitenessReport> {
    let n = x.len();
    if n < 50 || lags == 0 || lags >= n {
        return Err(Error::InvalidArgument(format!(
            "whiteness check needs n >= 50 and 0 < lags < n, got n = {n}, lags = {lags}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("series contains non-finite values".into()));
    }
    let r = acf(x, lags);
    let nf = n as f64;
    let q = nf * (nf + 2.0) * r.iter().enumerate().map(|(k, v)| v * v / (nf - (k + 1) as f64)).sum::<f64>();
    let chi = ChiSquared::new(lags as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p_value = chi.sf(q);
    let band = 2.0 / nf.sqrt();
    let exceedances = r.iter().filter(|v| v.abs() > band).count();
    Ok(WhitenessReport {
        n,
        lags,
        acf: r,
        ljung_box: q,
        p_value,
        exceedances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracdiff::frac_integrate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let e = noise(n, seed);
        let mut x = vec![0.0; n];
        for t in 0..n {
            x[t] = e[t] + if t > 0 { phi * x[t - 1] } else { 0.0 };
        }
        x
    }

    #[test]
    fn white_noise_spectrum_is_flat() {
        let x = noise(4096, 1);
        let p = periodogram(&x, default_bandwidth(4096)).unwrap();
        let level = 1.0 / (2.0 * std::f64::consts::PI);
        let within = p.smoothed.iter().filter(|&&v| (v / level - 1.0).abs() < 0.15).count();
        assert!(within as f64 >= 0.9 * p.smoothed.len() as f64, "{within} of {}", p.smoothed.len());
        let mean_raw = p.raw.iter().sum::<f64>() / p.raw.len() as f64;
        let var = x.iter().map(|v| v * v).sum::<f64>() / 4096.0;
        assert!((mean_raw / (var * level) - 1.0).abs() < 0.05);
        // the band-wide average of the smoothed ordinates
        let band = p.smoothed.iter().sum::<f64>() / p.smoothed.len() as f64;
        assert!((band / level - 1.0).abs() < 0.15);
    }

    #[test]
    fn daniell_window_is_a_moving_average() {
        let x = ar1(0.3, 64, 2);
        let p = periodogram(&x, 2).unwrap();
        let j = 10;
        let avg = p.raw[j - 2..=j + 2].iter().sum::<f64>() / 5.0;
        assert!((p.smoothed[j] - avg).abs() < 1e-15);
        // reflection at the left edge: indices -2, -1 map to 1, 0
        let left = (p.raw[1] + p.raw[0] + p.raw[0] + p.raw[1] + p.raw[2]) / 5.0;
        assert!((p.smoothed[0] - left).abs() < 1e-15);
        assert!(p.raw.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn periodogram_matches_direct_sum() {
        let x = ar1(0.5, 37, 3);
        let (f, raw) = raw_periodogram(&x);
        for j in [0, 5, 17] {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                re += v * (f[j] * (t + 1) as f64).cos();
                im -= v * (f[j] * (t + 1) as f64).sin();
            }
            let direct = (re * re + im * im) / (2.0 * std::f64::consts::PI * 37.0);
            assert!((raw[j] - direct).abs() < 1e-12 * direct.max(1.0));
        }
    }

    #[test]
    fn parseval() {
        for n in [1001, 1024] {
            let x = ar1(0.4, n, 4);
            let p = periodogram(&x, 3).unwrap();
            let total: f64 = p.raw.iter().sum::<f64>() * 4.0 * std::f64::consts::PI / n as f64;
            let mean = x.iter().sum::<f64>() / n as f64;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((total / var - 1.0).abs() < 0.01, "n = {n}: {total} vs {var}");
        }
    }

    #[test]
    fn ar1_has_low_frequency_power() {
        let x = ar1(0.9, 4096, 5);
        let p = periodogram(&x, default_bandwidth(4096)).unwrap();
        let k = p.smoothed.len();
        assert!(p.smoothed[0] > 10.0 * p.smoothed[k - 1]);
    }

    #[test]
    fn differenced_noise_has_a_spectral_zero() {
        let e = noise(4097, 6);
        let x: Vec<f64> = e.windows(2).map(|w| w[1] - w[0]).collect();
        let p = periodogram(&x, 8).unwrap();
        let band = p.smoothed.iter().sum::<f64>() / p.smoothed.len() as f64;
        assert!(p.smoothed[0] < 0.2 * band);
    }

    #[test]
    fn periodogram_argument_checks() {
        assert!(periodogram(&[0.0; 15], 1).is_err());
        assert!(periodogram(&[0.0; 100], 25).is_err());
        assert!(periodogram(&[0.0; 100], 24).is_ok());
        assert_eq!(default_bandwidth(16), 3);
    }

    #[test]
    fn elw_white_noise_and_fractional() {
        let x = noise(4096, 7);
        let r = elw(&x, None).unwrap();
        assert!(r.d_hat.abs() < 0.1, "{r:?}");
        assert_eq!(r.m_used, default_elw_m(4096));
        assert!((r.se - 1.0 / (2.0 * (r.m_used as f64).sqrt())).abs() < 1e-15);
        let y = frac_integrate(&noise(4096, 8), 0.4).unwrap();
        let r = elw(&y, None).unwrap();
        assert!((r.d_hat - 0.4).abs() < 0.1, "{r:?}");
    }

    #[test]
    fn elw_is_the_global_minimum() {
        let y = frac_integrate(&noise(512, 9), 0.3).unwrap();
        let r = elw(&y, None).unwrap();
        for i in 0..=600 {
            let d = -1.0 + i as f64 * 0.005;
            assert!(elw_objective(&y, d, r.m_used).unwrap() >= r.objective_value - 1e-12);
        }
    }

    #[test]
    fn elw_scale_and_difference() {
        let y = frac_integrate(&noise(2048, 10), 0.9).unwrap();
        let r = elw(&y, None).unwrap();
        let scaled: Vec<f64> = y.iter().map(|v| -4.0 * v).collect();
        assert_eq!(elw(&scaled, None).unwrap().d_hat, r.d_hat);
        let scaled: Vec<f64> = y.iter().map(|v| 3.7 * v).collect();
        assert!((elw(&scaled, None).unwrap().d_hat - r.d_hat).abs() < 1e-6);
        let dy = frac_diff(&y, 1.0).unwrap();
        let rd = elw(&dy, None).unwrap();
        assert!((rd.d_hat - (r.d_hat - 1.0)).abs() < 0.1, "{} vs {}", rd.d_hat, r.d_hat);
        assert!(elw(&y[..127], None).is_err());
    }

    #[test]
    fn ljung_box_size_and_power() {
        let passes = (0..100).filter(|&s| whiteness_report(&noise(2000, 100 + s)).unwrap().p_value > 0.01).count();
        assert!(passes >= 95, "{passes}");
        let r = whiteness_report(&ar1(0.5, 2000, 11)).unwrap();
        assert!(r.p_value < 0.01);
        assert!(r.exceedances > 0);
        assert!(whiteness_report(&noise(49, 1)).is_err());
    }

    #[test]
    fn ljung_box_by_hand() {
        let x = ar1(0.2, 60, 12);
        let r = whiteness_report_lags(&x, 3).unwrap();
        let q = 60.0 * 62.0 * (r.acf[0].powi(2) / 59.0 + r.acf[1].powi(2) / 58.0 + r.acf[2].powi(2) / 57.0);
        assert!((r.ljung_box - q).abs() < 1e-12);
        // chi-square(3) survival function in closed form
        let s = (q / 2.0).sqrt();
        let sf = statrs::function::erf::erfc(s / 1.0) + (2.0 * q / std::f64::consts::PI).sqrt() * (-q / 2.0).exp();
        assert!((r.p_value - sf).abs() < 1e-10);
    }
}
