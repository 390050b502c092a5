//! Cross-checks against computations that share no code with the library
//! filters: Gaussian conditioning with nalgebra, Gamma-function
//! coefficients and f32 against f64 arithmetic.

use fracuc::estimate::{fit, FitConfig};
use fracuc::fracdiff::{frac_diff_coeffs, frac_int_coeffs};
use fracuc::model::{simulate, ThetaParams};
use fracuc::ssm_exact::{kalman_exact, kalman_structured};
use fracuc::ssm_fast::{extract_components, kalman_fast, ApproxMode};
use fracuc::{Mat, Theta};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use statrs::function::gamma::gamma;

/// `Cov(y_s, y_t)` from first principles: `x_t = sum_j c_j eta_{t-j}` with
/// `c` built here by a plain loop (including the unit-root cumulation).
fn dense_cov(th: &Theta, n: usize) -> DMatrix<f64> {
    let (d, unit) = if th.b >= 1.0 { (th.b - 1.0, true) } else { (th.b, false) };
    let mut phi = vec![1.0; n];
    for j in 1..n {
        phi[j] = phi[j - 1] * (j as f64 - 1.0 + d) / j as f64;
    }
    let c: Vec<f64> = if unit {
        phi.iter().scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
    } else {
        phi
    };
    let p = th.p();
    DMatrix::from_fn(n * p, n * p, |r, q| {
        let (s, i, t, k) = (r / p, r % p, q / p, q % p);
        let lo = s.min(t);
        let cx: f64 = (0..=lo).map(|m| c[s - m] * c[t - m]).sum::<f64>() * th.sigma_eta2;
        th.beta[i] * th.beta[k] * cx + if r == q { th.sigma_diag[i] } else { 0.0 }
    })
}

/// `y_t - E[y_t | y_1..y_{t-1}]` by direct Gaussian conditioning.
fn conditional_errors(th: &Theta, y: &Mat) -> Vec<Vec<f64>> {
    let (n, p) = y.shape();
    let cov = dense_cov(th, n);
    let yv = DVector::from_fn(n * p, |r, _| y[(r / p, r % p)]);
    (0..n)
        .map(|t| {
            let k = t * p;
            if k == 0 {
                return (0..p).map(|i| yv[i]).collect();
            }
            let s_pp = cov.view((0, 0), (k, k)).into_owned();
            let s_tp = cov.view((k, 0), (p, k)).into_owned();
            let w = s_pp.cholesky().unwrap().solve(&yv.rows(0, k).into_owned());
            let mean = s_tp * w;
            (0..p).map(|i| yv[k + i] - mean[i]).collect()
        })
        .collect()
}

fn max_dev(th: &Theta, y: &Mat, v: &Mat) -> f64 {
    let oracle = conditional_errors(th, y);
    let mut worst: f64 = 0.0;
    for (t, row) in oracle.iter().enumerate() {
        for (i, o) in row.iter().enumerate() {
            worst = worst.max((v[(t, i)] - o).abs());
        }
    }
    worst
}

#[test]
fn all_filters_match_gaussian_conditioning() {
    for (b, p) in [(0.3, 1), (0.476, 3), (0.8, 2), (1.0, 2), (1.3, 3)] {
        let th = ThetaParams::new([1.0, -0.7, 1.4][..p].to_vec(), [0.4, 1.1, 0.8][..p].to_vec(), b);
        let y = simulate(&th, 60, 17).unwrap().y;
        let exact = kalman_exact(&y, &th).unwrap();
        let structured = kalman_structured(&y, &th).unwrap();
        let fast = kalman_fast(&y, &th, 3, ApproxMode::Truncation).unwrap();
        for (name, v) in [("exact", &exact.v), ("structured", &structured.v), ("fast", &fast.v)] {
            let dev = max_dev(&th, &y, v);
            assert!(dev < 1e-8, "{name} at b = {b}, p = {p}: {dev:e}");
        }
    }
}

#[test]
fn coefficients_match_gamma_ratios() {
    // pi_j(b) = Gamma(j - b) / (Gamma(j + 1) Gamma(-b)) for non-integer b
    for b in [0.3, 0.5, 0.476, 1.2] {
        let pi = frac_diff_coeffs(b, 25).unwrap().coeffs;
        let phi = frac_int_coeffs(b, 25).unwrap().coeffs;
        for j in 0..25 {
            let jf = j as f64;
            let gp = gamma(jf - b) / (gamma(jf + 1.0) * gamma(-b));
            let gf = gamma(jf + b) / (gamma(jf + 1.0) * gamma(b));
            assert!((pi[j] - gp).abs() < 1e-12 * gp.abs().max(1.0), "pi_{j}({b})");
            assert!((phi[j] - gf).abs() < 1e-12 * gf.abs().max(1.0), "phi_{j}({b})");
        }
    }
    assert_eq!(frac_diff_coeffs(0.5, 3).unwrap().coeffs, vec![1.0, -0.5, -0.125]);
    assert_eq!(frac_int_coeffs(0.5, 3).unwrap().coeffs, vec![1.0, 0.5, 0.375]);
}

#[test]
fn single_precision_tracks_double() {
    let th = ThetaParams::new(vec![1.0, 0.8], vec![0.5, 0.5], 0.6);
    let y = simulate(&th, 200, 4).unwrap().y;
    let th32: ThetaParams<f32> = th.cast();
    let y32 = fracuc::linalg::Matrix::from_fn(200, 2, |t, i| y[(t, i)] as f32);
    let a = kalman_structured(&y, &th).unwrap();
    let b = kalman_structured(&y32, &th32).unwrap();
    let c = kalman_fast(&y32, &th32, 4, ApproxMode::Truncation).unwrap();
    for t in 0..200 {
        for i in 0..2 {
            assert!((a.v[(t, i)] - b.v[(t, i)] as f64).abs() < 1e-3);
            assert!((a.v[(t, i)] - c.v[(t, i)] as f64).abs() < 1e-2);
        }
    }
    assert!((a.loglik - b.loglik as f64).abs() / a.loglik.abs() < 1e-4);
}

#[test]
fn fit_then_extract_recovers_the_trend() {
    let th = ThetaParams::new(vec![1.0, 0.8, 1.2], vec![0.3, 0.3, 0.3], 0.9);
    let s = simulate(&th, 600, 21).unwrap();
    let cfg = FitConfig {
        n_starts: 60,
        top_k: 1,
        start_iters: 0,
        ..FitConfig::default()
    };
    let r = fit(&s.y, &cfg, None).unwrap();
    assert!(r.converged, "{:?}", r.flags);
    assert!((r.theta_hat.b - 0.9).abs() < 4.0 * r.se.b.unwrap());
    let filt = kalman_structured(&s.y, &r.theta_hat).unwrap();
    let comp = extract_components(&s.y, &r.theta_hat, &filt).unwrap();
    // the filtered trend tracks the simulated one closely
    let n = s.x.len() as f64;
    let (mx, mt) = (s.x.iter().sum::<f64>() / n, comp.trend.iter().sum::<f64>() / n);
    let cov: f64 = s.x.iter().zip(&comp.trend).map(|(a, b)| (a - mx) * (b - mt)).sum();
    let vx: f64 = s.x.iter().map(|a| (a - mx).powi(2)).sum();
    let vt: f64 = comp.trend.iter().map(|b| (b - mt).powi(2)).sum();
    assert!(cov / (vx * vt).sqrt() > 0.97);
    let inside = (0..s.x.len())
        .filter(|&t| (s.x[t] - comp.trend[t]).abs() <= comp.trend_band[t] * 1.2)
        .count();
    assert!(inside as f64 / n > 0.9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn structured_and_fast_agree_with_the_reference(
        b in 0.0f64..1.49,
        p in 1usize..4,
        m in 1usize..9,
        seed in any::<u64>(),
        scale in 0.2f64..2.0,
    ) {
        let th = ThetaParams::new(
            [1.0, 0.6 * scale, -1.3][..p].to_vec(),
            [0.5 * scale, 0.9, 0.2][..p].to_vec(),
            b,
        );
        let y = simulate(&th, 40, seed).unwrap().y;
        let e = kalman_exact(&y, &th).unwrap();
        let s = kalman_structured(&y, &th).unwrap();
        let f = kalman_fast(&y, &th, m, ApproxMode::Truncation).unwrap();
        prop_assert!(e.max_v_diff(&s) < 1e-8);
        prop_assert!(e.max_v_diff(&f) < 1e-8);
        prop_assert!((e.loglik - s.loglik).abs() < 1e-6);
        prop_assert!((e.loglik - f.loglik).abs() < 1e-6);
    }
}
