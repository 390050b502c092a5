//! Unconstrained minimization of black-box objectives: BFGS with a
//! More-Thuente line search on central-difference gradients, falling back
//! to Nelder-Mead when the line search breaks down. Plus the numerical
//! Hessian used for standard errors.

use argmin::core::{CostFunction, Error as ArgminError, Executor, Gradient, State, TerminationReason};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::neldermead::NelderMead;
use argmin::solver::quasinewton::BFGS;
use serde::{Deserialize, Serialize};

/// Stopping rules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimOptions {
    pub max_iters: u64,
    pub grad_tol: f64,
    pub cost_tol: f64,
    /// Iteration cap for the simplex fallback.
    pub fallback_iters: u64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-6,
            cost_tol: 1e-12,
            fallback_iters: 2000,
        }
    }
}

/// Which algorithm produced the reported point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bfgs,
    NelderMead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iters: u64,
    pub method: Method,
    /// Stopped on a tolerance rather than an iteration cap or failure.
    pub converged: bool,
}

struct Objective<'a, F> {
    f: &'a F,
}

impl<F: Fn(&[f64]) -> f64> CostFunction for Objective<'_, F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> Result<f64, ArgminError> {
        Ok((self.f)(x))
    }
}

impl<F: Fn(&[f64]) -> f64> Gradient for Objective<'_, F> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Self::Param) -> Result<Vec<f64>, ArgminError> {
        let g = central_gradient(self.f, x);
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(ArgminError::msg("non-finite gradient"))
        }
    }
}

/// Central differences with step `eps^{1/3} max(1, |x_i|)`.
pub fn central_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Vec<f64> {
    let h0 = f64::EPSILON.cbrt();
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = h0 * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let dn = f(&xp);
            xp[i] = x[i];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// Symmetrized central-difference Hessian with step `eps^{1/4} max(1, |x_i|)`.
pub fn central_hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Vec<Vec<f64>> {
    let k = x.len();
    let h0 = f64::EPSILON.powf(0.25);
    let h: Vec<f64> = x.iter().map(|v| h0 * v.abs().max(1.0)).collect();
    let f0 = f(x);
    let mut out = vec![vec![0.0; k]; k];
    let mut xp = x.to_vec();
    let eval = |xp: &mut Vec<f64>, di: (usize, f64), dj: Option<(usize, f64)>| {
        xp[di.0] += di.1;
        if let Some((j, s)) = dj {
            xp[j] += s;
        }
        let v = f(xp);
        xp[di.0] = x[di.0];
        if let Some((j, _)) = dj {
            xp[j] = x[j];
        }
        v
    };
    for i in 0..k {
        let up = eval(&mut xp, (i, h[i]), None);
        let dn = eval(&mut xp, (i, -h[i]), None);
        out[i][i] = (up - 2.0 * f0 + dn) / (h[i] * h[i]);
        for j in 0..i {
            let pp = eval(&mut xp, (i, h[i]), Some((j, h[j])));
            let pm = eval(&mut xp, (i, h[i]), Some((j, -h[j])));
            let mp = eval(&mut xp, (i, -h[i]), Some((j, h[j])));
            let mm = eval(&mut xp, (i, -h[i]), Some((j, -h[j])));
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

fn identity(k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn run_bfgs<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], opts: &OptimOptions) -> Result<OptimResult, ArgminError> {
    let problem = Objective { f };
    let solver = BFGS::new(MoreThuenteLineSearch::new())
        .with_tolerance_grad(opts.grad_tol)?
        .with_tolerance_cost(opts.cost_tol)?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.param(x0.to_vec()).inv_hessian(identity(x0.len())).max_iters(opts.max_iters))
        .run()?;
    let state = res.state();
    let x = state
        .get_best_param()
        .cloned()
        .ok_or_else(|| ArgminError::msg("no parameter"))?;
    let converged = matches!(
        state.get_termination_reason(),
        Some(TerminationReason::SolverConverged)
    );
    Ok(OptimResult {
        fx: state.get_best_cost(),
        x,
        iters: state.get_iter(),
        method: Method::Bfgs,
        converged,
    })
}

/// Nelder-Mead from a simplex of axis steps around `x0`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], step: f64, opts: &OptimOptions) -> Option<OptimResult> {
    let k = x0.len();
    let mut simplex = vec![x0.to_vec()];
    for i in 0..k {
        let mut v = x0.to_vec();
        v[i] += step * x0[i].abs().max(1.0);
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(opts.cost_tol.max(1e-14)).ok()?;
    let res = Executor::new(Objective { f }, solver)
        .configure(|s| s.max_iters(opts.fallback_iters))
        .run()
        .ok()?;
    let state = res.state();
    let converged = matches!(
        state.get_termination_reason(),
        Some(TerminationReason::SolverConverged)
    );
    Some(OptimResult {
        x: state.get_best_param()?.clone(),
        fx: state.get_best_cost(),
        iters: state.get_iter(),
        method: Method::NelderMead,
        converged,
    })
}

/// Minimizes `f` from `x0`. BFGS first; if it fails or ends at a
/// non-finite value, Nelder-Mead restarts from the best point known.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let f0 = f(x0);
    match run_bfgs(f, x0, opts) {
        Ok(r) if r.fx.is_finite() && r.fx <= f0 => r,
        other => {
            let start = match &other {
                Ok(r) if r.fx.is_finite() && r.fx < f0 => r.x.clone(),
                _ => x0.to_vec(),
            };
            log::debug!("BFGS failed ({:?}); falling back to Nelder-Mead", other.err().map(|e| e.to_string()));
            nelder_mead(f, &start, 0.1, opts).unwrap_or(OptimResult {
                x: x0.to_vec(),
                fx: f0,
                iters: 0,
                method: Method::NelderMead,
                converged: false,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let r = minimize(&rosenbrock, &[-1.2, 1.0], &OptimOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{r:?}");
    }

    #[test]
    fn hessian_of_quadratic_is_exact() {
        // f = x'Ax/2 + b'x with A = [[3, 1, 0], [1, 4, -2], [0, -2, 5]]
        let a = [[3.0, 1.0, 0.0], [1.0, 4.0, -2.0], [0.0, -2.0, 5.0]];
        let f = |x: &[f64]| {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += 0.5 * x[i] * a[i][j] * x[j];
                }
                s += (i as f64 + 1.0) * x[i];
            }
            s
        };
        // exact up to roundoff of order eps |f| / h^2
        let h = central_hessian(&f, &[0.3, -2.0, 5.0]);
        for i in 0..3 {
            for j in 0..3 {
                assert!((h[i][j] - a[i][j]).abs() < 1e-4);
            }
        }
        let g = central_gradient(&f, &[0.0, 0.0, 0.0]);
        for i in 0..3 {
            assert!((g[i] - (i as f64 + 1.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn falls_back_when_objective_has_holes() {
        // infinite outside the unit ball: BFGS line searches can stumble there
        let f = |x: &[f64]| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            if r2 >= 1.0 {
                f64::INFINITY
            } else {
                (x[0] - 0.5).powi(2) + (x[1] + 0.2).powi(2)
            }
        };
        let r = minimize(&f, &[0.0, 0.0], &OptimOptions::default());
        assert!((r.x[0] - 0.5).abs() < 1e-3 && (r.x[1] + 0.2).abs() < 1e-3, "{r:?}");
    }
}
