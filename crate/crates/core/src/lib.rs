//! Fractionally integrated unobserved-components models.
//!
//! A panel `y_t = beta x_t + u_t` is driven by one common latent trend
//! `x_t = (1 - L)_+^{-b} eta_t`. The crate simulates the model, filters it
//! exactly (the reference `(n+1)`-state filter and a structured `O(n^2)`
//! engine) or through a small truncated/ARMA state space with an exact
//! correction term, estimates the parameters by maximum likelihood, and
//! provides memory diagnostics and a Monte Carlo harness.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix `f64`.

pub mod arma_map;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod estimate;
pub mod fracdiff;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod ssm_exact;
pub mod ssm_fast;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Theta = model::ThetaParams<f64>;
pub type Mat = linalg::Matrix<f64>;
pub type Sim = model::SimOutput<f64>;
pub type Filter = ssm_exact::FilterOutput<f64>;
pub type Components = ssm_fast::Components<f64>;
pub type Coeffs = fracdiff::FracCoeffs<f64>;
