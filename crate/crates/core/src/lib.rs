//! Parameter sensitivities of ODE systems via truncated Peano-Baker series.
//!
//! The pipeline is: integrate the state on a grid ([`ode::integrate`]), then
//! propagate `S = ∂x/∂p` along it with [`sensitivity::run_pbsr`],
//! [`sensitivity::run_exp`] or [`sensitivity::run_pbs_plain`]. Forward
//! sensitivities and finite differences in [`reference`] serve as baselines.
//!
//! ```
//! use pbs_sens::{models::Model, ode, sensitivity};
//!
//! let model = Model::by_name("scalar_decay").unwrap();
//! let grid = ode::uniform_grid(0.0, 1.0, 0.01).unwrap();
//! let traj = ode::integrate(model.system.as_ref(), &model.p, &model.x0, &grid).unwrap();
//! let cfg = pbs_sens::PbsrConfig { force_pbs: true, ..Default::default() };
//! let sens = sensitivity::run_pbsr(model.system.as_ref(), &traj, &cfg).unwrap();
//! let exact = -(-1.0f64).exp();
//! assert!((sens.last()[(0, 0)] - exact).abs() < 1e-5);
//! ```

// NaN must fail range checks, so `!(x > 0.0)` is intended
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod linalg;
pub mod models;
pub mod ode;
pub mod reference;
pub mod sensitivity;
pub mod study;

pub use error::{Error, Result};
pub use linalg::DenseMatrix;
pub use ode::{OdeSystem, Trajectory};
pub use sensitivity::{Method, PbsrConfig, SensitivityTrajectory};
