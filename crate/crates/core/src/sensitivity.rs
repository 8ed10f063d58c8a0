//! Sensitivity recursions along a precomputed state trajectory.
//!
//! Given `x̂_k` on a grid, the sensitivity `S = ∂x/∂p` obeys
//! `Ṡ = ∇ₓf·S + ∇ₚf`, `S(t₀) = 0`. Each interval is advanced with either
//!
//! * a Peano-Baker step: the state-transition matrix truncated after the
//!   second iterated integral, every integral taken with the trapezoidal rule;
//! * an exponential step: the exact constant-coefficient update with the
//!   Jacobians frozen at the left endpoint.
//!
//! [`run_pbsr`] chooses between them per interval and refines the Peano-Baker
//! branch on a uniform sub-grid; [`run_exp`] always takes the exponential step;
//! [`run_pbs_plain`] takes a single Peano-Baker step per interval.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{exp_and_phi1, is_singular, DenseMatrix};
use crate::ode::{OdeSystem, Trajectory};

/// Algorithm that produced a sensitivity trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pbsr,
    Exp,
    Pbs,
    Fs,
    Fd,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Pbsr, Method::Exp, Method::Pbs, Method::Fs, Method::Fd];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Pbsr => "pbsr",
            Method::Exp => "exp",
            Method::Pbs => "pbs",
            Method::Fs => "fs",
            Method::Fd => "fd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

/// Sequence of sensitivity matrices `Ŝ_k` on the trajectory grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTrajectory {
    pub times: Vec<f64>,
    pub matrices: Vec<DenseMatrix>,
    pub method: Method,
    /// `equilibrium_flags[k + 1]` is set when interval `k` used the exponential step.
    pub equilibrium_flags: Vec<bool>,
    /// Intervals whose exponential step saw a Jacobian singular to working precision.
    pub singular_steps: Vec<usize>,
}

impl SensitivityTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.matrices[0].shape()
    }

    pub fn last(&self) -> &DenseMatrix {
        self.matrices.last().expect("non-empty sensitivity trajectory")
    }
}

/// Switching and refinement constants of the refined Peano-Baker algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PbsrConfig {
    /// Relative Jacobian change below which an interval counts as constant-coefficient.
    pub eps_tol: f64,
    /// Largest sub-interval count before falling back to the exponential step.
    pub n_max: usize,
    /// Multiplier in `n_int = ⌈refine_mult · Δt · ‖∇ₓf‖⌉`.
    pub refine_mult: f64,
    /// Never take the exponential branch.
    pub force_pbs: bool,
}

impl Default for PbsrConfig {
    fn default() -> Self {
        Self {
            eps_tol: 1e-4,
            n_max: 10,
            refine_mult: 10.0,
            force_pbs: false,
        }
    }
}

impl PbsrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_tol > 0.0) {
            return Err(Error::Config(format!("eps_tol must be > 0, got {}", self.eps_tol)));
        }
        if self.n_max < 1 {
            return Err(Error::Config("n_max must be >= 1".into()));
        }
        if !(self.refine_mult > 0.0) || !self.refine_mult.is_finite() {
            return Err(Error::Config(format!("refine_mult must be > 0, got {}", self.refine_mult)));
        }
        Ok(())
    }
}

/// Jacobians at the two ends of one (sub-)interval.
#[derive(Debug, Clone, Copy)]
pub struct StepJacobians<'a> {
    pub j_a: &'a DenseMatrix,
    pub j_b: &'a DenseMatrix,
    pub b_a: &'a DenseMatrix,
    pub b_b: &'a DenseMatrix,
    pub dt: f64,
}

impl<'a> StepJacobians<'a> {
    pub fn new(
        j_a: &'a DenseMatrix,
        j_b: &'a DenseMatrix,
        b_a: &'a DenseMatrix,
        b_b: &'a DenseMatrix,
        dt: f64,
    ) -> Result<Self> {
        let sj = Self { j_a, j_b, b_a, b_b, dt };
        sj.validate()?;
        Ok(sj)
    }

    fn validate(&self) -> Result<()> {
        let n = self.j_a.rows();
        if !self.j_a.is_square() || self.j_b.shape() != (n, n) {
            return Err(Error::dim("step Jacobians", format!("{n}x{n}"), format!("{:?}, {:?}", self.j_a.shape(), self.j_b.shape())));
        }
        if self.b_a.rows() != n || self.b_b.shape() != self.b_a.shape() {
            return Err(Error::dim("step parameter Jacobians", format!("{n}xn_p"), format!("{:?}, {:?}", self.b_a.shape(), self.b_b.shape())));
        }
        if !(self.dt >= 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("step length must be finite and non-negative, got {}", self.dt)));
        }
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        self.j_a.rows()
    }
}

/// `(Î₁, Î₂)` with `Î₁ = Δt/2 (J_a + J_b)` and `Î₂ = Δt²/4 J_b (J_a + J_b)`.
fn truncated_integrals(sj: &StepJacobians<'_>) -> (DenseMatrix, DenseMatrix) {
    let sum = sj.j_a + sj.j_b;
    let i2 = (sj.j_b * &sum).scale(0.25 * sj.dt * sj.dt);
    let i1 = sum.scale(0.5 * sj.dt);
    (i1, i2)
}

/// `Φ̂(t_b; t_a) = I + Î₁ + Î₂`.
pub fn pbs_phi_forward(sj: &StepJacobians<'_>) -> DenseMatrix {
    let (i1, mut phi) = truncated_integrals(sj);
    phi += &i1;
    phi.add_diagonal(1.0);
    phi
}

/// `Φ̂(t_a; t_b) = I - Î₁ + Î₂`.
pub fn pbs_phi_backward(sj: &StepJacobians<'_>) -> DenseMatrix {
    let (i1, mut phi) = truncated_integrals(sj);
    phi.axpy(-1.0, &i1);
    phi.add_diagonal(1.0);
    phi
}

fn check_sensitivity_shape(s_k: &DenseMatrix, n_x: usize, n_p: usize) -> Result<()> {
    if s_k.shape() != (n_x, n_p) {
        return Err(Error::dim("sensitivity matrix", format!("{n_x}x{n_p}"), format!("{:?}", s_k.shape())));
    }
    Ok(())
}

/// One Peano-Baker step: `Φ̂(t_b;t_a) (S_k + Δt/2 (B_a + Φ̂(t_a;t_b) B_b))`.
pub fn pbs_step(s_k: &DenseMatrix, sj: &StepJacobians<'_>) -> Result<DenseMatrix> {
    sj.validate()?;
    check_sensitivity_shape(s_k, sj.n_x(), sj.b_a.cols())?;
    Ok(pbs_step_unchecked(s_k, sj))
}

fn pbs_step_unchecked(s_k: &DenseMatrix, sj: &StepJacobians<'_>) -> DenseMatrix {
    let (i1, i2) = truncated_integrals(sj);
    let mut forward = &i2 + &i1;
    forward.add_diagonal(1.0);
    let mut backward = i2;
    backward.axpy(-1.0, &i1);
    backward.add_diagonal(1.0);

    let mut inner = &backward * sj.b_b;
    inner += sj.b_a;
    inner.scale_mut(0.5 * sj.dt);
    inner += s_k;
    &forward * &inner
}

/// Exponential step `e^{ΔtJ} (S_k + (I - e^{-ΔtJ}) J⁻¹ B)`.
///
/// Evaluated as `e^{ΔtJ} S_k + φ₁(ΔtJ) Δt B` with `φ₁(X) = (e^X - I) X⁻¹` taken
/// from its power series, so a singular `J` is admissible.
pub fn exp_step(s_k: &DenseMatrix, j: &DenseMatrix, b: &DenseMatrix, dt: f64) -> Result<DenseMatrix> {
    let n = j.rows();
    if !j.is_square() {
        return Err(Error::dim("exp_step Jacobian", "square", format!("{:?}", j.shape())));
    }
    if b.rows() != n {
        return Err(Error::dim("exp_step parameter Jacobian rows", n, b.rows()));
    }
    check_sensitivity_shape(s_k, n, b.cols())?;
    let (e, phi) = exp_and_phi1(&j.scale(dt))?;
    let mut next = &e * s_k;
    next.axpy(dt, &(&phi * b));
    Ok(next)
}

/// `⌈refine_mult · dt · ‖J‖⌉`, never less than one.
pub fn refinement_count(dt: f64, j_norm: f64, cfg: &PbsrConfig) -> usize {
    let n = (cfg.refine_mult * dt * j_norm).ceil();
    // float-to-int casts saturate; NaN fails the comparison
    if n >= 1.0 {
        n as usize
    } else {
        1
    }
}

/// Relative Jacobian change `‖J_b - J_a‖_F / ‖J_a‖_F`; zero when `J_a = 0`.
pub fn relative_jacobian_change(j_a: &DenseMatrix, j_b: &DenseMatrix) -> f64 {
    let denom = j_a.frobenius_norm();
    if denom == 0.0 {
        0.0
    } else {
        (j_b - j_a).frobenius_norm() / denom
    }
}

/// Whether an interval takes the exponential step instead of the refined Peano-Baker step.
pub fn switch_to_exp(j_a: &DenseMatrix, j_b: &DenseMatrix, n_int: usize, cfg: &PbsrConfig) -> bool {
    if cfg.force_pbs {
        return false;
    }
    relative_jacobian_change(j_a, j_b) < cfg.eps_tol || n_int > cfg.n_max
}

// ---------------------------------------------------------------------------
// Trajectory drivers
// ---------------------------------------------------------------------------

struct NodeJacobians {
    j: DenseMatrix,
    b: DenseMatrix,
}

fn node_jacobians(system: &dyn OdeSystem, t: f64, x: &[f64], p: &[f64]) -> Result<NodeJacobians> {
    let u = system.input(t);
    let j = system.jac_x(x, &u, p);
    let b = system.jac_p(x, &u, p);
    let n = system.n_x();
    if j.shape() != (n, n) {
        return Err(Error::dim("jac_x", format!("{n}x{n}"), format!("{:?}", j.shape())));
    }
    if b.shape() != (n, system.n_p()) {
        return Err(Error::dim("jac_p", format!("{n}x{}", system.n_p()), format!("{:?}", b.shape())));
    }
    Ok(NodeJacobians { j, b })
}

fn check_trajectory(system: &dyn OdeSystem, traj: &Trajectory) -> Result<()> {
    crate::ode::validate_grid(&traj.times)?;
    if traj.states.len() != traj.times.len() {
        return Err(Error::dim("trajectory states", traj.times.len(), traj.states.len()));
    }
    if traj.n_x() != system.n_x() {
        return Err(Error::dim("trajectory state length", system.n_x(), traj.n_x()));
    }
    if traj.parameters.len() != system.n_p() {
        return Err(Error::dim("trajectory parameters", system.n_p(), traj.parameters.len()));
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Driver {
    Refined,
    Plain,
    Exponential,
}

fn run_driver(system: &dyn OdeSystem, traj: &Trajectory, cfg: &PbsrConfig, driver: Driver) -> Result<SensitivityTrajectory> {
    cfg.validate()?;
    check_trajectory(system, traj)?;
    let p = &traj.parameters;
    let (n_x, n_p) = (system.n_x(), system.n_p());
    let k_last = traj.len() - 1;

    let mut s = DenseMatrix::zeros(n_x, n_p);
    let mut matrices = Vec::with_capacity(traj.len());
    let mut flags = Vec::with_capacity(traj.len());
    let mut singular_steps = Vec::new();
    matrices.push(s.clone());
    flags.push(false);

    let mut left = node_jacobians(system, traj.times[0], &traj.states[0], p)?;
    for k in 0..k_last {
        let (t_k, t_k1) = (traj.times[k], traj.times[k + 1]);
        let dt = t_k1 - t_k;
        let right = node_jacobians(system, t_k1, &traj.states[k + 1], p)?;

        let use_exp = match driver {
            Driver::Exponential => true,
            Driver::Refined | Driver::Plain => {
                let n_int = refinement_count(dt, left.j.frobenius_norm(), cfg);
                switch_to_exp(&left.j, &right.j, n_int, cfg)
            }
        };

        s = if use_exp {
            if is_singular(&left.j) {
                singular_steps.push(k);
            }
            exp_step(&s, &left.j, &left.b, dt)?
        } else {
            let n_int = match driver {
                Driver::Refined => refinement_count(dt, left.j.frobenius_norm(), cfg),
                _ => 1,
            };
            refined_pbs(system, traj, k, n_int, &left, &right, s)?
        };

        if !s.is_finite() {
            return Err(Error::SensitivityDivergence { step: k + 1 });
        }
        matrices.push(s.clone());
        flags.push(use_exp);
        left = right;
    }

    let method = match driver {
        Driver::Refined => Method::Pbsr,
        Driver::Plain => Method::Pbs,
        Driver::Exponential => Method::Exp,
    };
    Ok(SensitivityTrajectory {
        times: traj.times.clone(),
        matrices,
        method,
        equilibrium_flags: flags,
        singular_steps,
    })
}

/// Chains `n_int` Peano-Baker steps over a uniform sub-grid of interval `k`.
/// Interior states come from linear interpolation between `x̂_k` and `x̂_{k+1}`.
fn refined_pbs(
    system: &dyn OdeSystem,
    traj: &Trajectory,
    k: usize,
    n_int: usize,
    left: &NodeJacobians,
    right: &NodeJacobians,
    mut s: DenseMatrix,
) -> Result<DenseMatrix> {
    let (t_k, t_k1) = (traj.times[k], traj.times[k + 1]);
    let (x_k, x_k1) = (&traj.states[k], &traj.states[k + 1]);
    let p = &traj.parameters;
    let span = t_k1 - t_k;

    let mut a_owned: Option<NodeJacobians> = None;
    for h in 0..n_int {
        let t_a = t_k + h as f64 / n_int as f64 * span;
        let t_b = t_k + (h + 1) as f64 / n_int as f64 * span;
        let b_owned;
        let b_ref = if h + 1 == n_int {
            right
        } else {
            let w = (h + 1) as f64 / n_int as f64;
            let x_b: Vec<f64> = x_k.iter().zip(x_k1).map(|(a, b)| a + w * (b - a)).collect();
            b_owned = node_jacobians(system, t_b, &x_b, p)?;
            &b_owned
        };
        let a_ref = a_owned.as_ref().unwrap_or(left);
        let sj = StepJacobians {
            j_a: &a_ref.j,
            j_b: &b_ref.j,
            b_a: &a_ref.b,
            b_b: &b_ref.b,
            dt: t_b - t_a,
        };
        s = pbs_step_unchecked(&s, &sj);
        if h + 1 < n_int {
            a_owned = Some(NodeJacobians {
                j: b_ref.j.clone(),
                b: b_ref.b.clone(),
            });
        }
    }
    Ok(s)
}

/// Peano-Baker series with refinement and exponential switching.
pub fn run_pbsr(system: &dyn OdeSystem, traj: &Trajectory, cfg: &PbsrConfig) -> Result<SensitivityTrajectory> {
    run_driver(system, traj, cfg, Driver::Refined)
}

/// Exponential step on every interval, never refined.
pub fn run_exp(system: &dyn OdeSystem, traj: &Trajectory) -> Result<SensitivityTrajectory> {
    run_driver(system, traj, &PbsrConfig::default(), Driver::Exponential)
}

/// One Peano-Baker step per interval, keeping the same exponential switch as [`run_pbsr`].
///
/// With `cfg.force_pbs` this is the pure second-order scheme used for order studies.
pub fn run_pbs_plain(system: &dyn OdeSystem, traj: &Trajectory, cfg: &PbsrConfig) -> Result<SensitivityTrajectory> {
    run_driver(system, traj, cfg, Driver::Plain)
}
