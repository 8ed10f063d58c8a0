//! ODE model abstraction and the fixed-grid RK4 integrator.
//!
//! A model is `ẋ = f(x, u(t), p)` with analytic Jacobians with respect to the
//! state and the parameters. The integrator returns the state exactly at the
//! requested grid points, sub-stepping each interval with classical RK4.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// A parametrised vector field with analytic Jacobians.
///
/// Implementations must not mutate interior state during evaluation; the
/// sensitivity drivers and the study harness call them from several threads.
pub trait OdeSystem: Send + Sync {
    fn name(&self) -> &str;
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn n_p(&self) -> usize;

    /// Writes `f(x, u, p)` into `dx` (length `n_x`).
    fn rhs(&self, x: &[f64], u: &[f64], p: &[f64], dx: &mut [f64]);

    /// `∂f/∂x`, an `n_x × n_x` matrix.
    fn jac_x(&self, x: &[f64], u: &[f64], p: &[f64]) -> DenseMatrix;

    /// `∂f/∂p`, an `n_x × n_p` matrix.
    fn jac_p(&self, x: &[f64], u: &[f64], p: &[f64]) -> DenseMatrix;

    /// Input signal `u(t)`; zero-length for autonomous models.
    fn input(&self, _t: f64) -> Vec<f64> {
        vec![0.0; self.n_u()]
    }

    fn f(&self, x: &[f64], u: &[f64], p: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.n_x()];
        self.rhs(x, u, p, &mut dx);
        dx
    }
}

/// Numerical state solution on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub parameters: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_x(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn dt_max(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn dt_min(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Piecewise-linear interpolant of the stored states.
    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>> {
        interpolate(self, t)
    }
}

/// Linear interpolation `x̂_k + (t - t_k)(x̂_{k+1} - x̂_k)/Δt_k`; exact at grid nodes.
pub fn interpolate(traj: &Trajectory, t: f64) -> Result<Vec<f64>> {
    let (t0, t1) = (traj.times[0], *traj.times.last().unwrap());
    if !(t >= t0 && t <= t1) {
        return Err(Error::OutOfRange { t, t0, t1 });
    }
    // first index with times[i] > t
    let upper = traj.times.partition_point(|&s| s <= t);
    let k = upper - 1;
    if traj.times[k] == t || k + 1 == traj.len() {
        return Ok(traj.states[k].clone());
    }
    let w = (t - traj.times[k]) / (traj.times[k + 1] - traj.times[k]);
    Ok(traj.states[k]
        .iter()
        .zip(&traj.states[k + 1])
        .map(|(a, b)| a + w * (b - a))
        .collect())
}

/// Sub-stepping policy of the RK4 integrator.
///
/// Each grid interval `Δt_k` is split into
/// `max(⌈Δt_k / h_target⌉, ⌈Δt_k ‖∂f/∂x(x̂_k)‖_F / stiffness_guard⌉)` equal steps.
/// The second term keeps `h·‖J‖` small for stiff linear parts, where a fixed
/// `h_target` alone would be unstable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub h_target: f64,
    pub stiffness_guard: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            h_target: 1e-2,
            stiffness_guard: 0.05,
        }
    }
}

impl IntegratorConfig {
    /// One RK4 step per grid interval; used by order studies of the integrator itself.
    pub fn grid_only() -> Self {
        Self {
            h_target: f64::INFINITY,
            stiffness_guard: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h_target > 0.0) || !(self.stiffness_guard > 0.0) {
            return Err(Error::Config("integrator h_target and stiffness_guard must be > 0".into()));
        }
        Ok(())
    }

    pub(crate) fn substeps(&self, dt: f64, jac_norm: f64) -> usize {
        let by_h = (dt / self.h_target).ceil();
        let by_stiffness = (dt * jac_norm / self.stiffness_guard).ceil();
        let n = by_h.max(by_stiffness).max(1.0);
        if n.is_finite() {
            n as usize
        } else {
            1
        }
    }
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidGrid(format!("need at least 2 time points, got {}", grid.len())));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidGrid("non-finite time".into()));
    }
    if let Some(i) = grid.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(format!(
            "times must be strictly increasing (t[{}] = {} >= t[{}] = {})",
            i,
            grid[i],
            i + 1,
            grid[i + 1]
        )));
    }
    Ok(())
}

/// Classical RK4 over a grid with per-interval sub-stepping.
///
/// `substeps(k, y_k)` picks the number of equal steps for interval `k`;
/// `rhs(t, y, dy)` evaluates the vector field. Non-finite values abort with the
/// time at which they appeared.
pub(crate) fn rk4_on_grid(
    y0: &[f64],
    grid: &[f64],
    mut substeps: impl FnMut(usize, &[f64]) -> usize,
    mut rhs: impl FnMut(f64, &[f64], &mut [f64]),
) -> Result<Vec<Vec<f64>>> {
    let n = y0.len();
    let mut out = Vec::with_capacity(grid.len());
    let mut y = y0.to_vec();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::StateDivergence { time: grid[0] });
    }
    out.push(y.clone());

    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];

    for (k, w) in grid.windows(2).enumerate() {
        let (ta, tb) = (w[0], w[1]);
        let m = substeps(k, &y);
        let h = (tb - ta) / m as f64;
        for j in 0..m {
            let t = ta + j as f64 * h;
            rhs(t, &y, &mut k1);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            rhs(t + 0.5 * h, &tmp, &mut k2);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            rhs(t + 0.5 * h, &tmp, &mut k3);
            for i in 0..n {
                tmp[i] = y[i] + h * k3[i];
            }
            rhs(t + h, &tmp, &mut k4);
            for i in 0..n {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::StateDivergence { time: t + h });
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

pub(crate) fn check_dims(system: &dyn OdeSystem, p: &[f64], x0: &[f64]) -> Result<()> {
    if x0.len() != system.n_x() {
        return Err(Error::dim("initial state", system.n_x(), x0.len()));
    }
    if p.len() != system.n_p() {
        return Err(Error::dim("parameter vector", system.n_p(), p.len()));
    }
    Ok(())
}

/// Integrates `system` from `x0` with the default sub-stepping policy.
pub fn integrate(system: &dyn OdeSystem, p: &[f64], x0: &[f64], grid: &[f64]) -> Result<Trajectory> {
    integrate_with(system, p, x0, grid, &IntegratorConfig::default())
}

pub fn integrate_with(
    system: &dyn OdeSystem,
    p: &[f64],
    x0: &[f64],
    grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    validate_grid(grid)?;
    check_dims(system, p, x0)?;
    cfg.validate()?;
    let states = rk4_on_grid(
        x0,
        grid,
        |k, x| {
            let dt = grid[k + 1] - grid[k];
            let jn = system.jac_x(x, &system.input(grid[k]), p).frobenius_norm();
            cfg.substeps(dt, jn)
        },
        |t, x, dx| system.rhs(x, &system.input(t), p, dx),
    )?;
    Ok(Trajectory {
        times: grid.to_vec(),
        states,
        parameters: p.to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

/// Uniform grid on `[t0, t1]` with step at most `dt`; the last node is exactly `t1`.
pub fn uniform_grid(t0: f64, t1: f64, dt: f64) -> Result<Vec<f64>> {
    if !(t1 > t0) || !(dt > 0.0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidGrid(format!("need t0 < t1 and dt > 0 (t0={t0}, t1={t1}, dt={dt})")));
    }
    let span = t1 - t0;
    let k = ((span / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    Ok((0..=k)
        .map(|i| if i == k { t1 } else { t0 + span * i as f64 / k as f64 })
        .collect())
}

/// Uniform grid whose interior nodes are moved by up to ±20% of the step, seeded.
pub fn jittered_grid(t0: f64, t1: f64, dt: f64, seed: u64) -> Result<Vec<f64>> {
    let mut grid = uniform_grid(t0, t1, dt)?;
    let h = grid[1] - grid[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = grid.len() - 1;
    for t in &mut grid[1..last] {
        *t += rng.gen_range(-0.2..=0.2) * h;
    }
    Ok(grid)
}

/// How an experiment's output grid is built.
#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    Uniform { t0: f64, t1: f64, dt: f64 },
    Jittered { t0: f64, t1: f64, dt: f64, seed: u64 },
    Explicit(Vec<f64>),
}

impl GridSpec {
    pub fn build(&self) -> Result<Vec<f64>> {
        let grid = match self {
            GridSpec::Uniform { t0, t1, dt } => uniform_grid(*t0, *t1, *dt)?,
            GridSpec::Jittered { t0, t1, dt, seed } => jittered_grid(*t0, *t1, *dt, *seed)?,
            GridSpec::Explicit(times) => times.clone(),
        };
        validate_grid(&grid)?;
        Ok(grid)
    }
}

/// Parses a grid file: one ascending time per line; blank lines and `#` comments are skipped.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let mut times = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: f64 = line
            .parse()
            .map_err(|_| Error::InvalidGrid(format!("line {}: cannot parse `{}`", lineno + 1, line)))?;
        times.push(t);
    }
    validate_grid(&times)?;
    Ok(times)
}

pub fn read_grid_file(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    parse_grid(&std::fs::read_to_string(path)?)
}
