//! Ground-truth sensitivities: the forward-sensitivity system and central finite differences.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::ode::{check_dims, rk4_on_grid, validate_grid, IntegratorConfig, OdeSystem, Trajectory};
use crate::sensitivity::{Method, SensitivityTrajectory};

/// Default base perturbation; coordinate `i` uses `h · max(1, |p_i|)`.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// State and flattened sensitivity of the coupled forward system.
///
/// `s_flat[i * n_x + l] = S[l][i]`: one contiguous block per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub x: Vec<f64>,
    pub s_flat: Vec<f64>,
}

impl AugmentedState {
    pub fn new(x: Vec<f64>, s: &DenseMatrix) -> Self {
        Self { x, s_flat: flatten(s) }
    }

    pub fn n_x(&self) -> usize {
        self.x.len()
    }

    pub fn sensitivity(&self) -> Result<DenseMatrix> {
        unflatten(&self.s_flat, self.x.len())
    }

    /// `[x; s_flat]`, length `n_x (n_p + 1)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.extend_from_slice(&self.s_flat);
        v
    }

    pub fn from_slice(y: &[f64], n_x: usize) -> Result<Self> {
        if n_x == 0 || y.len() < 2 * n_x || !y.len().is_multiple_of(n_x) {
            return Err(Error::dim("augmented state", format!("n_x (n_p + 1) with n_x = {n_x}"), y.len()));
        }
        Ok(Self {
            x: y[..n_x].to_vec(),
            s_flat: y[n_x..].to_vec(),
        })
    }
}

fn flatten(s: &DenseMatrix) -> Vec<f64> {
    let (n_x, n_p) = s.shape();
    let mut out = Vec::with_capacity(n_x * n_p);
    for i in 0..n_p {
        for l in 0..n_x {
            out.push(s[(l, i)]);
        }
    }
    out
}

fn unflatten(s_flat: &[f64], n_x: usize) -> Result<DenseMatrix> {
    if n_x == 0 || s_flat.is_empty() || !s_flat.len().is_multiple_of(n_x) {
        return Err(Error::dim("flattened sensitivity", format!("multiple of {n_x}"), s_flat.len()));
    }
    let n_p = s_flat.len() / n_x;
    Ok(DenseMatrix::from_fn(n_x, n_p, |l, i| s_flat[i * n_x + l]))
}

/// Integrates `ẋ = f`, `Ṡ = ∇ₓf·S + ∇ₚf`, `S(t₀) = 0` with the default integrator.
pub fn run_forward_sensitivity(
    system: &dyn OdeSystem,
    p: &[f64],
    x0: &[f64],
    grid: &[f64],
) -> Result<(Trajectory, SensitivityTrajectory)> {
    run_forward_sensitivity_with(system, p, x0, grid, &IntegratorConfig::default())
}

/// Forward sensitivities with an explicit sub-stepping policy.
///
/// Sub-steps are chosen from the state part exactly as [`crate::ode::integrate_with`]
/// does, so the state component reproduces a plain integration.
pub fn run_forward_sensitivity_with(
    system: &dyn OdeSystem,
    p: &[f64],
    x0: &[f64],
    grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<(Trajectory, SensitivityTrajectory)> {
    validate_grid(grid)?;
    check_dims(system, p, x0)?;
    cfg.validate()?;
    let (n_x, n_p) = (system.n_x(), system.n_p());
    let y0 = AugmentedState {
        x: x0.to_vec(),
        s_flat: vec![0.0; n_x * n_p],
    }
    .to_vec();

    let states = rk4_on_grid(
        &y0,
        grid,
        |k, y| {
            let dt = grid[k + 1] - grid[k];
            let jn = system.jac_x(&y[..n_x], &system.input(grid[k]), p).frobenius_norm();
            cfg.substeps(dt, jn)
        },
        |t, y, dy| {
            let u = system.input(t);
            let x = &y[..n_x];
            system.rhs(x, &u, p, &mut dy[..n_x]);
            let j = system.jac_x(x, &u, p);
            let b = system.jac_p(x, &u, p);
            let js = j.as_slice();
            // dS[:, i] = J S[:, i] + B[:, i], column blocks contiguous
            for i in 0..n_p {
                let s_col = &y[n_x + i * n_x..n_x + (i + 1) * n_x];
                let out = &mut dy[n_x + i * n_x..n_x + (i + 1) * n_x];
                for l in 0..n_x {
                    let row = &js[l * n_x..(l + 1) * n_x];
                    let dot: f64 = row.iter().zip(s_col).map(|(a, b)| a * b).sum();
                    out[l] = dot + b[(l, i)];
                }
            }
        },
    )?;

    let mut xs = Vec::with_capacity(states.len());
    let mut ss = Vec::with_capacity(states.len());
    for y in states {
        let aug = AugmentedState::from_slice(&y, n_x)?;
        ss.push(aug.sensitivity()?);
        xs.push(aug.x);
    }
    let traj = Trajectory {
        times: grid.to_vec(),
        states: xs,
        parameters: p.to_vec(),
    };
    let sens = SensitivityTrajectory {
        times: grid.to_vec(),
        equilibrium_flags: vec![false; ss.len()],
        matrices: ss,
        method: Method::Fs,
        singular_steps: Vec::new(),
    };
    Ok((traj, sens))
}

/// Central differences: column `i` is `(x(t; p + h_i e_i) - x(t; p - h_i e_i)) / (2 h_i)`
/// with `h_i = h · max(1, |p_i|)`.
pub fn finite_difference_sensitivity(
    system: &dyn OdeSystem,
    p: &[f64],
    x0: &[f64],
    grid: &[f64],
    h: f64,
) -> Result<SensitivityTrajectory> {
    finite_difference_sensitivity_with(system, p, x0, grid, h, &IntegratorConfig::default())
}

pub fn finite_difference_sensitivity_with(
    system: &dyn OdeSystem,
    p: &[f64],
    x0: &[f64],
    grid: &[f64],
    h: f64,
    cfg: &IntegratorConfig,
) -> Result<SensitivityTrajectory> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    validate_grid(grid)?;
    check_dims(system, p, x0)?;
    let (n_x, n_p) = (system.n_x(), system.n_p());
    let mut matrices = vec![DenseMatrix::zeros(n_x, n_p); grid.len()];
    for i in 0..n_p {
        let hi = h * p[i].abs().max(1.0);
        let mut plus = p.to_vec();
        let mut minus = p.to_vec();
        plus[i] += hi;
        minus[i] -= hi;
        let up = crate::ode::integrate_with(system, &plus, x0, grid, cfg)?;
        let down = crate::ode::integrate_with(system, &minus, x0, grid, cfg)?;
        for (k, m) in matrices.iter_mut().enumerate() {
            for l in 0..n_x {
                m[(l, i)] = (up.states[k][l] - down.states[k][l]) / (plus[i] - minus[i]);
            }
        }
    }
    Ok(SensitivityTrajectory {
        times: grid.to_vec(),
        equilibrium_flags: vec![false; grid.len()],
        matrices,
        method: Method::Fd,
        singular_steps: Vec::new(),
    })
}

/// Per-step `‖Ŝ_cand - Ŝ_ref‖_F / ‖Ŝ_ref‖_F`; absolute error where the reference is zero.
pub fn relative_error(candidate: &SensitivityTrajectory, reference: &SensitivityTrajectory) -> Result<Vec<f64>> {
    if candidate.times != reference.times {
        return Err(Error::Data("candidate and reference grids differ".into()));
    }
    candidate
        .matrices
        .iter()
        .zip(&reference.matrices)
        .enumerate()
        .map(|(k, (c, r))| {
            if c.shape() != r.shape() {
                return Err(Error::dim("relative_error", format!("{:?}", r.shape()), format!("{:?} at step {k}", c.shape())));
            }
            let diff = (c - r).frobenius_norm();
            let denom = r.frobenius_norm();
            Ok(if denom == 0.0 { diff } else { diff / denom })
        })
        .collect()
}
