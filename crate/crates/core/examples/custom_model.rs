//! Plugging a user-defined system into the sensitivity drivers.

use pbs_sens::linalg::DenseMatrix;
use pbs_sens::ode::{integrate, uniform_grid, OdeSystem};
use pbs_sens::reference::{relative_error, run_forward_sensitivity};
use pbs_sens::sensitivity::{run_exp, run_pbsr};
use pbs_sens::PbsrConfig;

/// Lotka-Volterra: x' = a x - b x y, y' = d x y - c y; p = (a, b, c, d).
struct LotkaVolterra;

impl OdeSystem for LotkaVolterra {
    fn name(&self) -> &str {
        "lotka_volterra"
    }
    fn n_x(&self) -> usize {
        2
    }
    fn n_u(&self) -> usize {
        0
    }
    fn n_p(&self) -> usize {
        4
    }
    fn rhs(&self, x: &[f64], _u: &[f64], p: &[f64], dx: &mut [f64]) {
        dx[0] = p[0] * x[0] - p[1] * x[0] * x[1];
        dx[1] = p[3] * x[0] * x[1] - p[2] * x[1];
    }
    fn jac_x(&self, x: &[f64], _u: &[f64], p: &[f64]) -> DenseMatrix {
        DenseMatrix::from_rows(&[&[p[0] - p[1] * x[1], -p[1] * x[0]], &[p[3] * x[1], p[3] * x[0] - p[2]]])
    }
    fn jac_p(&self, x: &[f64], _u: &[f64], _p: &[f64]) -> DenseMatrix {
        DenseMatrix::from_rows(&[&[x[0], -x[0] * x[1], 0.0, 0.0], &[0.0, 0.0, -x[1], x[0] * x[1]]])
    }
}

fn main() -> pbs_sens::Result<()> {
    let (p, x0) = ([1.5, 1.0, 3.0, 1.0], [10.0, 5.0]);
    let grid = uniform_grid(0.0, 10.0, 0.02)?;
    let traj = integrate(&LotkaVolterra, &p, &x0, &grid)?;
    let pbsr = run_pbsr(&LotkaVolterra, &traj, &PbsrConfig::default())?;
    let exp = run_exp(&LotkaVolterra, &traj)?;
    let (_, fs) = run_forward_sensitivity(&LotkaVolterra, &p, &x0, &grid)?;

    let worst = |re: Vec<f64>| re.into_iter().fold(0.0, f64::max);
    println!("max re PBSR {:.2e}", worst(relative_error(&pbsr, &fs)?));
    println!("max re Exp  {:.2e}", worst(relative_error(&exp, &fs)?));
    println!("dx/dp at t = 10:\n{:?}", pbsr.last());
    Ok(())
}
