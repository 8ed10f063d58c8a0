//! Forward sensitivities against central finite differences on Chua's circuit.

use pbs_sens::models::Model;
use pbs_sens::ode::uniform_grid;
use pbs_sens::reference::{finite_difference_sensitivity, relative_error, run_forward_sensitivity};

fn main() -> pbs_sens::Result<()> {
    let model = Model::by_name("chua")?;
    let sys = model.system.as_ref();
    let grid = uniform_grid(0.0, 10.0, 0.05)?;
    let (_, fs) = run_forward_sensitivity(sys, &model.p, &model.x0, &grid)?;
    for h in [1e-3, 1e-5, 1e-7] {
        let fd = finite_difference_sensitivity(sys, &model.p, &model.x0, &grid, h)?;
        let re = relative_error(&fd, &fs)?;
        let worst = grid.iter().zip(&re).filter(|(t, _)| **t >= 0.1).map(|(_, e)| *e).fold(0.0, f64::max);
        println!("h = {h:.0e}: max relative difference {worst:.2e}");
    }
    Ok(())
}
