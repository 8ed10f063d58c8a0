//! Integrate Chua's circuit and print a coarse view of the trajectory.

use pbs_sens::models::Model;
use pbs_sens::ode::{integrate, uniform_grid};

fn main() -> pbs_sens::Result<()> {
    let model = Model::by_name("chua")?;
    let grid = uniform_grid(model.tspan.0, model.tspan.1, model.default_dt)?;
    let traj = integrate(model.system.as_ref(), &model.p, &model.x0, &grid)?;

    println!("{:>6} {:>10} {:>10} {:>10}", "t", "x", "y", "z");
    for k in (0..traj.len()).step_by(20) {
        let x = &traj.states[k];
        println!("{:>6.2} {:>10.5} {:>10.5} {:>10.5}", traj.times[k], x[0], x[1], x[2]);
    }
    // dense output between nodes
    let mid = traj.interpolate(5.025)?;
    println!("x(5.025) ~ {mid:?}");
    Ok(())
}
