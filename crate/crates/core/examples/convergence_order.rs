//! Observed order of the Peano-Baker step on halved uniform grids.

use pbs_sens::models::Model;
use pbs_sens::study::cmd_convergence;
use pbs_sens::Method;

fn main() -> pbs_sens::Result<()> {
    for (name, method) in [
        ("scalar_decay", Method::Pbs),
        ("const_linear:nx=4:np=3:seed=1", Method::Pbs),
        ("const_linear:nx=4:np=3:seed=1", Method::Exp),
    ] {
        let model = Model::by_name(name)?;
        let report = cmd_convergence(&model, method, 5, 0.1)?;
        println!("{name} / {method}");
        for r in &report.convergence {
            println!("  dt {:<8.5} max error {:.3e}", r.dt_max, r.max_error);
        }
        match report.slope {
            Some(s) => println!("  fitted order {s:.3}"),
            None => println!("  at the noise floor"),
        }
    }
    Ok(())
}
