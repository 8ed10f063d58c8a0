//! Relative errors of PBSR and the exponential algorithm on Chua's circuit,
//! with forward sensitivities as reference.

use pbs_sens::models::Model;
use pbs_sens::ode::uniform_grid;
use pbs_sens::study::{cmd_compare, median};
use pbs_sens::PbsrConfig;

fn main() -> pbs_sens::Result<()> {
    let model = Model::by_name("chua")?;
    let grid = uniform_grid(0.0, 10.0, 0.05)?;
    for (label, cfg) in [
        ("default switching", PbsrConfig::default()),
        ("always Peano-Baker", PbsrConfig { force_pbs: true, ..PbsrConfig::default() }),
    ] {
        let report = cmd_compare(&model, &grid, &cfg)?;
        let steps = &report.steps[1..];
        let re_p: Vec<f64> = steps.iter().map(|s| s.re_pbsr).collect();
        let re_e: Vec<f64> = steps.iter().map(|s| s.re_exp).collect();
        let switched: Vec<f64> = steps.iter().filter(|s| s.equilibrium).map(|s| s.t).collect();
        println!("{label}:");
        println!("  median re  PBSR {:.3e}  Exp {:.3e}", median(&re_p), median(&re_e));
        println!("  exponential steps at t = {switched:?}");
    }
    Ok(())
}
