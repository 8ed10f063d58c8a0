//! Runtime of Exp, PBSR and forward sensitivities against system size.
//!
//! `cargo run --release --example runtime_scaling -- 5,10,20,40,60,80`

use pbs_sens::study::{cmd_scaling, ScalingOptions};
use pbs_sens::Method;

fn main() -> pbs_sens::Result<()> {
    let dims = std::env::args()
        .nth(1)
        .map(|s| s.split(',').map(|d| d.trim().parse().expect("dimension")).collect())
        .unwrap_or_else(|| vec![5, 10, 15, 20, 30, 40]);
    let report = cmd_scaling(&ScalingOptions { dims, reps: 3, ..ScalingOptions::default() })?;

    println!("{:>4} {:>12} {:>12} {:>12}", "n", "exp [s]", "pbsr [s]", "fs [s]");
    for r in &report.scaling {
        println!("{:>4} {:>12.3e} {:>12.3e} {:>12.3e}", r.n, r.exp_seconds, r.pbsr_seconds, r.fs_seconds);
    }
    for m in [Method::Exp, Method::Pbsr, Method::Fs] {
        if let Some(fit) = report.fit_for(m) {
            println!("{m:>5}: runtime ~ {:.2e} n^{:.2}", fit.a, fit.b);
        }
    }
    Ok(())
}
