//! Experiment harness: comparisons, convergence-order studies and runtime scaling.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec};
use crate::ode::{integrate, uniform_grid, Trajectory};
use crate::reference::{finite_difference_sensitivity, relative_error, run_forward_sensitivity, DEFAULT_FD_STEP};
use crate::sensitivity::{run_exp, run_pbs_plain, run_pbsr, Method, PbsrConfig, SensitivityTrajectory};

/// Errors below this are treated as integrator noise; no slope is fitted through them.
pub const ERROR_FLOOR: f64 = 1e-8;

pub const MIN_CONVERGENCE_LEVELS: usize = 3;
pub const MIN_SCALING_SAMPLES: usize = 5;

/// Environment variable capping the harness thread pool.
pub const THREADS_ENV: &str = "PBS_SENS_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub re_pbsr: f64,
    pub re_exp: f64,
    pub equilibrium: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub dt_max: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub n: usize,
    pub seed: u64,
    pub exp_seconds: f64,
    pub pbsr_seconds: f64,
    pub fs_seconds: f64,
}

impl ScalingRecord {
    pub fn seconds(&self, method: Method) -> Option<f64> {
        match method {
            Method::Exp => Some(self.exp_seconds),
            Method::Pbsr => Some(self.pbsr_seconds),
            Method::Fs => Some(self.fs_seconds),
            _ => None,
        }
    }
}

/// `runtime = a · n^b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub method: Method,
    pub fit: PowerLaw,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metadata {
    pub model: String,
    pub seeds: Vec<u64>,
    pub config: Option<PbsrConfig>,
    pub method: Option<Method>,
    pub environment: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StudyReport {
    pub metadata: Metadata,
    pub steps: Vec<StepRecord>,
    pub convergence: Vec<ConvergenceRecord>,
    /// Fitted `log₂(error)` against `log₂(Δt)`; absent with too few levels or at the error floor.
    pub slope: Option<f64>,
    pub scaling: Vec<ScalingRecord>,
    pub fits: Vec<ScalingFit>,
}

impl StudyReport {
    pub fn fit_for(&self, method: Method) -> Option<PowerLaw> {
        self.fits.iter().find(|f| f.method == method).map(|f| f.fit)
    }
}

pub fn environment_note() -> String {
    format!(
        "{}-{}, {} logical cpus, monotonic clock",
        std::env::consts::OS,
        std::env::consts::ARCH,
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    )
}

// ---------------------------------------------------------------------------
// Regression
// ---------------------------------------------------------------------------

/// Least squares of `y` on `x`, returning `(intercept, slope)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Data(format!("linear fit needs >= 2 paired samples, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Data("linear fit needs at least two distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    Ok((my - slope * mx, slope))
}

/// Fits `runtime = a · n^b` by least squares on `ln runtime = ln a + b ln n`.
pub fn fit_power_law(samples: &[(f64, f64)]) -> Result<PowerLaw> {
    if samples.len() < MIN_SCALING_SAMPLES {
        return Err(Error::Data(format!(
            "power-law fit needs >= {MIN_SCALING_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if let Some((n, r)) = samples.iter().find(|(n, r)| !(*n > 0.0) || !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::Data(format!("power-law samples must be positive, got ({n}, {r})")));
    }
    let x: Vec<f64> = samples.iter().map(|(n, _)| n.ln()).collect();
    let y: Vec<f64> = samples.iter().map(|(_, r)| r.ln()).collect();
    let (c, b) = linear_fit(&x, &y)?;
    Ok(PowerLaw { a: c.exp(), b })
}

// ---------------------------------------------------------------------------
// Running a single method
// ---------------------------------------------------------------------------

/// Output of one `compute` run.
#[derive(Debug, Clone)]
pub struct ComputeResult {
    pub trajectory: Trajectory,
    pub sensitivity: SensitivityTrajectory,
}

pub fn compute(model: &Model, method: Method, grid: &[f64], cfg: &PbsrConfig) -> Result<ComputeResult> {
    cfg.validate()?;
    let sys = model.system.as_ref();
    if method == Method::Fs {
        let (trajectory, sensitivity) = run_forward_sensitivity(sys, &model.p, &model.x0, grid)?;
        return Ok(ComputeResult { trajectory, sensitivity });
    }
    let trajectory = integrate(sys, &model.p, &model.x0, grid)?;
    let sensitivity = match method {
        Method::Pbsr => run_pbsr(sys, &trajectory, cfg)?,
        Method::Exp => run_exp(sys, &trajectory)?,
        Method::Pbs => run_pbs_plain(sys, &trajectory, cfg)?,
        Method::Fd => finite_difference_sensitivity(sys, &model.p, &model.x0, grid, DEFAULT_FD_STEP)?,
        Method::Fs => unreachable!(),
    };
    Ok(ComputeResult { trajectory, sensitivity })
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

// ---------------------------------------------------------------------------
// Compare
// ---------------------------------------------------------------------------

/// Runs `reference` and `candidates` on the identical grid, concurrently.
///
/// The returned traces are in the order of `candidates`.
pub fn compare_methods(
    model: &Model,
    grid: &[f64],
    cfg: &PbsrConfig,
    reference: Method,
    candidates: &[Method],
) -> Result<(SensitivityTrajectory, Vec<SensitivityTrajectory>)> {
    let pool = thread_pool()?;
    let mut jobs = vec![reference];
    jobs.extend_from_slice(candidates);
    let results: Vec<Result<SensitivityTrajectory>> = pool.install(|| {
        jobs.par_iter()
            .map(|m| compute(model, *m, grid, cfg).map(|r| r.sensitivity))
            .collect()
    });
    let mut results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let reference = results.remove(0);
    Ok((reference, results))
}

/// Relative errors of PBSR and Exp against forward sensitivities.
pub fn cmd_compare(model: &Model, grid: &[f64], cfg: &PbsrConfig) -> Result<StudyReport> {
    let (reference, cands) = compare_methods(model, grid, cfg, Method::Fs, &[Method::Pbsr, Method::Exp])?;
    let re_pbsr = relative_error(&cands[0], &reference)?;
    let re_exp = relative_error(&cands[1], &reference)?;
    let steps = grid
        .iter()
        .enumerate()
        .map(|(k, &t)| StepRecord {
            t,
            re_pbsr: re_pbsr[k],
            re_exp: re_exp[k],
            equilibrium: cands[0].equilibrium_flags[k],
        })
        .collect();
    Ok(StudyReport {
        metadata: Metadata {
            model: model.name(),
            seeds: vec![model.spec.seed],
            config: Some(*cfg),
            method: None,
            environment: environment_note(),
        },
        steps,
        ..Default::default()
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

// ---------------------------------------------------------------------------
// Convergence
// ---------------------------------------------------------------------------

/// Error study on uniform grids `Δt, Δt/2, Δt/4, …`.
///
/// `method` is `pbs` (a single Peano-Baker step per interval, switching
/// disabled) or `exp`. The error at each level is the largest Frobenius
/// distance to the closed-form sensitivity, or to forward sensitivities on a
/// 4× finer grid when the model has no closed form.
pub fn cmd_convergence(model: &Model, method: Method, levels: usize, base_dt: f64) -> Result<StudyReport> {
    if levels < MIN_CONVERGENCE_LEVELS {
        return Err(Error::Config(format!("convergence needs >= {MIN_CONVERGENCE_LEVELS} grid levels, got {levels}")));
    }
    if !matches!(method, Method::Pbs | Method::Exp) {
        return Err(Error::Config(format!("convergence supports methods pbs and exp, got {method}")));
    }
    let cfg = PbsrConfig {
        force_pbs: true,
        ..PbsrConfig::default()
    };
    let sys = model.system.as_ref();
    let (t0, t1) = model.tspan;
    let mut records = Vec::with_capacity(levels);
    for level in 0..levels {
        let dt = base_dt / f64::powi(2.0, level as i32);
        let grid = uniform_grid(t0, t1, dt)?;
        let traj = integrate(sys, &model.p, &model.x0, &grid)?;
        let sens = match method {
            Method::Pbs => run_pbs_plain(sys, &traj, &cfg)?,
            _ => run_exp(sys, &traj)?,
        };
        let max_error = max_error_against_reference(model, &grid, &sens)?;
        records.push(ConvergenceRecord {
            dt_max: traj.dt_max(),
            max_error,
        });
    }
    let slope = convergence_slope(&records)?;
    Ok(StudyReport {
        metadata: Metadata {
            model: model.name(),
            seeds: vec![model.spec.seed],
            config: Some(cfg),
            method: Some(method),
            environment: environment_note(),
        },
        convergence: records,
        slope,
        ..Default::default()
    })
}

fn max_error_against_reference(model: &Model, grid: &[f64], sens: &SensitivityTrajectory) -> Result<f64> {
    let mut worst = 0.0f64;
    if model.has_closed_form() {
        for (t, s) in grid.iter().zip(&sens.matrices) {
            let exact = model.exact_sensitivity(*t).expect("closed form")?;
            worst = worst.max((s - &exact).frobenius_norm());
        }
        return Ok(worst);
    }
    // refine each interval 4× so reference nodes contain the candidate grid
    let mut fine = Vec::with_capacity(4 * grid.len());
    for w in grid.windows(2) {
        for j in 0..4 {
            fine.push(w[0] + (w[1] - w[0]) * j as f64 / 4.0);
        }
    }
    fine.push(*grid.last().unwrap());
    let (_, reference) = run_forward_sensitivity(model.system.as_ref(), &model.p, &model.x0, &fine)?;
    for (k, s) in sens.matrices.iter().enumerate() {
        worst = worst.max((s - &reference.matrices[4 * k]).frobenius_norm());
    }
    Ok(worst)
}

/// Slope of `log₂(error)` against `log₂(Δt)`, or `None` when every error sits at
/// the noise floor.
pub fn convergence_slope(records: &[ConvergenceRecord]) -> Result<Option<f64>> {
    if records.len() < MIN_CONVERGENCE_LEVELS {
        return Ok(None);
    }
    if records.iter().all(|r| r.max_error <= ERROR_FLOOR) {
        return Ok(None);
    }
    let above: Vec<&ConvergenceRecord> = records.iter().filter(|r| r.max_error > ERROR_FLOOR).collect();
    if above.len() < MIN_CONVERGENCE_LEVELS {
        return Ok(None);
    }
    let x: Vec<f64> = above.iter().map(|r| r.dt_max.log2()).collect();
    let y: Vec<f64> = above.iter().map(|r| r.max_error.log2()).collect();
    Ok(Some(linear_fit(&x, &y)?.1))
}

// ---------------------------------------------------------------------------
// Scaling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingOptions {
    pub dims: Vec<usize>,
    pub seeds: Vec<u64>,
    pub reps: usize,
    pub t1: f64,
    pub dt: f64,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self {
            dims: vec![5, 10, 20, 40, 60, 80],
            seeds: vec![1],
            reps: 10,
            t1: 0.1,
            dt: 0.01,
        }
    }
}

fn median_seconds(reps: usize, mut run: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        run()?;
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(median(&times))
}

/// Wall-clock runtimes of Exp, PBSR (switching disabled) and FS on `random_linear`.
///
/// Each timing covers the full pipeline of a method, state integration
/// included. Everything runs on the calling thread.
pub fn cmd_scaling(opts: &ScalingOptions) -> Result<StudyReport> {
    if opts.reps == 0 || opts.seeds.is_empty() || opts.dims.is_empty() {
        return Err(Error::Config("scaling needs at least one dimension, seed and repetition".into()));
    }
    let cfg = PbsrConfig {
        force_pbs: true,
        ..PbsrConfig::default()
    };
    let grid = uniform_grid(0.0, opts.t1, opts.dt)?;
    let mut records = Vec::new();
    for &seed in &opts.seeds {
        for &n in &opts.dims {
            let model = ModelSpec::random_linear(n, seed).build()?;
            let sys = model.system.as_ref();
            let exp_seconds = median_seconds(opts.reps, || {
                let traj = integrate(sys, &model.p, &model.x0, &grid)?;
                run_exp(sys, &traj).map(drop)
            })?;
            let pbsr_seconds = median_seconds(opts.reps, || {
                let traj = integrate(sys, &model.p, &model.x0, &grid)?;
                run_pbsr(sys, &traj, &cfg).map(drop)
            })?;
            let fs_seconds = median_seconds(opts.reps, || run_forward_sensitivity(sys, &model.p, &model.x0, &grid).map(drop))?;
            records.push(ScalingRecord {
                n,
                seed,
                exp_seconds,
                pbsr_seconds,
                fs_seconds,
            });
        }
    }
    let fits = scaling_fits(&records)?;
    Ok(StudyReport {
        metadata: Metadata {
            model: "random_linear".into(),
            seeds: opts.seeds.clone(),
            config: Some(cfg),
            method: None,
            environment: environment_note(),
        },
        scaling: records,
        fits,
        ..Default::default()
    })
}

/// Power-law fit per method over the per-dimension median across seeds.
pub fn scaling_fits(records: &[ScalingRecord]) -> Result<Vec<ScalingFit>> {
    let mut dims: Vec<usize> = records.iter().map(|r| r.n).collect();
    dims.sort_unstable();
    dims.dedup();
    if dims.len() < MIN_SCALING_SAMPLES {
        return Ok(Vec::new());
    }
    [Method::Exp, Method::Pbsr, Method::Fs]
        .into_iter()
        .map(|method| {
            let samples: Vec<(f64, f64)> = dims
                .iter()
                .map(|&n| {
                    let t: Vec<f64> = records.iter().filter(|r| r.n == n).filter_map(|r| r.seconds(method)).collect();
                    (n as f64, median(&t))
                })
                .collect();
            Ok(ScalingFit {
                method,
                fit: fit_power_law(&samples)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn power_law_recovers_exact_data() {
        let samples: Vec<(f64, f64)> = [5.0, 10.0, 20.0, 40.0, 80.0].iter().map(|&n| (n, 3.0 * n * n)).collect();
        let fit = fit_power_law(&samples).unwrap();
        assert!((fit.a - 3.0).abs() < 1e-9 && (fit.b - 2.0).abs() < 1e-9, "{fit:?}");
    }

    #[test]
    fn power_law_constant_runtime() {
        let samples: Vec<(f64, f64)> = (1..=6).map(|n| (n as f64 * 7.0, 0.25)).collect();
        let fit = fit_power_law(&samples).unwrap();
        assert!(fit.b.abs() < 1e-12);
        assert!((fit.a - 0.25).abs() < 1e-12);
    }

    #[test]
    fn power_law_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<(f64, f64)> = [5.0, 10.0, 20.0, 40.0, 60.0, 80.0]
            .iter()
            .map(|&n: &f64| (n, 2.0 * n.powf(3.5) * (1.0 + rng.gen_range(-0.01..0.01))))
            .collect();
        let b = fit_power_law(&samples).unwrap().b;
        assert!((3.4..=3.6).contains(&b), "{b}");
    }

    #[test]
    fn power_law_rejects_bad_input() {
        let few: Vec<(f64, f64)> = (1..5).map(|n| (n as f64, 1.0)).collect();
        assert!(matches!(fit_power_law(&few), Err(Error::Data(_))));
        let mut bad: Vec<(f64, f64)> = (1..7).map(|n| (n as f64, 1.0)).collect();
        bad[2].1 = 0.0;
        assert!(matches!(fit_power_law(&bad), Err(Error::Data(_))));
        bad[2].1 = -1.0;
        assert!(matches!(fit_power_law(&bad), Err(Error::Data(_))));
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn slope_floor_and_level_rules() {
        let rec = |dt: f64, e: f64| ConvergenceRecord { dt_max: dt, max_error: e };
        let quad: Vec<_> = (0..4).map(|i| rec(0.1 / 2f64.powi(i), 1e-2 / 4f64.powi(i))).collect();
        assert!((convergence_slope(&quad).unwrap().unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(convergence_slope(&quad[..2]).unwrap(), None);
        let floor: Vec<_> = (0..4).map(|i| rec(0.1 / 2f64.powi(i), 1e-12)).collect();
        assert_eq!(convergence_slope(&floor).unwrap(), None);
    }

    #[test]
    fn convergence_requires_three_levels() {
        let model = Model::by_name("scalar_decay").unwrap();
        assert!(matches!(cmd_convergence(&model, Method::Pbs, 2, 0.1), Err(Error::Config(_))));
        assert!(matches!(cmd_convergence(&model, Method::Fs, 3, 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn convergence_on_scalar_decay_is_second_order() {
        let model = Model::by_name("scalar_decay").unwrap();
        let report = cmd_convergence(&model, Method::Pbs, 4, 0.1).unwrap();
        let slope = report.slope.unwrap();
        assert!((1.7..=2.3).contains(&slope), "{slope}");
        let e: Vec<f64> = report.convergence.iter().map(|r| r.max_error).collect();
        assert!(e.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn convergence_without_closed_form_uses_forward_reference() {
        let mut model = Model::by_name("chua").unwrap();
        model.tspan = (0.0, 1.0);
        let report = cmd_convergence(&model, Method::Pbs, 3, 0.02).unwrap();
        let slope = report.slope.unwrap();
        assert!((1.5..=2.5).contains(&slope), "{slope}");
    }

    #[test]
    fn larger_refinement_multiplier_reduces_chua_error() {
        // Δt = 0.02 keeps n_int below n_max for both multipliers
        let model = Model::by_name("chua").unwrap();
        let grid = uniform_grid(0.0, 10.0, 0.02).unwrap();
        let err = |refine_mult: f64| {
            let cfg = PbsrConfig { refine_mult, force_pbs: true, ..PbsrConfig::default() };
            let report = cmd_compare(&model, &grid, &cfg).unwrap();
            median(&report.steps[1..].iter().map(|s| s.re_pbsr).collect::<Vec<_>>())
        };
        let (coarse, fine) = (err(10.0), err(20.0));
        assert!(fine < coarse, "{coarse:e} {fine:e}");
    }

    #[test]
    fn compare_self_consistency_and_grid_identity() {
        let model = Model::by_name("scalar_decay").unwrap();
        let grid = uniform_grid(0.0, 2.0, 0.1).unwrap();
        let cfg = PbsrConfig::default();
        let (reference, cands) = compare_methods(&model, &grid, &cfg, Method::Pbsr, &[Method::Pbsr]).unwrap();
        assert_eq!(reference.times, grid);
        assert_eq!(cands[0].times, grid);
        assert!(relative_error(&cands[0], &reference).unwrap().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn compare_report_shape() {
        let model = Model::by_name("const_linear:nx=3:np=2:seed=2").unwrap();
        let grid = uniform_grid(0.0, 1.0, 0.1).unwrap();
        let report = cmd_compare(&model, &grid, &PbsrConfig::default()).unwrap();
        assert_eq!(report.steps.len(), grid.len());
        assert_eq!(report.steps[0].re_pbsr, 0.0);
        assert!(report.steps.iter().all(|s| s.re_exp <= 1e-6 && s.re_pbsr <= 1e-6));
        assert!(report.steps[1..].iter().all(|s| s.equilibrium));
    }

    #[test]
    fn scaling_small_run() {
        let opts = ScalingOptions {
            dims: vec![2, 3, 4, 5, 6],
            seeds: vec![1, 2],
            reps: 1,
            t1: 0.02,
            dt: 0.01,
        };
        let report = cmd_scaling(&opts).unwrap();
        assert_eq!(report.scaling.len(), 10);
        assert_eq!(report.fits.len(), 3);
        assert!(report.scaling.iter().all(|r| r.exp_seconds > 0.0 && r.fs_seconds > 0.0));
        let few = ScalingOptions {
            dims: vec![2, 3],
            ..opts
        };
        assert!(cmd_scaling(&few).unwrap().fits.is_empty());
    }
}
