use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use pbs_sens::io::{self as pio, SensitivityTable};
use pbs_sens::models::{registry_listing, Model, ModelKind, ModelSpec};
use pbs_sens::ode::{read_grid_file, GridSpec};
use pbs_sens::study::{self, median, ScalingOptions, StudyReport};
use pbs_sens::{Error, Method, PbsrConfig, Result};

#[derive(Parser)]
#[command(name = "pbs-sens", version, about = "ODE parameter sensitivities via truncated Peano-Baker series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a model and write its state and sensitivity trajectory.
    Compute(Common),
    /// Relative errors of PBSR and Exp against forward sensitivities.
    Compare(Common),
    /// Error against step size on successively halved uniform grids.
    Convergence(Common),
    /// Runtime against dimension on random linear systems, with power-law fits.
    Scaling(Common),
    /// List the built-in models.
    ListModels,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Registry name, e.g. `chua` or `random_linear:n=40:seed=7`.
    #[arg(long)]
    model: Option<String>,
    /// pbsr, exp, pbs, fs or fd.
    #[arg(long)]
    method: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    t0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    t1: Option<f64>,
    #[arg(long, conflicts_with = "grid_file")]
    dt: Option<f64>,
    /// Plain text, one ascending time per line.
    #[arg(long)]
    grid_file: Option<PathBuf>,
    /// Perturb interior grid nodes by up to ±20% (seeded by --seed).
    #[arg(long)]
    jitter: bool,
    #[arg(long)]
    eps_tol: Option<f64>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    refine_mult: Option<f64>,
    #[arg(long)]
    force_pbs: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; tables go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Timing repetitions per measurement (median is reported).
    #[arg(long)]
    reps: Option<usize>,
    /// Number of grid levels in a convergence study.
    #[arg(long)]
    levels: Option<usize>,
    /// Comma-separated dimensions for a scaling study.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Number of random seeds per dimension in a scaling study.
    #[arg(long)]
    seeds: Option<usize>,
    /// JSON file with any of the flags above; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<String>,
    method: Option<String>,
    t0: Option<f64>,
    t1: Option<f64>,
    dt: Option<f64>,
    grid_file: Option<PathBuf>,
    jitter: Option<bool>,
    eps_tol: Option<f64>,
    n_max: Option<usize>,
    refine_mult: Option<f64>,
    force_pbs: Option<bool>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    format: Option<Format>,
    reps: Option<usize>,
    levels: Option<usize>,
    dims: Option<Vec<usize>>,
    seeds: Option<usize>,
}

impl Common {
    fn merged(mut self) -> Result<Self> {
        let Some(path) = self.config.take() else {
            return Ok(self);
        };
        let file: FileConfig = serde_json::from_reader(File::open(&path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        macro_rules! fill {
            ($($f:ident),*) => { $( if self.$f.is_none() { self.$f = file.$f; } )* };
        }
        fill!(model, method, t0, t1, dt, grid_file, eps_tol, n_max, refine_mult, seed, out, format, reps, levels, dims, seeds);
        self.jitter |= file.jitter.unwrap_or(false);
        self.force_pbs |= file.force_pbs.unwrap_or(false);
        if self.dt.is_some() && self.grid_file.is_some() {
            return Err(Error::Config("--dt and --grid-file are mutually exclusive".into()));
        }
        Ok(self)
    }

    fn model(&self) -> Result<Model> {
        let name = self.model.as_deref().unwrap_or("scalar_decay");
        let mut spec: ModelSpec = name.parse()?;
        if let (Some(seed), ModelKind::RandomLinear | ModelKind::ConstLinear) = (self.seed, spec.kind) {
            spec.seed = seed;
        }
        let mut model = spec.build()?;
        model.tspan = (self.t0.unwrap_or(model.tspan.0), self.t1.unwrap_or(model.tspan.1));
        Ok(model)
    }

    fn grid(&self, model: &Model) -> Result<Vec<f64>> {
        if let Some(path) = &self.grid_file {
            return read_grid_file(path);
        }
        let (t0, t1) = model.tspan;
        let dt = self.dt.unwrap_or(model.default_dt);
        let spec = if self.jitter {
            GridSpec::Jittered { t0, t1, dt, seed: self.seed.unwrap_or(1) }
        } else {
            GridSpec::Uniform { t0, t1, dt }
        };
        spec.build()
    }

    fn pbsr_config(&self) -> Result<PbsrConfig> {
        let d = PbsrConfig::default();
        let cfg = PbsrConfig {
            eps_tol: self.eps_tol.unwrap_or(d.eps_tol),
            n_max: self.n_max.unwrap_or(d.n_max),
            refine_mult: self.refine_mult.unwrap_or(d.refine_mult),
            force_pbs: self.force_pbs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn format(&self) -> Format {
        self.format.unwrap_or(Format::Csv)
    }

    /// Opens `<out>/<name>`, or stdout when no output directory was given.
    fn sink(&self, name: &str) -> Result<Box<dyn Write>> {
        match &self.out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                Ok(Box::new(BufWriter::new(File::create(dir.join(name))?)))
            }
            None => Ok(Box::new(io::stdout().lock())),
        }
    }
}

fn file_stem(model: &Model) -> String {
    model.name().replace([':', '='], "_")
}

fn cmd_compute(args: &Common) -> Result<()> {
    let model = args.model()?;
    let method: Method = args.method.as_deref().unwrap_or("pbsr").parse()?;
    let grid = args.grid(&model)?;
    let result = study::compute(&model, method, &grid, &args.pbsr_config()?)?;
    let table = SensitivityTable::new(&result.trajectory, &result.sensitivity)?;
    let stem = format!("{}_{}", file_stem(&model), method);
    match args.format() {
        Format::Csv => table.write_csv(args.sink(&format!("{stem}.csv"))?)?,
        Format::Json => {
            let s: Vec<Vec<Vec<f64>>> = table
                .matrices
                .iter()
                .map(|m| (0..m.rows()).map(|l| m.row(l).to_vec()).collect())
                .collect();
            let value = serde_json::json!({
                "model": model.name(),
                "method": method,
                "times": table.times,
                "states": table.states,
                "sensitivities": s,
                "equilibrium": table.equilibrium,
                "singular_steps": result.sensitivity.singular_steps,
            });
            let mut w = args.sink(&format!("{stem}.json"))?;
            serde_json::to_writer_pretty(&mut w, &value)?;
            writeln!(w)?;
        }
    }
    if !result.sensitivity.singular_steps.is_empty() {
        eprintln!(
            "warning: singular Jacobian in {} exponential step(s); phi1 series used",
            result.sensitivity.singular_steps.len()
        );
    }
    Ok(())
}

fn write_report(args: &Common, report: &StudyReport, name: &str, csv: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match args.format() {
        Format::Csv => {
            let mut w = args.sink(&format!("{name}.csv"))?;
            csv(&mut w)?;
            w.flush()?;
        }
        Format::Json => {
            let mut w = args.sink(&format!("{name}.json"))?;
            pio::write_report_json(report, &mut w)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

fn cmd_compare(args: &Common) -> Result<()> {
    let model = args.model()?;
    let grid = args.grid(&model)?;
    let report = study::cmd_compare(&model, &grid, &args.pbsr_config()?)?;
    let name = format!("{}_compare", file_stem(&model));
    write_report(args, &report, &name, |w| pio::write_steps_csv(&report.steps, w))?;
    let re_p: Vec<f64> = report.steps.iter().skip(1).map(|s| s.re_pbsr).collect();
    let re_e: Vec<f64> = report.steps.iter().skip(1).map(|s| s.re_exp).collect();
    eprintln!("median re: pbsr {:.3e}, exp {:.3e}", median(&re_p), median(&re_e));
    Ok(())
}

fn cmd_convergence(args: &Common) -> Result<()> {
    let model = args.model()?;
    let method: Method = args.method.as_deref().unwrap_or("pbs").parse()?;
    let base_dt = args.dt.unwrap_or(model.default_dt);
    let report = study::cmd_convergence(&model, method, args.levels.unwrap_or(5), base_dt)?;
    let name = format!("{}_convergence", file_stem(&model));
    write_report(args, &report, &name, |w| pio::write_convergence_csv(&report.convergence, report.slope, w))?;
    match report.slope {
        Some(s) => eprintln!("fitted order: {s:.3}"),
        None => eprintln!("errors at the noise floor; no order fitted"),
    }
    Ok(())
}

fn cmd_scaling(args: &Common) -> Result<()> {
    let d = ScalingOptions::default();
    let base = args.seed.unwrap_or(1);
    let opts = ScalingOptions {
        dims: args.dims.clone().unwrap_or(d.dims),
        seeds: (0..args.seeds.unwrap_or(1) as u64).map(|i| base + i).collect(),
        reps: args.reps.unwrap_or(d.reps),
        t1: args.t1.unwrap_or(d.t1),
        dt: args.dt.unwrap_or(d.dt),
    };
    let report = study::cmd_scaling(&opts)?;
    match (&args.out, args.format()) {
        (Some(_), Format::Csv) => {
            pio::write_scaling_csv(&report.scaling, args.sink("scaling.csv")?)?;
            pio::write_fits_csv(&report.fits, args.sink("scaling_fits.csv")?)?;
        }
        (None, Format::Csv) => pio::write_scaling_csv(&report.scaling, args.sink("scaling.csv")?)?,
        (_, Format::Json) => write_report(args, &report, "scaling", |_| Ok(()))?,
    }
    for f in &report.fits {
        eprintln!("{:>5}: runtime = {:.3e} * n^{:.2}", f.method.as_str(), f.fit.a, f.fit.b);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compute(a) => cmd_compute(&a.merged()?),
        Command::Compare(a) => cmd_compare(&a.merged()?),
        Command::Convergence(a) => cmd_convergence(&a.merged()?),
        Command::Scaling(a) => cmd_scaling(&a.merged()?),
        Command::ListModels => {
            for (name, desc) in registry_listing() {
                println!("{name:<32} {desc}");
            }
            Ok(())
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    if err.is_usage() {
        2
    } else if err.is_divergence() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
