//! CSV and JSON serialization of trajectories and study reports.
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits, so every table round-trips exactly.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::ode::Trajectory;
use crate::sensitivity::{Method, SensitivityTrajectory};
use crate::study::{ConvergenceRecord, PowerLaw, ScalingFit, ScalingRecord, StepRecord, StudyReport};

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        ryu::Buffer::new().format_finite(v).to_string()
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("cannot parse {what} value `{field}`")))
}

fn parse_usize(field: &str, what: &str) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("cannot parse {what} value `{field}`")))
}

fn parse_bool(field: &str) -> Result<bool> {
    match field.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(Error::Data(format!("cannot parse flag `{other}`"))),
    }
}

fn expect_header(got: &csv::StringRecord, want: &[String]) -> Result<()> {
    if got.len() != want.len() || got.iter().zip(want).any(|(a, b)| a != b) {
        return Err(Error::Data(format!(
            "unexpected header: got [{}], expected [{}]",
            got.iter().collect::<Vec<_>>().join(","),
            want.join(",")
        )));
    }
    Ok(())
}

fn headers(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

// ---------------------------------------------------------------------------
// State and sensitivity table
// ---------------------------------------------------------------------------

/// One row per grid node: `t, x_1..x_n, S_1_1, S_2_1, …, S_n_m, step, equilibrium`.
///
/// `S_l_i = ∂x_l/∂p_i` (1-based), flattened column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTable {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub matrices: Vec<DenseMatrix>,
    pub equilibrium: Vec<bool>,
}

impl SensitivityTable {
    pub fn new(traj: &Trajectory, sens: &SensitivityTrajectory) -> Result<Self> {
        if traj.times != sens.times {
            return Err(Error::Data("state and sensitivity grids differ".into()));
        }
        Ok(Self {
            times: traj.times.clone(),
            states: traj.states.clone(),
            matrices: sens.matrices.clone(),
            equilibrium: sens.equilibrium_flags.clone(),
        })
    }

    pub fn n_x(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn n_p(&self) -> usize {
        self.matrices.first().map_or(0, |m| m.cols())
    }

    pub fn header(n_x: usize, n_p: usize) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((1..=n_x).map(|l| format!("x_{l}")));
        for i in 1..=n_p {
            h.extend((1..=n_x).map(|l| format!("S_{l}_{i}")));
        }
        h.push("step".into());
        h.push("equilibrium".into());
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let (n_x, n_p) = (self.n_x(), self.n_p());
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::header(n_x, n_p))?;
        for k in 0..self.times.len() {
            let mut row = Vec::with_capacity(3 + n_x * (n_p + 1));
            row.push(fmt_f64(self.times[k]));
            row.extend(self.states[k].iter().map(|v| fmt_f64(*v)));
            let s = &self.matrices[k];
            for i in 0..n_p {
                row.extend((0..n_x).map(|l| fmt_f64(s[(l, i)])));
            }
            row.push(k.to_string());
            row.push(u8::from(self.equilibrium[k]).to_string());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Infers `n_x` and `n_p` from the header.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let head = rd.headers()?.clone();
        let n_x = head.iter().filter(|h| h.starts_with("x_")).count();
        let n_s = head.iter().filter(|h| h.starts_with("S_")).count();
        if n_x == 0 || n_s == 0 || n_s % n_x != 0 {
            return Err(Error::Data("sensitivity table header has no state or sensitivity columns".into()));
        }
        let n_p = n_s / n_x;
        expect_header(&head, &Self::header(n_x, n_p))?;
        let mut table = Self {
            times: Vec::new(),
            states: Vec::new(),
            matrices: Vec::new(),
            equilibrium: Vec::new(),
        };
        for (k, rec) in rd.records().enumerate() {
            let rec = rec?;
            let f = |j: usize, what: &str| parse_f64(&rec[j], what);
            table.times.push(f(0, "t")?);
            table.states.push((1..=n_x).map(|j| f(j, "state")).collect::<Result<_>>()?);
            let base = 1 + n_x;
            let mut s = DenseMatrix::zeros(n_x, n_p);
            for i in 0..n_p {
                for l in 0..n_x {
                    s[(l, i)] = f(base + i * n_x + l, "sensitivity")?;
                }
            }
            table.matrices.push(s);
            let step = parse_usize(&rec[base + n_x * n_p], "step")?;
            if step != k {
                return Err(Error::Data(format!("row {k} has step index {step}")));
            }
            table.equilibrium.push(parse_bool(&rec[base + n_x * n_p + 1])?);
        }
        Ok(table)
    }
}

// ---------------------------------------------------------------------------
// Report tables
// ---------------------------------------------------------------------------

pub const STEP_HEADER: [&str; 4] = ["t", "re_pbsr", "re_exp", "equilibrium"];
pub const CONVERGENCE_HEADER: [&str; 3] = ["dt_max", "max_error", "slope"];
pub const SCALING_HEADER: [&str; 5] = ["n", "seed", "exp_seconds", "pbsr_seconds", "fs_seconds"];
pub const FIT_HEADER: [&str; 3] = ["method", "a", "b"];

pub fn write_steps_csv<W: Write>(records: &[StepRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(STEP_HEADER)?;
    for r in records {
        wr.write_record([fmt_f64(r.t), fmt_f64(r.re_pbsr), fmt_f64(r.re_exp), u8::from(r.equilibrium).to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_steps_csv<R: Read>(r: R) -> Result<Vec<StepRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    expect_header(rd.headers()?, &headers(&STEP_HEADER))?;
    rd.records()
        .map(|rec| {
            let rec = rec?;
            Ok(StepRecord {
                t: parse_f64(&rec[0], "t")?,
                re_pbsr: parse_f64(&rec[1], "re_pbsr")?,
                re_exp: parse_f64(&rec[2], "re_exp")?,
                equilibrium: parse_bool(&rec[3])?,
            })
        })
        .collect()
}

/// The fitted slope is repeated on every row; empty when not reported.
pub fn write_convergence_csv<W: Write>(records: &[ConvergenceRecord], slope: Option<f64>, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CONVERGENCE_HEADER)?;
    let slope = slope.map(fmt_f64).unwrap_or_default();
    for r in records {
        wr.write_record([fmt_f64(r.dt_max), fmt_f64(r.max_error), slope.clone()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_convergence_csv<R: Read>(r: R) -> Result<(Vec<ConvergenceRecord>, Option<f64>)> {
    let mut rd = csv::Reader::from_reader(r);
    expect_header(rd.headers()?, &headers(&CONVERGENCE_HEADER))?;
    let mut records = Vec::new();
    let mut slope = None;
    for rec in rd.records() {
        let rec = rec?;
        records.push(ConvergenceRecord {
            dt_max: parse_f64(&rec[0], "dt_max")?,
            max_error: parse_f64(&rec[1], "max_error")?,
        });
        if !rec[2].trim().is_empty() {
            slope = Some(parse_f64(&rec[2], "slope")?);
        }
    }
    Ok((records, slope))
}

pub fn write_scaling_csv<W: Write>(records: &[ScalingRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SCALING_HEADER)?;
    for r in records {
        wr.write_record([
            r.n.to_string(),
            r.seed.to_string(),
            fmt_f64(r.exp_seconds),
            fmt_f64(r.pbsr_seconds),
            fmt_f64(r.fs_seconds),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_scaling_csv<R: Read>(r: R) -> Result<Vec<ScalingRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    expect_header(rd.headers()?, &headers(&SCALING_HEADER))?;
    rd.records()
        .map(|rec| {
            let rec = rec?;
            Ok(ScalingRecord {
                n: parse_usize(&rec[0], "n")?,
                seed: rec[1].trim().parse().map_err(|_| Error::Data(format!("cannot parse seed `{}`", &rec[1])))?,
                exp_seconds: parse_f64(&rec[2], "exp_seconds")?,
                pbsr_seconds: parse_f64(&rec[3], "pbsr_seconds")?,
                fs_seconds: parse_f64(&rec[4], "fs_seconds")?,
            })
        })
        .collect()
}

pub fn write_fits_csv<W: Write>(fits: &[ScalingFit], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(FIT_HEADER)?;
    for f in fits {
        wr.write_record([f.method.to_string(), fmt_f64(f.fit.a), fmt_f64(f.fit.b)])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_fits_csv<R: Read>(r: R) -> Result<Vec<ScalingFit>> {
    let mut rd = csv::Reader::from_reader(r);
    expect_header(rd.headers()?, &headers(&FIT_HEADER))?;
    rd.records()
        .map(|rec| {
            let rec = rec?;
            Ok(ScalingFit {
                method: rec[0].parse::<Method>()?,
                fit: PowerLaw {
                    a: parse_f64(&rec[1], "a")?,
                    b: parse_f64(&rec[2], "b")?,
                },
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

pub fn write_report_json<W: Write>(report: &StudyReport, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, report)?;
    Ok(())
}

pub fn read_report_json<R: Read>(r: R) -> Result<StudyReport> {
    Ok(serde_json::from_reader(r)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::Metadata;

    fn table() -> SensitivityTable {
        SensitivityTable {
            times: vec![0.0, 0.1, 0.30000000000000004],
            states: vec![vec![1.0, -2.5], vec![0.1 + 0.2, 1e-300], vec![f64::MIN_POSITIVE, -0.0]],
            matrices: vec![
                DenseMatrix::zeros(2, 3),
                DenseMatrix::from_fn(2, 3, |l, i| (l * 10 + i) as f64 / 3.0),
                DenseMatrix::from_fn(2, 3, |l, i| -std::f64::consts::PI * (l + i) as f64),
            ],
            equilibrium: vec![false, true, false],
        }
    }

    #[test]
    fn sensitivity_table_round_trip_and_layout() {
        let t = table();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let head = text.lines().next().unwrap();
        assert_eq!(head, "t,x_1,x_2,S_1_1,S_2_1,S_1_2,S_2_2,S_1_3,S_2_3,step,equilibrium");
        let row1: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
        assert_eq!(row1.len(), 1 + 2 + 6 + 2);
        // S_2_1 at column 4
        assert_eq!(row1[4].parse::<f64>().unwrap(), 10.0 / 3.0);
        assert_eq!(SensitivityTable::read_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn sensitivity_table_rejects_bad_input() {
        assert!(SensitivityTable::read_csv("t,a,b\n1,2,3\n".as_bytes()).is_err());
        let bad_step = "t,x_1,S_1_1,step,equilibrium\n0,1,0,5,0\n";
        assert!(matches!(SensitivityTable::read_csv(bad_step.as_bytes()), Err(Error::Data(_))));
        let bad_num = "t,x_1,S_1_1,step,equilibrium\n0,abc,0,0,0\n";
        assert!(matches!(SensitivityTable::read_csv(bad_num.as_bytes()), Err(Error::Data(_))));
    }

    #[test]
    fn record_tables_round_trip() {
        let steps = vec![
            StepRecord { t: 0.0, re_pbsr: 0.0, re_exp: 0.0, equilibrium: false },
            StepRecord { t: 0.05, re_pbsr: 1.234e-7, re_exp: f64::NAN, equilibrium: true },
        ];
        let mut buf = Vec::new();
        write_steps_csv(&steps, &mut buf).unwrap();
        let back = read_steps_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0], steps[0]);
        assert!(back[1].re_exp.is_nan() && back[1].re_pbsr == steps[1].re_pbsr);

        let conv = vec![ConvergenceRecord { dt_max: 0.1, max_error: 3e-3 }, ConvergenceRecord { dt_max: 0.05, max_error: 7.5e-4 }];
        for slope in [Some(2.0000000000000004), None] {
            let mut buf = Vec::new();
            write_convergence_csv(&conv, slope, &mut buf).unwrap();
            assert_eq!(read_convergence_csv(buf.as_slice()).unwrap(), (conv.clone(), slope));
        }

        let scaling = vec![ScalingRecord { n: 40, seed: u64::MAX, exp_seconds: 1e-4, pbsr_seconds: 2.5e-3, fs_seconds: 0.1 }];
        let mut buf = Vec::new();
        write_scaling_csv(&scaling, &mut buf).unwrap();
        assert_eq!(read_scaling_csv(buf.as_slice()).unwrap(), scaling);

        let fits = vec![ScalingFit { method: Method::Fs, fit: PowerLaw { a: 1.5e-9, b: 4.123456789 } }];
        let mut buf = Vec::new();
        write_fits_csv(&fits, &mut buf).unwrap();
        assert_eq!(read_fits_csv(buf.as_slice()).unwrap(), fits);
    }

    #[test]
    fn report_json_round_trip() {
        let report = StudyReport {
            metadata: Metadata { model: "chua".into(), seeds: vec![1, 2], config: Some(Default::default()), method: Some(Method::Pbs), environment: "x".into() },
            convergence: vec![ConvergenceRecord { dt_max: 0.1, max_error: 0.3 }],
            slope: Some(1.99),
            ..Default::default()
        };
        let mut buf = Vec::new();
        write_report_json(&report, &mut buf).unwrap();
        assert_eq!(read_report_json(buf.as_slice()).unwrap(), report);
    }
}
