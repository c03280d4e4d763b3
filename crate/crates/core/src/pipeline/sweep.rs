use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::str::FromStr;

use log::warn;

use super::config::RunConfig;
use super::run::run_pipeline;
use crate::error::{Result, XconError};

/// Hyperparameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Alpha,
    Lambda,
    K,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::Lambda => "lambda",
            SweepAxis::K => "K",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = XconError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepAxis::Alpha),
            "lambda" => Ok(SweepAxis::Lambda),
            "K" | "k" | "k_partitions" => Ok(SweepAxis::K),
            _ => Err(XconError::Config(format!("unknown sweep axis {s:?} (alpha, lambda, K)"))),
        }
    }
}

impl SweepAxis {
    fn apply(self, config: &mut RunConfig, value: f64) -> Result<()> {
        match self {
            SweepAxis::Alpha => config.train.alpha = value,
            SweepAxis::Lambda => config.train.lambda = value,
            SweepAxis::K => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(XconError::Config(format!("K must be a positive integer, got {value}")));
                }
                config.train.partitions = value as usize;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub value: f64,
    pub seed: u64,
    /// `(acc_all, acc_old, acc_new)`, or the error message.
    pub result: std::result::Result<(f64, f64, f64), String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub runs: Vec<SweepRun>,
}

impl SweepTable {
    /// One row per value: mean accuracies over the seeds that succeeded.
    /// Cells with no successful seed read `failed`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},n_ok,n_failed,acc_all,acc_old,acc_new\n", self.axis);
        for &v in &self.values {
            let runs: Vec<&SweepRun> = self.runs.iter().filter(|r| r.value == v).collect();
            let ok: Vec<(f64, f64, f64)> = runs.iter().filter_map(|r| r.result.clone().ok()).collect();
            let failed = runs.len() - ok.len();
            if ok.is_empty() {
                writeln!(out, "{v},0,{failed},failed,failed,failed").expect("write to string");
                continue;
            }
            let n = ok.len() as f64;
            let mean = |f: fn(&(f64, f64, f64)) -> f64| ok.iter().map(f).sum::<f64>() / n;
            writeln!(
                out,
                "{v},{},{failed},{:.6},{:.6},{:.6}",
                ok.len(),
                mean(|r| r.0),
                mean(|r| r.1),
                mean(|r| r.2)
            )
            .expect("write to string");
        }
        out
    }

    /// Every individual run.
    pub fn runs_csv(&self) -> String {
        let mut out = format!("{},seed,acc_all,acc_old,acc_new,error\n", self.axis);
        for r in &self.runs {
            match &r.result {
                Ok((a, o, n)) => writeln!(out, "{},{},{a:.6},{o:.6},{n:.6},", r.value, r.seed),
                Err(e) => writeln!(out, "{},{},failed,failed,failed,\"{}\"", r.value, r.seed, e.replace('"', "'")),
            }
            .expect("write to string");
        }
        out
    }
}

fn cell_name(axis: SweepAxis, value: f64, seed: u64) -> String {
    format!("{axis}={value}/seed={seed}")
}

/// Runs the pipeline once per `(value, seed)`, each in its own
/// subdirectory of `base.out`, and writes `sweep.csv` and `sweep_runs.csv`.
/// Failed runs are recorded and the sweep continues.
pub fn run_sweep(base: &RunConfig, axis: SweepAxis, values: &[f64], seeds: &[u64]) -> Result<SweepTable> {
    if values.is_empty() || seeds.is_empty() {
        return Err(XconError::Config("a sweep needs at least one value and one seed".into()));
    }
    let mut runs = Vec::with_capacity(values.len() * seeds.len());
    for &value in values {
        for &seed in seeds {
            let mut cfg = base.clone().with_seed(seed);
            cfg.out = base.out.join(cell_name(axis, value, seed));
            let result = axis
                .apply(&mut cfg, value)
                .and_then(|_| run_pipeline(&cfg))
                .and_then(|o| {
                    o.report
                        .map(|r| (r.acc_all, r.acc_old, r.acc_new))
                        .ok_or_else(|| XconError::Config("sweeps need ground-truth labels".into()))
                })
                .map_err(|e| {
                    warn!("sweep cell {} failed: {e}", cell_name(axis, value, seed));
                    e.to_string()
                });
            runs.push(SweepRun { value, seed, result });
        }
    }
    let table = SweepTable {
        axis,
        values: values.to_vec(),
        runs,
    };
    fs::create_dir_all(&base.out).map_err(|e| XconError::io(&base.out, e))?;
    let path = base.out.join("sweep.csv");
    fs::write(&path, table.to_csv()).map_err(|e| XconError::io(&path, e))?;
    let path = base.out.join("sweep_runs.csv");
    fs::write(&path, table.runs_csv()).map_err(|e| XconError::io(&path, e))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        assert_eq!("alpha".parse::<SweepAxis>().unwrap(), SweepAxis::Alpha);
        assert_eq!("K".parse::<SweepAxis>().unwrap(), SweepAxis::K);
        assert!("tau".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn failed_cells_are_marked() {
        let table = SweepTable {
            axis: SweepAxis::Alpha,
            values: vec![0.0, 0.1],
            runs: vec![
                SweepRun {
                    value: 0.0,
                    seed: 0,
                    result: Ok((0.5, 0.6, 0.4)),
                },
                SweepRun {
                    value: 0.0,
                    seed: 1,
                    result: Ok((0.7, 0.8, 0.6)),
                },
                SweepRun {
                    value: 0.1,
                    seed: 0,
                    result: Err("train stage failed".into()),
                },
            ],
        };
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "alpha,n_ok,n_failed,acc_all,acc_old,acc_new");
        assert_eq!(lines[1], "0,2,0,0.600000,0.700000,0.500000");
        assert_eq!(lines[2], "0.1,0,1,failed,failed,failed");
    }

    #[test]
    fn fractional_k_rejected() {
        let mut cfg = RunConfig::default();
        assert!(SweepAxis::K.apply(&mut cfg, 2.5).is_err());
        SweepAxis::K.apply(&mut cfg, 4.0).unwrap();
        assert_eq!(cfg.train.partitions, 4);
    }
}
