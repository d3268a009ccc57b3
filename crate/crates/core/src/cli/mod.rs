//! Command-line front end.
//!
//! Exit codes: 0 success, 2 unreadable input or configuration, 3 data or
//! numerical failure, 4 largest observation not censored, 5 too few
//! covariates for the chosen method.

pub mod input;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::order_dataset;
use crate::error::Error;
use crate::impute::{
    run_pipeline, tail_ties_extrapolate, tail_ties_iterative_with, Flag, ImputationMethod,
    PipelineOptions, TimeScale,
};
use crate::km::{km_estimate, stute_weights};
use crate::simulate::{run_study, SimConfig};
use crate::swls::{default_ridge, ConstraintRows, QpSummary, SwlsOptions};
use input::{read_table, InputError, InputTable};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;
pub const EXIT_NOT_CENSORED: i32 = 4;
pub const EXIT_TOO_FEW_COVARIATES: i32 = 5;

/// Environment variable capping worker threads; 0 or unset means automatic.
pub const THREADS_VAR: &str = "CENSAFT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "censaft", version, about = "AFT regression with a censored largest observation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Kaplan-Meier curve as `t,survival,jump`.
    Km {
        file: PathBuf,
        #[arg(long)]
        tail_correction: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Kaplan-Meier weights in input row order.
    Weights {
        file: PathBuf,
        #[arg(long)]
        tail_correction: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Fits the AFT model with one of the imputation pipelines.
    Fit {
        file: PathBuf,
        #[arg(long, value_parser = parse_method)]
        method: ImputationMethod,
        /// Ridge penalty; defaults to 0.01 sqrt(2 ln p).
        #[arg(long)]
        lambda2: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
        /// Scale of the difference regression used by `pdiff`.
        #[arg(long, value_enum, default_value_t = ScaleArg::Log)]
        scale: ScaleArg,
        #[arg(long, value_enum, default_value_t = RowsArg::Weighted)]
        constraint_rows: RowsArg,
        /// Resampling draws for rmean/rmedian.
        #[arg(long, default_value_t = 100)]
        draws: usize,
        /// Iteration steps per resampling draw.
        #[arg(long, default_value_t = 3)]
        steps: usize,
        /// Multiplier draws averaged into the resampled tail quantity.
        #[arg(long, default_value_t = 100)]
        tau_draws: usize,
    },
    /// Imputes censored observations tied at the maximum time.
    Tailties {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = TieMethod::Iterative)]
        method: TieMethod,
        #[arg(long, default_value_t = 1.0)]
        psi: f64,
        /// Scale of the difference regression for the iterative method.
        #[arg(long, value_enum, default_value_t = ScaleArg::Original)]
        scale: ScaleArg,
        #[arg(long)]
        json: bool,
    },
    /// Runs a Monte Carlo study from a JSON configuration.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for report.csv, report.json and estimates.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Log,
    Original,
}

impl From<ScaleArg> for TimeScale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Log => TimeScale::Log,
            ScaleArg::Original => TimeScale::Original,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RowsArg {
    Weighted,
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TieMethod {
    Iterative,
    Extrapolate,
}

fn parse_method(s: &str) -> Result<ImputationMethod, String> {
    s.parse()
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<InputError> for CliError {
    fn from(e: InputError) -> Self {
        let code = match e {
            InputError::Parse { .. } => EXIT_INPUT,
            InputError::Invariant { .. } => EXIT_INVARIANT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::LargestNotCensored => EXIT_NOT_CENSORED,
            Error::TooFewCovariates { .. } => EXIT_TOO_FEW_COVARIATES,
            Error::InvalidConfig(_) => EXIT_INPUT,
            _ => EXIT_INVARIANT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: EXIT_INPUT,
            message: e.to_string(),
        }
    }
}

/// Formats `x` with `digits` significant digits, dropping trailing zeros.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    let trim = |s: String| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if exp < -5 || exp >= digits as i32 {
        let s = format!("{:.*e}", digits - 1, x);
        let (mantissa, e) = s.split_once('e').expect("exponent form");
        format!("{}e{}", trim(mantissa.to_string()), e)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        let s = trim(format!("{x:.decimals$}"));
        // Rounding can carry into a new digit (9.999995 -> 10.00000).
        if s.trim_start_matches('-').split('.').next().unwrap().len() > digits {
            fmt_sig(s.parse().unwrap(), digits)
        } else {
            s
        }
    }
}

fn sig(x: f64) -> String {
    fmt_sig(x, 6)
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Parses `args` and runs the command, writing to `stdout` and `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = stderr.write_all(text.as_bytes());
                EXIT_INPUT
            } else {
                let _ = stdout.write_all(text.as_bytes());
                EXIT_OK
            };
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

fn load(file: &Path) -> Result<InputTable, CliError> {
    Ok(read_table(file)?)
}

#[derive(Serialize)]
struct KmRow {
    t: f64,
    survival: f64,
    jump: f64,
}

#[derive(Serialize)]
struct WeightRow {
    row: usize,
    time: f64,
    status: u8,
    weight: f64,
}

#[derive(Serialize)]
pub struct FitReport {
    pub method: ImputationMethod,
    pub label: String,
    pub n: usize,
    pub p: usize,
    pub covariates: Vec<String>,
    pub lambda2: f64,
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub censored_time: f64,
    pub imputed_time: Option<f64>,
    pub imputed_log_time: Option<f64>,
    pub tau: Option<f64>,
    pub flags: Vec<Flag>,
    pub qp: QpSummary,
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Km {
            file,
            tail_correction,
            out,
            json,
        } => {
            let table = load(&file)?;
            let curve = km_estimate(&order_dataset(&table.to_dataset()), tail_correction);
            let rows: Vec<KmRow> = (0..curve.event_times.len())
                .map(|k| KmRow {
                    t: curve.event_times[k],
                    survival: curve.survival[k],
                    jump: curve.jumps[k],
                })
                .collect();
            let text = if json {
                to_json(&rows)
            } else {
                let mut s = String::from("t,survival,jump\n");
                for r in &rows {
                    s += &format!("{},{},{}\n", sig(r.t), sig(r.survival), sig(r.jump));
                }
                s
            };
            emit(out.as_deref(), &text, stdout)
        }
        Command::Weights {
            file,
            tail_correction,
            out,
            json,
        } => {
            let table = load(&file)?;
            let ordered = order_dataset(&table.to_dataset());
            let w = stute_weights(&ordered, tail_correction);
            let mut rows: Vec<WeightRow> = ordered
                .permutation()
                .iter()
                .enumerate()
                .map(|(k, &row)| WeightRow {
                    row: row + 1,
                    time: table.times[row],
                    status: table.statuses[row],
                    weight: w.weights[k],
                })
                .collect();
            rows.sort_by_key(|r| r.row);
            let text = if json {
                to_json(&rows)
            } else {
                let mut s = String::from("row,time,status,weight\n");
                for r in &rows {
                    s += &format!("{},{},{},{}\n", r.row, sig(r.time), r.status, sig(r.weight));
                }
                s
            };
            emit(out.as_deref(), &text, stdout)
        }
        Command::Fit {
            file,
            method,
            lambda2,
            seed,
            json,
            scale,
            constraint_rows,
            draws,
            steps,
            tau_draws,
        } => {
            let table = load(&file)?;
            let report = fit_report(
                &table,
                method,
                lambda2,
                PipelineOptions {
                    swls: SwlsOptions {
                        constraint_rows: match constraint_rows {
                            RowsArg::Weighted => ConstraintRows::Weighted,
                            RowsArg::Unweighted => ConstraintRows::Unweighted,
                        },
                        ..SwlsOptions::default()
                    },
                    n_draws: draws,
                    m: steps,
                    tau_draws,
                    seed,
                    diff_scale: scale.into(),
                },
            )?;
            let text = if json {
                to_json(&report)
            } else {
                fit_text(&report)
            };
            emit(None, &text, stdout)
        }
        Command::Tailties {
            file,
            method,
            psi,
            scale,
            json,
        } => {
            let table = load(&file)?;
            let ordered = order_dataset(&table.to_dataset());
            let text = match method {
                TieMethod::Iterative => {
                    let res = tail_ties_iterative_with(&ordered, scale.into())?;
                    if json {
                        to_json(&res)
                    } else {
                        let mut s = String::from("k,imputed_time\n");
                        for (k, t) in res.times.iter().enumerate() {
                            s += &format!("{},{}\n", k + 1, sig(*t));
                        }
                        s
                    }
                }
                TieMethod::Extrapolate => {
                    let res = tail_ties_extrapolate(&ordered, psi)?;
                    if json {
                        to_json(&res)
                    } else {
                        let mut s = String::from("k,probability,imputed_time\n");
                        for (k, t) in res.times.iter().enumerate() {
                            let mark = if res.below_censoring.contains(&k) { ",below_censoring" } else { "" };
                            s += &format!("{},{},{}{}\n", k + 1, sig(res.probabilities[k]), sig(*t), mark);
                        }
                        s += &format!(
                            "# intercept={} slope={} r_squared={} s_last={}\n",
                            sig(res.intercept),
                            sig(res.slope),
                            sig(res.r_squared),
                            sig(res.s_last)
                        );
                        s
                    }
                }
            };
            emit(None, &text, stdout)
        }
        Command::Simulate {
            config,
            reps,
            seed,
            out,
        } => {
            let text = std::fs::read_to_string(&config).map_err(|e| CliError {
                code: EXIT_INPUT,
                message: format!("{}: {e}", config.display()),
            })?;
            let mut cfg = SimConfig::from_json(&text)?;
            if let Some(r) = reps {
                cfg.replications = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(thread_cap()?)
                .build()
                .map_err(|e| CliError {
                    code: EXIT_INVARIANT,
                    message: e.to_string(),
                })?;
            let report = pool.install(|| run_study(&cfg))?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    std::fs::write(dir.join("report.csv"), report.to_csv())?;
                    std::fs::write(dir.join("report.json"), report.to_json() + "\n")?;
                    std::fs::write(dir.join("estimates.csv"), estimates_csv(&report))?;
                }
                None => stdout.write_all(report.to_csv().as_bytes())?,
            }
            Ok(())
        }
    }
}

fn thread_cap() -> Result<usize, CliError> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(0),
        Ok(v) if v.trim().is_empty() => Ok(0),
        Ok(v) => v.trim().parse().map_err(|_| CliError {
            code: EXIT_INPUT,
            message: format!("{THREADS_VAR} must be a nonnegative integer, got '{v}'"),
        }),
    }
}

fn estimates_csv(report: &crate::simulate::StudyReport) -> String {
    let p = report.config.p;
    let mut s = String::from("method,replication");
    for j in 0..p {
        s += &format!(",beta{}", j + 1);
    }
    s.push('\n');
    for m in &report.methods {
        for (r, est) in m.estimates.iter().enumerate() {
            s += &format!("{},{}", m.method, r + 1);
            match est {
                Some(b) => b.iter().for_each(|v| s += &format!(",{v}")),
                None => (0..p).for_each(|_| s += ","),
            }
            s.push('\n');
        }
    }
    s
}

pub fn fit_report(
    table: &InputTable,
    method: ImputationMethod,
    lambda2: Option<f64>,
    options: PipelineOptions,
) -> Result<FitReport, CliError> {
    let p = table.p();
    if p < method.min_covariates() {
        return Err(Error::TooFewCovariates {
            needed: method.min_covariates(),
            found: p,
        }
        .into());
    }
    let lambda2 = lambda2.unwrap_or_else(|| default_ridge(p.max(1)));
    let ordered = order_dataset(&table.to_dataset());
    let res = run_pipeline(&ordered, method, lambda2, &options)?;
    Ok(FitReport {
        method,
        label: method.label().into(),
        n: table.n(),
        p,
        covariates: table.covariate_names.clone(),
        lambda2,
        beta: res.fit.beta.clone(),
        intercept: res.fit.intercept,
        censored_time: ordered.max_time(),
        imputed_time: res.imputed_time(),
        imputed_log_time: res.imputed_log_time,
        tau: res.tau,
        flags: res.flags.clone(),
        qp: res.fit.qp.clone(),
    })
}

fn fit_text(r: &FitReport) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("method".into(), format!("{} ({})", r.method, r.label)),
        ("n".into(), r.n.to_string()),
        ("lambda2".into(), sig(r.lambda2)),
        ("intercept".into(), sig(r.intercept)),
    ];
    for (name, b) in r.covariates.iter().zip(&r.beta) {
        rows.push((format!("beta[{name}]"), sig(*b)));
    }
    rows.push(("censored_time".into(), sig(r.censored_time)));
    if let Some(t) = r.imputed_time {
        rows.push(("imputed_time".into(), sig(t)));
    }
    if let Some(t) = r.tau {
        rows.push(("tau".into(), sig(t)));
    }
    if !r.flags.is_empty() {
        let names: Vec<String> = r
            .flags
            .iter()
            .map(|f| serde_json::to_value(f).unwrap().as_str().unwrap().to_string())
            .collect();
        rows.push(("flags".into(), names.join(",")));
    }
    rows.push(("qp_iterations".into(), r.qp.iterations.to_string()));
    rows.push(("active_constraints".into(), r.qp.active_positions.len().to_string()));
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("{k:<width$}  {v}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(fmt_sig(0.1, 6), "0.1");
        assert_eq!(fmt_sig(137.85512, 6), "137.855");
        assert_eq!(fmt_sig(-1.6271849, 6), "-1.62718");
        assert_eq!(fmt_sig(0.8 * 15.0 / 28.0, 6), "0.428571");
        assert_eq!(fmt_sig(9.9999999, 6), "10");
        assert_eq!(fmt_sig(1234567.0, 6), "1.23457e6");
        assert_eq!(fmt_sig(0.0000012345678, 6), "1.23457e-6");
        assert_eq!(fmt_sig(0.0, 6), "0");
    }
}
