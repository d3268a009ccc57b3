//! CSV input: a mandatory header `time,status,x1,...,xp` followed by one
//! observation per line.

use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use crate::data::SurvivalDataset;

#[derive(Debug, Clone, PartialEq)]
pub enum InputError {
    /// Unreadable or malformed input.
    Parse { line: Option<u64>, message: String },
    /// Well-formed input whose values break a data invariant.
    Invariant { line: Option<u64>, message: String },
}

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (kind, line, message) = match self {
            Self::Parse { line, message } => ("parse error", line, message),
            Self::Invariant { line, message } => ("invalid data", line, message),
        };
        match line {
            Some(l) => write!(f, "{kind} at line {l}: {message}"),
            None => write!(f, "{kind}: {message}"),
        }
    }
}

impl std::error::Error for InputError {}

#[derive(Debug, Clone, PartialEq)]
pub struct InputTable {
    pub covariate_names: Vec<String>,
    pub times: Vec<f64>,
    pub statuses: Vec<u8>,
    pub covariates: DMatrix<f64>,
}

impl InputTable {
    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn to_dataset(&self) -> SurvivalDataset {
        SurvivalDataset::from_statuses(self.times.clone(), &self.statuses, self.covariates.clone())
            .expect("table invariants already checked")
    }
}

pub fn read_table(path: &Path) -> Result<InputTable, InputError> {
    let file = std::fs::File::open(path).map_err(|e| InputError::Parse {
        line: None,
        message: format!("{}: {e}", path.display()),
    })?;
    parse_table(file)
}

pub fn parse_table<R: Read>(reader: R) -> Result<InputTable, InputError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |line, message| InputError::Parse { line, message };
    let header = rdr
        .headers()
        .map_err(|e| parse_err(e.position().map(|p| p.line()), e.to_string()))?
        .clone();
    if header.len() < 2 || header.iter().all(str::is_empty) {
        return Err(parse_err(Some(1), "header must start with time,status".into()));
    }
    let covariate_names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let p = covariate_names.len();

    let mut times = Vec::new();
    let mut statuses = Vec::new();
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line());
            let message = match e.kind() {
                csv::ErrorKind::UnequalLengths {
                    expected_len, len, ..
                } => format!("expected {expected_len} fields, found {len}"),
                _ => e.to_string(),
            };
            parse_err(line, message)
        })?;
        let line = record.position().map(|p| p.line());
        let cell = |k: usize, name: &str| -> Result<f64, InputError> {
            let raw = record.get(k).unwrap_or("");
            if raw.is_empty() {
                return Err(parse_err(line, format!("missing value for {name}")));
            }
            raw.parse::<f64>()
                .map_err(|_| parse_err(line, format!("cannot parse {name} value '{raw}'")))
        };
        let time = cell(0, "time")?;
        if !(time.is_finite() && time > 0.0) {
            return Err(InputError::Invariant {
                line,
                message: format!("time must be positive, got {time}"),
            });
        }
        let status = cell(1, "status")?;
        let status = match status {
            s if s == 0.0 => 0,
            s if s == 1.0 => 1,
            s => {
                return Err(InputError::Invariant {
                    line,
                    message: format!("status must be 0 or 1, got {s}"),
                })
            }
        };
        for (j, name) in covariate_names.iter().enumerate() {
            let v = cell(j + 2, name)?;
            if !v.is_finite() {
                return Err(InputError::Invariant {
                    line,
                    message: format!("{name} must be finite"),
                });
            }
            values.push(v);
        }
        times.push(time);
        statuses.push(status);
    }
    if times.is_empty() {
        return Err(parse_err(None, "no data rows".into()));
    }
    let covariates = DMatrix::from_row_slice(times.len(), p, &values);
    Ok(InputTable {
        covariate_names,
        times,
        statuses,
        covariates,
    })
}
