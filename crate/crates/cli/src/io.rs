//! Dataset and truth CSV files.
//!
//! One schema serves all designs. Empty fields are missing values; which
//! fields a design needs is decided by dataset validation, not here.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use beliefcal::simlab::{SimTruth, TruthRow};
use beliefcal::{validate_dataset_with_schema, Arm, BeliefRecord, Dataset, Design};

use crate::CliError;

/// Fixed dataset columns, in file order. Covariates follow as `cov_<name>`.
pub const DATA_COLUMNS: [&str; 11] = [
    "id",
    "arm",
    "prior",
    "prior_var",
    "posterior",
    "signal",
    "signal_high",
    "signal_low",
    "outcome_pre",
    "outcome_post",
    "group",
];

pub const COVARIATE_PREFIX: &str = "cov_";

const REQUIRED: [&str; 4] = ["id", "prior", "posterior", "outcome_post"];

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Where `simulate` puts the truth table: `<stem>_truth.csv` beside the data.
pub fn truth_path(data_path: &Path) -> PathBuf {
    let stem = data_path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    data_path.with_file_name(format!("{stem}_truth.csv"))
}

pub fn fmt_num(x: f64) -> String {
    // Display is the shortest string that parses back to the same f64.
    format!("{x}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header: Vec<String> = DATA_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(data.covariate_names().iter().map(|c| format!("{COVARIATE_PREFIX}{c}")));
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for r in data.records() {
        let mut row = vec![
            r.id.clone(),
            match r.arm {
                Some(Arm::A) => "A".into(),
                Some(Arm::B) => "B".into(),
                None => String::new(),
            },
            fmt_num(r.prior),
            fmt_opt(r.prior_var),
            fmt_num(r.posterior),
            fmt_opt(r.signal),
            fmt_opt(r.signal_high),
            fmt_opt(r.signal_low),
            fmt_opt(r.outcome_pre),
            fmt_num(r.outcome_post),
            r.group.clone().unwrap_or_default(),
        ];
        row.extend(r.covariates.iter().map(|&c| fmt_num(c)));
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

enum Column {
    Fixed(usize),
    Covariate(usize),
}

/// Read and validate a dataset. Parse problems name the row (1-based, data
/// rows only) and the column.
pub fn read_dataset(path: &Path, design: Design) -> Result<Dataset, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?
        .clone();

    let mut columns = Vec::with_capacity(headers.len());
    let mut covariate_names = Vec::new();
    let mut seen = Vec::new();
    for h in headers.iter() {
        if seen.contains(&h) {
            return Err(CliError::Schema(format!("duplicate column `{h}`")));
        }
        seen.push(h);
        if let Some(k) = DATA_COLUMNS.iter().position(|c| *c == h) {
            columns.push(Column::Fixed(k));
        } else if let Some(name) = h.strip_prefix(COVARIATE_PREFIX).filter(|n| !n.is_empty()) {
            columns.push(Column::Covariate(covariate_names.len()));
            covariate_names.push(name.to_string());
        } else {
            return Err(CliError::Schema(format!(
                "unknown column `{h}` (expected {} or {COVARIATE_PREFIX}<name>)",
                DATA_COLUMNS.join(", ")
            )));
        }
    }
    for req in REQUIRED {
        if !seen.contains(&req) {
            return Err(CliError::Schema(format!("missing required column `{req}`")));
        }
    }

    let mut records = Vec::new();
    for (row_idx, row) in rdr.records().enumerate() {
        let row_no = row_idx + 1;
        let row = row.map_err(|e| CliError::Schema(format!("row {row_no}: {e}")))?;
        let mut fixed: [Option<&str>; 11] = [None; 11];
        let mut covs = vec![f64::NAN; covariate_names.len()];
        for (col, field) in columns.iter().zip(row.iter()) {
            if field.is_empty() {
                continue;
            }
            match *col {
                Column::Fixed(k) => fixed[k] = Some(field),
                Column::Covariate(k) => {
                    covs[k] = parse_num(field, row_no, &format!("{COVARIATE_PREFIX}{}", covariate_names[k]))?;
                }
            }
        }
        let num = |k: usize| fixed[k].map(|v| parse_num(v, row_no, DATA_COLUMNS[k])).transpose();
        let need = |k: usize| {
            num(k)?
                .ok_or_else(|| CliError::Schema(format!("row {row_no}, column `{}`: value required", DATA_COLUMNS[k])))
        };
        let id = fixed[0]
            .ok_or_else(|| CliError::Schema(format!("row {row_no}, column `id`: value required")))?
            .to_string();
        let arm = match fixed[1] {
            None => None,
            Some("A") | Some("a") => Some(Arm::A),
            Some("B") | Some("b") => Some(Arm::B),
            Some(other) => {
                return Err(CliError::Schema(format!(
                    "row {row_no}, column `arm`: expected A or B, got `{other}`"
                )))
            }
        };
        if let Some(k) = covs.iter().position(|c| c.is_nan()) {
            return Err(CliError::Schema(format!(
                "row {row_no}, column `{COVARIATE_PREFIX}{}`: value required",
                covariate_names[k]
            )));
        }
        records.push(BeliefRecord {
            arm,
            prior_var: num(3)?,
            signal: num(5)?,
            signal_high: num(6)?,
            signal_low: num(7)?,
            outcome_pre: num(8)?,
            group: fixed[10].map(String::from),
            covariates: covs,
            ..BeliefRecord::new(id, need(2)?, need(4)?, need(9)?)
        });
    }
    validate_dataset_with_schema(records, design, covariate_names).map_err(|e| CliError::Schema(e.to_string()))
}

fn parse_num(field: &str, row: usize, column: &str) -> Result<f64, CliError> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::Schema(format!(
            "row {row}, column `{column}`: not a finite number: `{field}`"
        ))),
    }
}

pub fn write_truth(path: &Path, truth: &SimTruth) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for row in &truth.rows {
        w.serialize(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_truth(path: &Path) -> Result<SimTruth, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let rows = rdr
        .deserialize::<TruthRow>()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::Schema(format!("{} row {}: {e}", path.display(), i + 1))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SimTruth { rows })
}

/// Write to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut f = File::create(p).map_err(|e| io_err(p, e))?;
            f.write_all(contents.as_bytes()).map_err(|e| io_err(p, e))
        }
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(contents.as_bytes()).and_then(|_| out.flush()) {
                // a closed pipe (`| head`) is the reader's choice, not a failure
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io(format!("stdout: {e}"))),
                _ => Ok(()),
            }
        }
    }
}
