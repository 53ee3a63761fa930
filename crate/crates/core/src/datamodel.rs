//! Experiment data model: participant records, validation, and the derived
//! analysis columns every estimator reads.
//!
//! A [`Dataset`] is immutable once built. All sample reduction happens later,
//! at estimation time, so `n_used` in an [`EstimateResult`] is always relative
//! to the validated record count.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Experimental design family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// Within-person: beliefs and outcomes measured before and after information.
    Panel,
    /// Between-person: both arms receive a signal (high vs. low).
    Active,
    /// Between-person: the control arm receives no signal.
    Passive,
}

impl Design {
    pub fn as_str(self) -> &'static str {
        match self {
            Design::Panel => "panel",
            Design::Active => "active",
            Design::Passive => "passive",
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Design {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "panel" => Ok(Design::Panel),
            "active" => Ok(Design::Active),
            "passive" => Ok(Design::Passive),
            other => Err(format!("unknown design `{other}` (expected panel, active or passive)")),
        }
    }
}

/// Randomized arm. `A` is the treated (high-signal or information) arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    A,
    B,
}

/// One experimental participant as ingested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefRecord {
    pub id: String,
    pub arm: Option<Arm>,
    /// Mean of the prior belief.
    pub prior: f64,
    /// Variance of the prior belief, when elicited.
    pub prior_var: Option<f64>,
    pub posterior: f64,
    /// Signal actually shown. Absent for the passive control arm.
    pub signal: Option<f64>,
    /// Signal shown in arm A (known for every record when administered by design).
    pub signal_high: Option<f64>,
    /// Signal shown in arm B (active designs).
    pub signal_low: Option<f64>,
    /// Pre-treatment outcome (panel designs).
    pub outcome_pre: Option<f64>,
    /// Outcome after treatment (or the only outcome in a cross-section).
    pub outcome_post: f64,
    /// Values for the dataset's covariate schema, in schema order.
    pub covariates: Vec<f64>,
    /// Fixed-effect stratum, e.g. the randomization block.
    pub group: Option<String>,
}

impl BeliefRecord {
    /// A record with only the always-required fields set.
    pub fn new(id: impl Into<String>, prior: f64, posterior: f64, outcome_post: f64) -> Self {
        BeliefRecord {
            id: id.into(),
            arm: None,
            prior,
            prior_var: None,
            posterior,
            signal: None,
            signal_high: None,
            signal_low: None,
            outcome_pre: None,
            outcome_post,
            covariates: Vec::new(),
            group: None,
        }
    }
}

/// Analysis columns computed once at validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedColumns {
    /// posterior − prior
    pub delta_x: f64,
    /// outcome_post − outcome_pre (panel only)
    pub delta_y: Option<f64>,
    /// S(A) − prior in passive designs, S(A) − S(B) in active designs.
    pub exposure: Option<f64>,
    pub treat: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("record `{id}`: missing required field `{field}`")]
    MissingField { id: String, field: &'static str },
    #[error("record `{id}`: field `{field}` must be absent ({reason})")]
    UnexpectedField {
        id: String,
        field: &'static str,
        reason: &'static str,
    },
    #[error("record `{id}`: field `{field}` is inconsistent: {reason}")]
    InconsistentField {
        id: String,
        field: &'static str,
        reason: String,
    },
    #[error("record `{id}`: field `{field}` has invalid value {value}")]
    InvalidValue {
        id: String,
        field: &'static str,
        value: f64,
    },
    #[error("record `{id}`: expected {expected} covariates, found {found}")]
    CovariateSchema { id: String, expected: usize, found: usize },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
}

/// A validated experiment sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    design: Design,
    covariate_names: Vec<String>,
    records: Vec<BeliefRecord>,
    derived: Vec<DerivedColumns>,
    group_levels: Vec<String>,
    group_codes: Option<Vec<u32>>,
}

impl Dataset {
    pub fn design(&self) -> Design {
        self.design
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[BeliefRecord] {
        &self.records
    }

    pub fn derived(&self) -> &[DerivedColumns] {
        &self.derived
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Sorted distinct group labels. Empty when the dataset has no groups.
    pub fn group_levels(&self) -> &[String] {
        &self.group_levels
    }

    /// Per-record group code, indexing into [`Dataset::group_levels`].
    /// Codes follow sorted label order.
    pub fn group_codes(&self) -> Option<&[u32]> {
        self.group_codes.as_deref()
    }

    pub fn into_records(self) -> Vec<BeliefRecord> {
        self.records
    }

    /// Column of `covariate` values, if the schema declares it.
    pub fn covariate_column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.covariate_names.iter().position(|c| c == name)?;
        Some(self.records.iter().map(|r| r.covariates[k]).collect())
    }

    pub fn posterior(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.posterior).collect()
    }

    pub fn prior(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.prior).collect()
    }

    pub fn outcome(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.outcome_post).collect()
    }

    pub fn treat(&self) -> Vec<bool> {
        self.derived.iter().map(|d| d.treat).collect()
    }

    /// Share of records in arm A.
    pub fn treated_share(&self) -> f64 {
        let t = self.derived.iter().filter(|d| d.treat).count();
        t as f64 / self.len() as f64
    }
}

fn check_finite(id: &str, field: &'static str, v: f64) -> Result<(), DataError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(DataError::InvalidValue {
            id: id.to_string(),
            field,
            value: v,
        })
    }
}

fn require<T: Copy>(id: &str, field: &'static str, v: Option<T>) -> Result<T, DataError> {
    v.ok_or_else(|| DataError::MissingField {
        id: id.to_string(),
        field,
    })
}

fn validate_record(r: &BeliefRecord, design: Design, n_cov: usize) -> Result<DerivedColumns, DataError> {
    let id = r.id.as_str();
    check_finite(id, "prior", r.prior)?;
    check_finite(id, "posterior", r.posterior)?;
    check_finite(id, "outcome_post", r.outcome_post)?;
    for (field, v) in [
        ("prior_var", r.prior_var),
        ("signal", r.signal),
        ("signal_high", r.signal_high),
        ("signal_low", r.signal_low),
        ("outcome_pre", r.outcome_pre),
    ] {
        if let Some(v) = v {
            check_finite(id, field, v)?;
        }
    }
    if let Some(v) = r.prior_var {
        if v < 0.0 {
            return Err(DataError::InvalidValue {
                id: id.to_string(),
                field: "prior_var",
                value: v,
            });
        }
    }
    if r.covariates.len() != n_cov {
        return Err(DataError::CovariateSchema {
            id: id.to_string(),
            expected: n_cov,
            found: r.covariates.len(),
        });
    }
    for &c in &r.covariates {
        check_finite(id, "covariates", c)?;
    }

    let treat = r.arm == Some(Arm::A);
    let delta_x = r.posterior - r.prior;
    let mismatch = |field: &'static str, what: &str| DataError::InconsistentField {
        id: id.to_string(),
        field,
        reason: format!("signal must equal {what} for this arm"),
    };

    let derived = match design {
        Design::Panel => {
            let pre = require(id, "outcome_pre", r.outcome_pre)?;
            let exposure = r.signal_high.or(if treat { r.signal } else { None });
            DerivedColumns {
                delta_x,
                delta_y: Some(r.outcome_post - pre),
                exposure: exposure.map(|s| s - r.prior),
                treat,
            }
        }
        Design::Active => {
            let arm = require(id, "arm", r.arm)?;
            let signal = require(id, "signal", r.signal)?;
            match arm {
                Arm::A => {
                    if let Some(h) = r.signal_high {
                        if h != signal {
                            return Err(mismatch("signal", "signal_high"));
                        }
                    }
                }
                Arm::B => {
                    if let Some(l) = r.signal_low {
                        if l != signal {
                            return Err(mismatch("signal", "signal_low"));
                        }
                    }
                }
            }
            let high = r.signal_high.or(if treat { Some(signal) } else { None });
            let low = r.signal_low.or(if treat { None } else { Some(signal) });
            DerivedColumns {
                delta_x,
                delta_y: None,
                exposure: high.zip(low).map(|(h, l)| h - l),
                treat,
            }
        }
        Design::Passive => {
            let arm = require(id, "arm", r.arm)?;
            match arm {
                Arm::A => {
                    let signal = require(id, "signal", r.signal)?;
                    if let Some(h) = r.signal_high {
                        if h != signal {
                            return Err(mismatch("signal", "signal_high"));
                        }
                    }
                }
                Arm::B => {
                    if r.signal.is_some() {
                        return Err(DataError::UnexpectedField {
                            id: id.to_string(),
                            field: "signal",
                            reason: "passive control arm sees no signal",
                        });
                    }
                }
            }
            let high = r.signal_high.or(r.signal);
            DerivedColumns {
                delta_x,
                delta_y: None,
                exposure: high.map(|s| s - r.prior),
                treat,
            }
        }
    };
    Ok(derived)
}

/// Validate raw records for `design` against a covariate schema and compute
/// derived columns.
pub fn validate_dataset_with_schema(
    records: Vec<BeliefRecord>,
    design: Design,
    covariate_names: Vec<String>,
) -> Result<Dataset, DataError> {
    if records.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let mut seen = HashSet::with_capacity(records.len());
    for r in &records {
        if !seen.insert(r.id.as_str()) {
            return Err(DataError::DuplicateId(r.id.clone()));
        }
    }
    let derived = records
        .iter()
        .map(|r| validate_record(r, design, covariate_names.len()))
        .collect::<Result<Vec<_>, _>>()?;

    // Groups are all-or-none so dummy expansion never sees a hidden level.
    let with_group = records.iter().filter(|r| r.group.is_some()).count();
    let (group_levels, group_codes) = if with_group == 0 {
        (Vec::new(), None)
    } else {
        if let Some(r) = records.iter().find(|r| r.group.is_none()) {
            return Err(DataError::MissingField {
                id: r.id.clone(),
                field: "group",
            });
        }
        let levels: Vec<String> = records
            .iter()
            .filter_map(|r| r.group.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let codes = records
            .iter()
            .map(|r| {
                let g = r.group.as_deref().unwrap_or_default();
                levels.binary_search_by(|l| l.as_str().cmp(g)).unwrap_or(0) as u32
            })
            .collect();
        (levels, Some(codes))
    };

    Ok(Dataset {
        design,
        covariate_names,
        records,
        derived,
        group_levels,
        group_codes,
    })
}

/// Validate raw records that carry no covariates.
pub fn validate_dataset(records: Vec<BeliefRecord>, design: Design) -> Result<Dataset, DataError> {
    validate_dataset_with_schema(records, design, Vec::new())
}

/// Average ranks divided by `n`, so outputs lie in (0, 1]. Ties share the
/// mean of the positions they occupy.
pub fn rank_transform(values: &[f64]) -> Result<Vec<f64>, DataError> {
    if values.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(DataError::NonFinite(i));
    }
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end, 1-based
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg / n as f64;
        }
        start = end;
    }
    Ok(ranks)
}

/// Output of every estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimator: String,
    pub point: f64,
    pub se: Option<f64>,
    pub bandwidth: Option<f64>,
    pub n_total: usize,
    pub n_used: usize,
    /// Local-regression grid points dropped (LLS only).
    pub skipped_points: Option<usize>,
    pub seed: Option<u64>,
}

impl EstimateResult {
    pub fn new(estimator: impl Into<String>, point: f64, n_total: usize, n_used: usize) -> Self {
        debug_assert!(n_used <= n_total);
        EstimateResult {
            estimator: estimator.into(),
            point,
            se: None,
            bandwidth: None,
            n_total,
            n_used,
            skipped_points: None,
            seed: None,
        }
    }

    /// Attach a bootstrap standard error and the seed that produced it.
    pub fn with_bootstrap(mut self, se: f64, seed: u64) -> Self {
        self.se = Some(se);
        self.seed = Some(seed);
        self
    }
}
