//! Sample restrictions applied before localization.

use crate::datamodel::{Dataset, Design};

use super::{LlsConfig, LlsError};

/// Retained records and why the rest were dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrimReport {
    pub retained: Vec<usize>,
    /// Panel: nonzero belief changes smaller than `trim_delta`.
    pub small_update: usize,
    /// Learning rate (or prior variance) at or below its threshold.
    pub low_alpha: usize,
    /// Squared exposure at or below `trim_exposure_sq`.
    pub small_exposure: usize,
    /// No conditioning value could be formed.
    pub undefined: usize,
}

impl TrimReport {
    pub fn excluded(&self) -> usize {
        self.small_update + self.low_alpha + self.small_exposure + self.undefined
    }
}

/// Apply the design's trimming rules. `conditioning` holds the per-record
/// learning rate the α rule is checked against; pass `None` to skip that rule.
/// Records whose entry is `None` are counted as undefined.
pub fn trim(data: &Dataset, config: &LlsConfig, conditioning: Option<&[Option<f64>]>) -> Result<TrimReport, LlsError> {
    let mut report = TrimReport::default();
    for (i, (r, d)) in data.records().iter().zip(data.derived()).enumerate() {
        if data.design() == Design::Panel {
            if d.delta_x != 0.0 && d.delta_x.abs() < config.trim_delta {
                report.small_update += 1;
                continue;
            }
            report.retained.push(i);
            continue;
        }
        let exposure = d
            .exposure
            .ok_or_else(|| LlsError::MissingCounterfactualSignal(r.id.clone()))?;
        if let Some(cond) = conditioning {
            match cond[i] {
                None => {
                    report.undefined += 1;
                    continue;
                }
                Some(a) if a <= config.trim_alpha => {
                    report.low_alpha += 1;
                    continue;
                }
                Some(_) => {}
            }
        }
        if exposure * exposure <= config.trim_exposure_sq {
            report.small_exposure += 1;
            continue;
        }
        report.retained.push(i);
    }
    if report.retained.is_empty() {
        return Err(LlsError::AllTrimmed);
    }
    Ok(report)
}
