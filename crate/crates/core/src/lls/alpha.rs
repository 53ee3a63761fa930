//! Learning rates and their proxies.

use crate::datamodel::{rank_transform, Dataset, Design};
use crate::regress::least_squares;

use super::kernel::{rank_weight, window};
use super::LlsError;

/// Observed learning rate (X − X⁰)/(S − X⁰). Values outside [0, 1] are
/// returned as is.
pub fn learning_rate_raw(prior: f64, posterior: f64, signal: f64) -> Result<f64, LlsError> {
    let exposure = signal - prior;
    if exposure == 0.0 {
        return Err(LlsError::ZeroExposure);
    }
    Ok((posterior - prior) / exposure)
}

/// Raw learning rate per record; `None` where no signal was seen or the
/// signal equals the prior.
pub fn raw_alphas(data: &Dataset) -> Vec<Option<f64>> {
    data.records()
        .iter()
        .map(|r| r.signal.and_then(|s| learning_rate_raw(r.prior, r.posterior, s).ok()))
        .collect()
}

fn weight_at(weights: Option<&[f64]>, i: usize) -> f64 {
    weights.map_or(1.0, |w| w[i])
}

/// Kernel-smoothed learning rates: for each record the ratio of
/// kernel-weighted belief updates to kernel-weighted exposures, localized on
/// the rank of the raw learning rate.
pub fn learning_rate_smoothed(
    data: &Dataset,
    smoothing_bandwidth: f64,
    weights: Option<&[f64]>,
) -> Result<Vec<Option<f64>>, LlsError> {
    if data.design() != Design::Active {
        return Err(LlsError::AlphaSourceUnavailable {
            alpha_source: "smoothed",
            design: data.design(),
        });
    }
    let raw = raw_alphas(data);
    let defined: Vec<usize> = (0..data.len()).filter(|&i| raw[i].is_some()).collect();
    if defined.is_empty() {
        return Err(LlsError::DegenerateSmoothing);
    }
    let values: Vec<f64> = defined.iter().map(|&i| raw[i].unwrap_or_default()).collect();
    let ranks = rank_transform(&values)?;
    let mut order: Vec<usize> = (0..defined.len()).collect();
    order.sort_by(|&a, &b| ranks[a].total_cmp(&ranks[b]));
    let sorted: Vec<f64> = order.iter().map(|&k| ranks[k]).collect();

    let recs = data.records();
    let mut out = vec![None; data.len()];
    for (k, &i) in defined.iter().enumerate() {
        let (mut num, mut den) = (0.0, 0.0);
        for pos in window(&sorted, ranks[k], smoothing_bandwidth) {
            let j = defined[order[pos]];
            let kw = rank_weight(sorted[pos], ranks[k], smoothing_bandwidth) * weight_at(weights, j);
            let r = &recs[j];
            let s = r.signal.unwrap_or(r.prior);
            num += kw * (r.posterior - r.prior);
            den += kw * (s - r.prior);
        }
        if den.abs() >= 1e-12 {
            out[i] = Some(num / den);
        }
    }
    if out.iter().all(Option::is_none) {
        return Err(LlsError::DegenerateSmoothing);
    }
    Ok(out)
}

/// Conditioning proxies for designs where controls reveal no learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassiveAlphaMode {
    /// Rank of the prior variance (monotone in α under a common signal variance).
    PriorVarRank,
    /// Linear prediction of the observed α from covariates, fit on treated records.
    Predicted,
}

/// Per-record conditioning value for `mode`.
pub fn infer_alpha_passive(
    data: &Dataset,
    mode: PassiveAlphaMode,
    weights: Option<&[f64]>,
) -> Result<Vec<f64>, LlsError> {
    match mode {
        PassiveAlphaMode::PriorVarRank => {
            let v = prior_variances(data)?;
            Ok(rank_transform(&v)?)
        }
        PassiveAlphaMode::Predicted => predict_alpha(data, weights),
    }
}

pub(crate) fn prior_variances(data: &Dataset) -> Result<Vec<f64>, LlsError> {
    data.records()
        .iter()
        .map(|r| r.prior_var.ok_or_else(|| LlsError::MissingPriorVariance(r.id.clone())))
        .collect()
}

/// Fitted values from a regression of the observed α on a constant and all
/// covariates. Passive designs fit on the treated arm only; random assignment
/// makes the fit valid for controls too.
pub fn predict_alpha(data: &Dataset, weights: Option<&[f64]>) -> Result<Vec<f64>, LlsError> {
    let k = data.covariate_names().len();
    if k == 0 {
        return Err(LlsError::PredictionRankDeficient);
    }
    let raw = raw_alphas(data);
    let fit_rows: Vec<usize> = (0..data.len())
        .filter(|&i| raw[i].is_some() && (data.design() != Design::Passive || data.derived()[i].treat))
        .filter(|&i| weight_at(weights, i) > 0.0)
        .collect();
    let recs = data.records();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; fit_rows.len()]];
    for c in 0..k {
        cols.push(fit_rows.iter().map(|&i| recs[i].covariates[c]).collect());
    }
    let col_refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let y: Vec<f64> = fit_rows.iter().map(|&i| raw[i].unwrap_or_default()).collect();
    let w: Vec<f64> = fit_rows.iter().map(|&i| weight_at(weights, i)).collect();
    let ls = least_squares(&col_refs, &y, Some(&w)).map_err(|_| LlsError::PredictionRankDeficient)?;
    if ls.coefs.iter().any(Option::is_none) {
        return Err(LlsError::PredictionRankDeficient);
    }
    Ok(recs
        .iter()
        .map(|r| {
            let mut row = Vec::with_capacity(k + 1);
            row.push(1.0);
            row.extend_from_slice(&r.covariates);
            ls.predict(&row)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{validate_dataset, validate_dataset_with_schema, Arm, BeliefRecord};

    #[test]
    fn raw_examples() {
        assert_eq!(learning_rate_raw(0.0, 4.0, 10.0).unwrap(), 0.4);
        assert_eq!(learning_rate_raw(2.0, 6.0, 6.0).unwrap(), 1.0);
        assert_eq!(learning_rate_raw(3.0, 3.0, 3.0).unwrap_err(), LlsError::ZeroExposure);
        assert_eq!(learning_rate_raw(0.0, -1.0, 2.0).unwrap(), -0.5);
    }

    fn active(rows: &[(f64, f64, Arm)]) -> Dataset {
        // (prior, posterior, arm) with signals 4 / 0
        let recs = rows
            .iter()
            .enumerate()
            .map(|(i, &(p, x, arm))| BeliefRecord {
                arm: Some(arm),
                signal: Some(if arm == Arm::A { 4.0 } else { 0.0 }),
                signal_high: Some(4.0),
                signal_low: Some(0.0),
                ..BeliefRecord::new(format!("r{i}"), p, x, 0.0)
            })
            .collect();
        validate_dataset(recs, Design::Active).unwrap()
    }

    #[test]
    fn smoothing_full_window_gives_pooled_ratio() {
        let ds = active(&[
            (1.0, 2.0, Arm::A),
            (2.0, 3.5, Arm::A),
            (0.0, 3.0, Arm::A),
            (3.0, 1.0, Arm::B),
        ]);
        let s = learning_rate_smoothed(&ds, 1e9, None).unwrap();
        let pooled = (1.0 + 1.5 + 3.0 - 2.0) / (3.0 + 2.0 + 4.0 - 3.0);
        for v in s {
            assert!((v.unwrap() - pooled).abs() < 1e-9);
        }
    }

    #[test]
    fn smoothing_constant_data() {
        let ds = active(&[(1.0, 2.5, Arm::A), (1.0, 2.5, Arm::A), (1.0, 2.5, Arm::A)]);
        for h in [0.01, 0.5, 5.0] {
            for v in learning_rate_smoothed(&ds, h, None).unwrap() {
                assert!((v.unwrap() - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smoothing_by_hand() {
        // raw α = 0.25, 0.5, 0.75 → ranks 1/3, 2/3, 1
        let ds = active(&[(0.0, 1.0, Arm::A), (0.0, 2.0, Arm::A), (0.0, 3.0, Arm::A)]);
        // h = 1 → half width 0.5; neighbors at distance 1/3 get 0.75(1 − (2/3)²)
        let s = learning_rate_smoothed(&ds, 1.0, None).unwrap();
        let k = 0.75 * (1.0 - (2.0_f64 / 3.0).powi(2));
        let m = 0.75;
        let first = (m * 1.0 + k * 2.0) / (m * 4.0 + k * 4.0);
        let second = (k * 1.0 + m * 2.0 + k * 3.0) / (4.0 * (m + 2.0 * k));
        assert!((s[0].unwrap() - first).abs() < 1e-12);
        assert!((s[1].unwrap() - second).abs() < 1e-12);
    }

    #[test]
    fn prior_var_rank() {
        let recs = [1.0, 4.0, 9.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| BeliefRecord {
                arm: Some(Arm::B),
                prior_var: Some(v),
                ..BeliefRecord::new(format!("r{i}"), 0.0, 0.0, 0.0)
            })
            .collect();
        let ds = validate_dataset(recs, Design::Passive).unwrap();
        let r = infer_alpha_passive(&ds, PassiveAlphaMode::PriorVarRank, None).unwrap();
        assert_eq!(r, vec![1.0 / 3.0, 2.0 / 3.0, 1.0]);
    }

    #[test]
    fn missing_prior_var() {
        let recs = vec![BeliefRecord {
            arm: Some(Arm::B),
            ..BeliefRecord::new("x", 0.0, 0.0, 0.0)
        }];
        let ds = validate_dataset(recs, Design::Passive).unwrap();
        assert_eq!(
            infer_alpha_passive(&ds, PassiveAlphaMode::PriorVarRank, None).unwrap_err(),
            LlsError::MissingPriorVariance("x".into())
        );
    }

    #[test]
    fn prediction_with_oracle_covariate() {
        let alphas = [0.2, 0.35, 0.5, 0.65, 0.8, 0.3, 0.6];
        let recs = alphas
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let treated = i % 2 == 0;
                let prior = i as f64 * 0.1;
                BeliefRecord {
                    arm: Some(if treated { Arm::A } else { Arm::B }),
                    signal: treated.then_some(3.0),
                    signal_high: Some(3.0),
                    covariates: vec![a],
                    ..BeliefRecord::new(
                        format!("r{i}"),
                        prior,
                        if treated { prior + a * (3.0 - prior) } else { prior },
                        0.0,
                    )
                }
            })
            .collect();
        let ds = validate_dataset_with_schema(recs, Design::Passive, vec!["a".into()]).unwrap();
        let fitted = infer_alpha_passive(&ds, PassiveAlphaMode::Predicted, None).unwrap();
        for (f, a) in fitted.iter().zip(alphas) {
            assert!((f - a).abs() < 1e-10);
        }
    }

    #[test]
    fn prediction_without_covariates_fails() {
        let ds = active(&[(1.0, 2.0, Arm::A), (1.0, 0.5, Arm::B)]);
        assert_eq!(predict_alpha(&ds, None).unwrap_err(), LlsError::PredictionRankDeficient);
    }
}
