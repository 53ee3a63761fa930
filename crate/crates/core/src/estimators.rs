//! Standard specifications: first differences, Wald/TSLS, the
//! exposure-weighted passive TSLS, the reduced form, and sample-split TSLS.
//!
//! Each of these estimates E[τᵢ ωᵢ] for design-specific weights ωᵢ that scale
//! with how much the experiment moved person i's beliefs; [`implied_weights`]
//! computes those weights so the gap to the unweighted mean can be inspected.

use thiserror::Error;

use crate::datamodel::{Dataset, DerivedColumns, Design, EstimateResult};
use crate::regress::{least_squares, wls_fit, RegressError, RegressionSpec};
use crate::simlab::SimTruth;

/// First stages smaller than this in magnitude are treated as zero.
pub const WEAK_FIRST_STAGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("estimator requires a {expected} design, dataset is {found}")]
    WrongDesign { expected: &'static str, found: Design },
    #[error("belief changes have zero variance")]
    ZeroVariance,
    #[error("first stage is numerically zero ({0:e})")]
    WeakFirstStage(f64),
    #[error("only one arm has records with positive weight")]
    SingleArm,
    #[error("record `{0}` lacks the arm-A signal needed for its exposure")]
    MissingCounterfactualSignal(String),
    #[error("split subsample is empty")]
    EmptySplit,
    #[error("learning rates are required for {0} weights")]
    MissingAlpha(Design),
    #[error("implied weights sum to zero")]
    ZeroTotalWeight,
    #[error("truth table does not align with the dataset")]
    TruthMismatch,
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("weights length {found} does not match {expected} records")]
    WeightLength { expected: usize, found: usize },
    #[error(transparent)]
    Regress(#[from] RegressError),
}

/// Per-call options shared by the standard estimators.
#[derive(Debug, Clone, Default)]
pub struct EstimatorOptions<'a> {
    /// Per-record weights (bootstrap draws); unit weights when `None`.
    pub weights: Option<&'a [f64]>,
    /// Covariates to partial out, by schema name.
    pub covariates: Vec<String>,
    /// Partial out group fixed effects.
    pub group_effects: bool,
}

impl<'a> EstimatorOptions<'a> {
    pub fn weighted(weights: &'a [f64]) -> Self {
        EstimatorOptions {
            weights: Some(weights),
            ..Default::default()
        }
    }

    fn has_controls(&self) -> bool {
        !self.covariates.is_empty() || self.group_effects
    }
}

fn weight_vec(data: &Dataset, opts: &EstimatorOptions<'_>) -> Result<Vec<f64>, EstimatorError> {
    match opts.weights {
        None => Ok(vec![1.0; data.len()]),
        Some(w) if w.len() == data.len() => Ok(w.to_vec()),
        Some(w) => Err(EstimatorError::WeightLength {
            expected: data.len(),
            found: w.len(),
        }),
    }
}

fn covariate_columns(data: &Dataset, opts: &EstimatorOptions<'_>) -> Result<Vec<Vec<f64>>, EstimatorError> {
    opts.covariates
        .iter()
        .map(|name| {
            data.covariate_column(name)
                .ok_or_else(|| EstimatorError::UnknownCovariate(name.clone()))
        })
        .collect()
}

fn require_design(data: &Dataset, ok: &[Design], expected: &'static str) -> Result<(), EstimatorError> {
    if ok.contains(&data.design()) {
        Ok(())
    } else {
        Err(EstimatorError::WrongDesign {
            expected,
            found: data.design(),
        })
    }
}

/// Weighted arm means of outcome and belief over the rows in `mask`.
#[derive(Debug, Clone, Copy, Default)]
struct ArmMeans {
    y_a: f64,
    y_b: f64,
    x_a: f64,
    x_b: f64,
    w_a: f64,
    w_b: f64,
    n: usize,
}

impl ArmMeans {
    fn collect(data: &Dataset, w: &[f64], mask: impl Fn(usize) -> bool) -> Self {
        let mut m = ArmMeans::default();
        for (i, (r, d)) in data.records().iter().zip(data.derived()).enumerate() {
            if w[i] <= 0.0 || !mask(i) {
                continue;
            }
            m.n += 1;
            if d.treat {
                m.y_a += w[i] * r.outcome_post;
                m.x_a += w[i] * r.posterior;
                m.w_a += w[i];
            } else {
                m.y_b += w[i] * r.outcome_post;
                m.x_b += w[i] * r.posterior;
                m.w_b += w[i];
            }
        }
        m
    }

    fn check_arms(&self) -> Result<(), EstimatorError> {
        if self.w_a > 0.0 && self.w_b > 0.0 {
            Ok(())
        } else {
            Err(EstimatorError::SingleArm)
        }
    }

    fn reduced_form(&self) -> f64 {
        self.y_a / self.w_a - self.y_b / self.w_b
    }

    fn first_stage(&self) -> f64 {
        self.x_a / self.w_a - self.x_b / self.w_b
    }

    fn wald(&self) -> Result<f64, EstimatorError> {
        self.check_arms()?;
        let fs = self.first_stage();
        if fs.abs() < WEAK_FIRST_STAGE || !fs.is_finite() {
            return Err(EstimatorError::WeakFirstStage(fs));
        }
        Ok(self.reduced_form() / fs)
    }
}

/// IV ratio ⟨z̃, ỹ⟩ / ⟨z̃, x̃⟩ after partialling a constant and controls out
/// of y, x and z (weighted).
fn partialled_iv(
    data: &Dataset,
    rows: &[usize],
    w: &[f64],
    y: &[f64],
    x: &[f64],
    z: &[f64],
    opts: &EstimatorOptions<'_>,
) -> Result<f64, EstimatorError> {
    let sub = |v: &[f64]| -> Vec<f64> { rows.iter().map(|&i| v[i]).collect() };
    let ws = sub(w);
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; rows.len()]];
    for c in covariate_columns(data, opts)? {
        cols.push(sub(&c));
    }
    if opts.group_effects {
        if let Some(codes) = data.group_codes() {
            let mut levels: Vec<u32> = rows.iter().map(|&i| codes[i]).collect();
            levels.sort_unstable();
            levels.dedup();
            for &lvl in levels.iter().skip(1) {
                cols.push(rows.iter().map(|&i| f64::from(u8::from(codes[i] == lvl))).collect());
            }
        }
    }
    let col_refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let resid = |v: &[f64]| -> Result<Vec<f64>, EstimatorError> {
        let vs = sub(v);
        let ls = least_squares(&col_refs, &vs, Some(&ws))?;
        Ok((0..rows.len())
            .map(|k| {
                let row: Vec<f64> = cols.iter().map(|c| c[k]).collect();
                vs[k] - ls.predict(&row)
            })
            .collect())
    };
    let (yr, xr, zr) = (resid(y)?, resid(x)?, resid(z)?);
    let num: f64 = (0..rows.len()).map(|k| ws[k] * zr[k] * yr[k]).sum();
    let den: f64 = (0..rows.len()).map(|k| ws[k] * zr[k] * xr[k]).sum();
    let scale: f64 = ws.iter().sum();
    if (den / scale).abs() < WEAK_FIRST_STAGE || !den.is_finite() {
        return Err(EstimatorError::WeakFirstStage(den / scale));
    }
    Ok(num / den)
}

fn positive_rows(w: &[f64]) -> Vec<usize> {
    (0..w.len()).filter(|&i| w[i] > 0.0).collect()
}

/// Regression of ΔY on ΔX with a constant; the constant absorbs the time effect.
pub fn panel_fd(data: &Dataset, opts: &EstimatorOptions<'_>) -> Result<EstimateResult, EstimatorError> {
    require_design(data, &[Design::Panel], "panel")?;
    let w = weight_vec(data, opts)?;
    let dx: Vec<f64> = data.derived().iter().map(|d| d.delta_x).collect();
    let dy: Vec<f64> = data.derived().iter().map(|d| d.delta_y.unwrap_or(f64::NAN)).collect();
    let covs = covariate_columns(data, opts)?;
    let mut spec = RegressionSpec::new(&dy, &dx).weights(&w);
    for c in &covs {
        spec = spec.control(c);
    }
    if opts.group_effects {
        if let Some(codes) = data.group_codes() {
            spec = spec.categorical(codes);
        }
    }
    let fit = wls_fit(&spec).map_err(|e| match e {
        RegressError::RankDeficient => EstimatorError::ZeroVariance,
        other => other.into(),
    })?;
    Ok(EstimateResult::new("panel_fd", fit.coef, data.len(), fit.n))
}

/// Mean belief difference between arms.
pub fn first_stage(data: &Dataset, opts: &EstimatorOptions<'_>) -> Result<f64, EstimatorError> {
    let w = weight_vec(data, opts)?;
    let m = ArmMeans::collect(data, &w, |_| true);
    m.check_arms()?;
    Ok(m.first_stage())
}

/// Wald ratio of arm contrasts in outcomes and beliefs.
pub fn wald_active(data: &Dataset, opts: &EstimatorOptions<'_>) -> Result<EstimateResult, EstimatorError> {
    require_design(data, &[Design::Active], "active")?;
    let w = weight_vec(data, opts)?;
    let m = ArmMeans::collect(data, &w, |_| true);
    let point = if opts.has_controls() {
        m.check_arms()?;
        let t: Vec<f64> = data.derived().iter().map(|d| f64::from(u8::from(d.treat))).collect();
        partialled_iv(
            data,
            &positive_rows(&w),
            &w,
            &data.outcome(),
            &data.posterior(),
            &t,
            opts,
        )?
    } else {
        m.wald()?
    };
    Ok(EstimateResult::new("wald", point, data.len(), m.n))
}

/// Difference in mean outcomes between arms (the OLS slope on the treatment dummy).
pub fn reduced_form(data: &Dataset, opts: &EstimatorOptions<'_>) -> Result<EstimateResult, EstimatorError> {
    require_design(data, &[Design::Active, Design::Passive], "active or passive")?;
    let w = weight_vec(data, opts)?;
    let m = ArmMeans::collect(data, &w, |_| true);
    m.check_arms()?;
    let point = if opts.has_controls() {
        let t: Vec<f64> = data.derived().iter().map(|d| f64::from(u8::from(d.treat))).collect();
        let y = data.outcome();
        let covs = covariate_columns(data, opts)?;
        let mut spec = RegressionSpec::new(&y, &t).weights(&w);
        for c in &covs {
            spec = spec.control(c);
        }
        if opts.group_effects {
            if let Some(codes) = data.group_codes() {
                spec = spec.categorical(codes);
            }
        }
        wls_fit(&spec)?.coef
    } else {
        m.reduced_form()
    };
    Ok(EstimateResult::new("reduced_form", point, data.len(), m.n))
}

fn exposures(data: &Dataset) -> Result<Vec<f64>, EstimatorError> {
    data.records()
        .iter()
        .zip(data.derived())
        .map(|(r, d)| {
            d.exposure
                .ok_or_else(|| EstimatorError::MissingCounterfactualSignal(r.id.clone()))
        })
        .collect()
}

/// TSLS with the recentered exposure instrument (Tᵢ − T̄)(Sᵢ(A) − X⁰ᵢ), where
/// T̄ is the (weighted) sample treated share.
pub fn tsls_passive_exposure(data: &Dataset, opts: &EstimatorOptions<'_>) -> Result<EstimateResult, EstimatorError> {
    require_design(data, &[Design::Passive], "passive")?;
    let w = weight_vec(data, opts)?;
    let e = exposures(data)?;
    let rows = positive_rows(&w);
    let wsum: f64 = rows.iter().map(|&i| w[i]).sum();
    let share = rows
        .iter()
        .filter(|&&i| data.derived()[i].treat)
        .map(|&i| w[i])
        .sum::<f64>()
        / wsum;
    if share <= 0.0 || share >= 1.0 {
        return Err(EstimatorError::SingleArm);
    }
    let z: Vec<f64> = data
        .derived()
        .iter()
        .zip(&e)
        .map(|(d, e)| (f64::from(u8::from(d.treat)) - share) * e)
        .collect();
    let point = partialled_iv(data, &rows, &w, &data.outcome(), &data.posterior(), &z, opts)?;
    Ok(EstimateResult::new("tsls_exposure", point, data.len(), rows.len()))
}

/// Which side of the signal the prior lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSide {
    /// Prior above the signal: Sᵢ(A) − X⁰ᵢ < 0.
    Above,
    /// Prior below the signal: Sᵢ(A) − X⁰ᵢ > 0.
    Below,
}

impl SplitSide {
    fn contains(self, gap: f64) -> bool {
        match self {
            SplitSide::Above => gap < 0.0,
            SplitSide::Below => gap > 0.0,
        }
    }
}

/// Records assigned to `side`. With `prior_available` the split uses
/// Sᵢ(A) − X⁰ᵢ; otherwise Sᵢ(A) − Xᵢ, which has the same sign whenever the
/// posterior lies between prior and signal.
pub fn split_membership(data: &Dataset, side: SplitSide, prior_available: bool) -> Result<Vec<bool>, EstimatorError> {
    require_design(data, &[Design::Passive], "passive")?;
    data.records()
        .iter()
        .zip(data.derived())
        .map(|(r, d): (_, &DerivedColumns)| {
            let s_a = r
                .signal_high
                .or(if d.treat { r.signal } else { None })
                .ok_or_else(|| EstimatorError::MissingCounterfactualSignal(r.id.clone()))?;
            let reference = if prior_available { r.prior } else { r.posterior };
            Ok(side.contains(s_a - reference))
        })
        .collect()
}

/// Wald ratio within one side of the prior/signal split.
pub fn tsls_split(
    data: &Dataset,
    side: SplitSide,
    prior_available: bool,
    opts: &EstimatorOptions<'_>,
) -> Result<EstimateResult, EstimatorError> {
    let member = split_membership(data, side, prior_available)?;
    let w = weight_vec(data, opts)?;
    let m = ArmMeans::collect(data, &w, |i| member[i]);
    if m.n == 0 {
        return Err(EstimatorError::EmptySplit);
    }
    let point = if opts.has_controls() {
        m.check_arms()?;
        let rows: Vec<usize> = (0..data.len()).filter(|&i| member[i] && w[i] > 0.0).collect();
        let t: Vec<f64> = data.derived().iter().map(|d| f64::from(u8::from(d.treat))).collect();
        partialled_iv(data, &rows, &w, &data.outcome(), &data.posterior(), &t, opts)?
    } else {
        m.wald()?
    };
    let name = match side {
        SplitSide::Above => "tsls_split_above",
        SplitSide::Below => "tsls_split_below",
    };
    Ok(EstimateResult::new(name, point, data.len(), m.n))
}

/// Where learning rates for implied weights come from.
#[derive(Debug, Clone, Copy)]
pub enum AlphaInput<'a> {
    /// Latent truth from the simulator (uses true potential signals too).
    Truth(&'a SimTruth),
    /// Per-record estimates; records with `None` are left out.
    Estimated(&'a [Option<f64>]),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSource {
    Truth,
    Estimated,
    /// Panel weights need no learning rates.
    BeliefChanges,
}

impl WeightSource {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightSource::Truth => "truth",
            WeightSource::Estimated => "estimated",
            WeightSource::BeliefChanges => "belief_changes",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub index: usize,
    pub id: String,
    pub unnormalized: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone)]
pub struct WeightTable {
    pub design: Design,
    pub source: WeightSource,
    pub rows: Vec<WeightRow>,
}

impl WeightTable {
    /// Σᵢ vᵢ ωᵢ over the weighted records, with `values` indexed like the dataset.
    pub fn weighted_average(&self, values: &[f64]) -> f64 {
        self.rows.iter().map(|r| r.normalized * values[r.index]).sum()
    }
}

/// Per-record weights that a design's standard estimand places on τᵢ:
/// panel ΔXᵢ(ΔXᵢ − mean ΔX), active αᵢ(Sᵢ(A) − Sᵢ(B)), passive αᵢ(Sᵢ(A) − X⁰ᵢ)².
pub fn implied_weights(data: &Dataset, alpha: AlphaInput<'_>) -> Result<WeightTable, EstimatorError> {
    let design = data.design();
    let mut raw: Vec<(usize, f64)> = Vec::with_capacity(data.len());
    let source = match design {
        Design::Panel => {
            let mean = data.derived().iter().map(|d| d.delta_x).sum::<f64>() / data.len() as f64;
            raw.extend(
                data.derived()
                    .iter()
                    .enumerate()
                    .map(|(i, d)| (i, d.delta_x * (d.delta_x - mean))),
            );
            WeightSource::BeliefChanges
        }
        Design::Active | Design::Passive => {
            let passive = design == Design::Passive;
            match alpha {
                AlphaInput::None => return Err(EstimatorError::MissingAlpha(design)),
                AlphaInput::Truth(truth) => {
                    if truth.len() != data.len() || truth.rows.iter().zip(data.records()).any(|(t, r)| t.id != r.id) {
                        return Err(EstimatorError::TruthMismatch);
                    }
                    for (i, t) in truth.rows.iter().enumerate() {
                        let w = if passive {
                            t.alpha * (t.signal_a - t.prior).powi(2)
                        } else {
                            t.alpha * (t.signal_a - t.signal_b)
                        };
                        raw.push((i, w));
                    }
                    WeightSource::Truth
                }
                AlphaInput::Estimated(alphas) => {
                    if alphas.len() != data.len() {
                        return Err(EstimatorError::WeightLength {
                            expected: data.len(),
                            found: alphas.len(),
                        });
                    }
                    let e = exposures(data)?;
                    for (i, a) in alphas.iter().enumerate() {
                        if let Some(a) = a {
                            raw.push((i, if passive { a * e[i] * e[i] } else { a * e[i] }));
                        }
                    }
                    WeightSource::Estimated
                }
            }
        }
    };
    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    if total == 0.0 || !total.is_finite() {
        return Err(EstimatorError::ZeroTotalWeight);
    }
    let rows = raw
        .into_iter()
        .map(|(i, w)| WeightRow {
            index: i,
            id: data.records()[i].id.clone(),
            unnormalized: w,
            normalized: w / total,
        })
        .collect();
    Ok(WeightTable { design, source, rows })
}
