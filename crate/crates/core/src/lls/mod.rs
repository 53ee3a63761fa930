//! Local least squares.
//!
//! Beliefs are regressed on outcomes within kernel neighborhoods of people
//! who update alike, so the only variation left in beliefs comes from the
//! randomized information. Averaging the local estimates over the sample
//! recovers the unweighted average partial effect.

mod alpha;
mod kernel;
mod local;
mod trim;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{rank_transform, DataError, Dataset, Design, EstimateResult};
use crate::regress::RegressError;

pub use alpha::{
    infer_alpha_passive, learning_rate_raw, learning_rate_smoothed, predict_alpha, raw_alphas, PassiveAlphaMode,
};
pub use kernel::{epanechnikov, rank_weight, window};
pub use local::{LocalEstimate, LocalProblem};
pub use trim::{trim, TrimReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlsError {
    #[error("invalid LLS setting `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("signal equals prior; learning rate undefined")]
    ZeroExposure,
    #[error("every smoothed learning rate has a vanishing denominator")]
    DegenerateSmoothing,
    #[error("record `{0}` has no prior variance")]
    MissingPriorVariance(String),
    #[error("learning-rate prediction is rank deficient")]
    PredictionRankDeficient,
    #[error("{alpha_source} learning rates are unavailable in {design} designs")]
    AlphaSourceUnavailable { alpha_source: &'static str, design: Design },
    #[error("record `{0}` lacks the arm-A signal needed for its exposure")]
    MissingCounterfactualSignal(String),
    #[error("trimming removed every record")]
    AllTrimmed,
    #[error("neighborhood has too little variation in beliefs")]
    InsufficientNeighborhood,
    #[error("local regression is rank deficient")]
    RankDeficient,
    #[error("every local regression was skipped")]
    AllPointsSkipped,
    #[error("{skipped} of {total} local regressions were skipped")]
    TooManySkipped { skipped: usize, total: usize },
    #[error("weights length {found} does not match {expected} records")]
    WeightLength { expected: usize, found: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Regress(#[from] RegressError),
}

/// What the neighborhoods condition on in active and passive designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSource {
    Raw,
    Smoothed,
    Predicted,
    PriorVarRank,
}

impl AlphaSource {
    pub fn as_str(self) -> &'static str {
        match self {
            AlphaSource::Raw => "raw",
            AlphaSource::Smoothed => "smoothed",
            AlphaSource::Predicted => "predicted",
            AlphaSource::PriorVarRank => "prior_var_rank",
        }
    }
}

impl std::str::FromStr for AlphaSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raw" => Ok(AlphaSource::Raw),
            "smoothed" => Ok(AlphaSource::Smoothed),
            "predicted" => Ok(AlphaSource::Predicted),
            "prior_var_rank" => Ok(AlphaSource::PriorVarRank),
            other => Err(format!("unknown alpha source `{other}`")),
        }
    }
}

/// Inverse squared exposure weights in the local regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureWeighting {
    /// Passive designs always; active designs when signal gaps vary.
    Auto,
    Always,
    Never,
}

impl std::str::FromStr for ExposureWeighting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto" => Ok(ExposureWeighting::Auto),
            "always" => Ok(ExposureWeighting::Always),
            "never" => Ok(ExposureWeighting::Never),
            other => Err(format!("unknown exposure weighting `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlsConfig {
    /// Share of the rank scale covered by the kernel window.
    pub bandwidth: f64,
    /// Panel: drop nonzero belief changes smaller than this in magnitude.
    pub trim_delta: f64,
    /// Drop learning rates at or below this.
    pub trim_alpha: f64,
    /// Drop squared exposures at or below this.
    pub trim_exposure_sq: f64,
    pub alpha_source: AlphaSource,
    pub smoothing_bandwidth: f64,
    pub cape_bins: usize,
    /// Abort when more than this share of local regressions is skipped.
    pub max_skip_fraction: f64,
    pub exposure_weighting: ExposureWeighting,
    /// Add group fixed effects to each local regression.
    pub group_controls: bool,
}

impl Default for LlsConfig {
    fn default() -> Self {
        LlsConfig {
            bandwidth: 0.05,
            trim_delta: 0.025,
            trim_alpha: 0.0,
            trim_exposure_sq: 0.01,
            alpha_source: AlphaSource::Raw,
            smoothing_bandwidth: 0.05,
            cape_bins: 10,
            max_skip_fraction: 0.2,
            exposure_weighting: ExposureWeighting::Auto,
            group_controls: false,
        }
    }
}

impl LlsConfig {
    pub fn validate(&self) -> Result<(), LlsError> {
        let bad = |field, reason: &str| {
            Err(LlsError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.bandwidth > 0.0 && self.bandwidth <= 1.0) {
            return bad("bandwidth", "must lie in (0, 1]");
        }
        if !(self.trim_delta >= 0.0) {
            return bad("trim_delta", "must be nonnegative");
        }
        if !self.trim_alpha.is_finite() {
            return bad("trim_alpha", "must be finite");
        }
        if !(self.trim_exposure_sq >= 0.0) {
            return bad("trim_exposure_sq", "must be nonnegative");
        }
        if !(self.smoothing_bandwidth > 0.0) {
            return bad("smoothing_bandwidth", "must be positive");
        }
        if self.cape_bins == 0 {
            return bad("cape_bins", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.max_skip_fraction) {
            return bad("max_skip_fraction", "must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Local estimate at one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterEstimate {
    pub index: usize,
    pub rank: f64,
    /// `None` when the local regression was skipped.
    pub local: Option<LocalEstimate>,
}

/// Local estimates at every observation used as a center.
#[derive(Debug, Clone)]
pub struct LocalEstimates {
    pub design: Design,
    pub bandwidth: f64,
    pub trim: TrimReport,
    pub centers: Vec<CenterEstimate>,
    /// Per-record bootstrap weights of the centers (all ones without bootstrap).
    center_weights: Vec<f64>,
}

impl LocalEstimates {
    pub fn skipped(&self) -> usize {
        self.centers.iter().filter(|c| c.local.is_none()).count()
    }

    fn check_skips(&self, config: &LlsConfig) -> Result<(), LlsError> {
        let total = self.centers.len();
        let skipped = self.skipped();
        if skipped == total {
            return Err(LlsError::AllPointsSkipped);
        }
        if skipped as f64 > config.max_skip_fraction * total as f64 {
            return Err(LlsError::TooManySkipped { skipped, total });
        }
        Ok(())
    }

    /// Weighted mean of local estimates whose centers pass `keep`.
    fn mean_where(&self, keep: impl Fn(&CenterEstimate) -> bool) -> Option<(f64, usize)> {
        let (mut num, mut den, mut count) = (0.0, 0.0, 0);
        for (c, &w) in self.centers.iter().zip(&self.center_weights) {
            if let (Some(l), true) = (c.local, keep(c)) {
                num += w * l.estimate;
                den += w;
                count += 1;
            }
        }
        (den > 0.0).then(|| (num / den, count))
    }
}

/// Learning rates for trimming (absent in panels) and the ranking variable.
type Conditioning = (Option<Vec<Option<f64>>>, Vec<f64>);

/// Per-record conditioning values for trimming (α) and for ranking.
fn conditioning(data: &Dataset, config: &LlsConfig, weights: Option<&[f64]>) -> Result<Conditioning, LlsError> {
    let unavailable = |alpha_source| LlsError::AlphaSourceUnavailable {
        alpha_source,
        design: data.design(),
    };
    let alphas = match config.alpha_source {
        AlphaSource::Raw if data.design() == Design::Active => raw_alphas(data),
        AlphaSource::Raw => return Err(unavailable("raw")),
        AlphaSource::Smoothed => learning_rate_smoothed(data, config.smoothing_bandwidth, weights)?,
        AlphaSource::Predicted => predict_alpha(data, weights)?.into_iter().map(Some).collect(),
        AlphaSource::PriorVarRank => {
            let v = alpha::prior_variances(data)?;
            return Ok((Some(v.iter().map(|&v| Some(v)).collect()), v));
        }
    };
    let values = alphas.iter().map(|a| a.unwrap_or(f64::NAN)).collect();
    Ok((Some(alphas), values))
}

fn check_weights(data: &Dataset, weights: Option<&[f64]>) -> Result<(), LlsError> {
    match weights {
        Some(w) if w.len() != data.len() => Err(LlsError::WeightLength {
            expected: data.len(),
            found: w.len(),
        }),
        _ => Ok(()),
    }
}

/// Trim and build the local regression problem.
fn prepare<'a>(
    data: &'a Dataset,
    config: &LlsConfig,
    given: Option<&[Option<f64>]>,
    weights: Option<&[f64]>,
) -> Result<(TrimReport, LocalProblem<'a>), LlsError> {
    if data.design() == Design::Panel {
        let report = trim(data, config, None)?;
        let problem = LocalProblem::new(data, config, None, &report.retained, weights)?;
        return Ok((report, problem));
    }
    if let Some(alpha) = given {
        if alpha.len() != data.len() {
            return Err(LlsError::WeightLength {
                expected: data.len(),
                found: alpha.len(),
            });
        }
        let values: Vec<f64> = alpha.iter().map(|a| a.unwrap_or(f64::NAN)).collect();
        let report = trim(data, config, Some(alpha))?;
        let problem = LocalProblem::new(data, config, Some(&values), &report.retained, weights)?;
        return Ok((report, problem));
    }
    let (alpha, values) = conditioning(data, config, weights)?;
    // Prior variances are screened for positivity only; α thresholds do not
    // apply to them.
    let trim_cfg = match config.alpha_source {
        AlphaSource::PriorVarRank => LlsConfig {
            trim_alpha: 0.0,
            ..config.clone()
        },
        _ => config.clone(),
    };
    let report = trim(data, &trim_cfg, alpha.as_deref())?;
    let problem = LocalProblem::new(data, config, Some(&values), &report.retained, weights)?;
    Ok((report, problem))
}

/// Run trimming and evaluate the local regression centered at every eligible
/// observation. Tied ranks share one regression.
pub fn local_estimates(
    data: &Dataset,
    config: &LlsConfig,
    weights: Option<&[f64]>,
) -> Result<LocalEstimates, LlsError> {
    local_estimates_inner(data, config, None, weights)
}

/// [`local_estimates`] conditioning on externally supplied learning rates
/// instead of `config.alpha_source` (active and passive designs).
pub fn local_estimates_given(
    data: &Dataset,
    config: &LlsConfig,
    alpha: &[Option<f64>],
    weights: Option<&[f64]>,
) -> Result<LocalEstimates, LlsError> {
    local_estimates_inner(data, config, Some(alpha), weights)
}

fn local_estimates_inner(
    data: &Dataset,
    config: &LlsConfig,
    given: Option<&[Option<f64>]>,
    weights: Option<&[f64]>,
) -> Result<LocalEstimates, LlsError> {
    config.validate()?;
    check_weights(data, weights)?;
    let (report, problem) = prepare(data, config, given, weights)?;

    let centers: Vec<(usize, f64)> = problem.centers().collect();
    let mut distinct: Vec<f64> = centers.iter().map(|&(_, r)| r).collect();
    distinct.dedup();
    let fits: Vec<Option<LocalEstimate>> = distinct.par_iter().map(|&r| problem.estimate_at(r).ok()).collect();

    let mut out = Vec::with_capacity(centers.len());
    let mut k = 0;
    for &(index, rank) in &centers {
        while distinct[k] != rank {
            k += 1;
        }
        out.push(CenterEstimate {
            index,
            rank,
            local: fits[k],
        });
    }
    let center_weights = out.iter().map(|c| weights.map_or(1.0, |w| w[c.index])).collect();
    Ok(LocalEstimates {
        design: data.design(),
        bandwidth: config.bandwidth,
        trim: report,
        centers: out,
        center_weights,
    })
}

/// Local estimate at a single point of the rank scale.
pub fn local_cape_point(data: &Dataset, config: &LlsConfig, center_rank: f64) -> Result<LocalEstimate, LlsError> {
    config.validate()?;
    let (_, problem) = prepare(data, config, None, None)?;
    problem.estimate_at(center_rank)
}

/// Average partial effect: the mean of local estimates over observations.
pub fn estimate_ape(data: &Dataset, config: &LlsConfig, weights: Option<&[f64]>) -> Result<EstimateResult, LlsError> {
    ape_from(data, config, local_estimates(data, config, weights)?)
}

/// [`estimate_ape`] with externally supplied learning rates.
pub fn estimate_ape_given(
    data: &Dataset,
    config: &LlsConfig,
    alpha: &[Option<f64>],
    weights: Option<&[f64]>,
) -> Result<EstimateResult, LlsError> {
    ape_from(data, config, local_estimates_given(data, config, alpha, weights)?)
}

fn ape_from(data: &Dataset, config: &LlsConfig, local: LocalEstimates) -> Result<EstimateResult, LlsError> {
    local.check_skips(config)?;
    let (point, _) = local.mean_where(|_| true).ok_or(LlsError::AllPointsSkipped)?;
    let mut res = EstimateResult::new("lls_ape", point, data.len(), local.trim.retained.len());
    res.bandwidth = Some(config.bandwidth);
    res.skipped_points = Some(local.skipped());
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapeBin {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    /// Bin midpoint on the rank scale.
    pub grid_value: f64,
    pub estimate: f64,
    pub se: Option<f64>,
    /// Centers averaged into this bin.
    pub n_points: usize,
    /// Smallest neighborhood among those centers.
    pub n_local: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapeCurve {
    pub design: Design,
    pub bandwidth: f64,
    pub bins: Vec<CapeBin>,
    pub skipped_points: usize,
}

impl CapeCurve {
    /// Estimates indexed by bin, `NaN` where a bin was dropped.
    pub fn dense(&self, n_bins: usize) -> Vec<f64> {
        let mut out = vec![f64::NAN; n_bins];
        for b in &self.bins {
            out[b.index] = b.estimate;
        }
        out
    }
}

fn bin_of(rank: f64, n_bins: usize) -> usize {
    ((rank * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1
}

/// Conditional average partial effects by equal-width bins of the rank
/// scale. A bin's estimate is the plain mean of local estimates centered in
/// it; bins with fewer than two centers are dropped.
pub fn estimate_cape(data: &Dataset, config: &LlsConfig, weights: Option<&[f64]>) -> Result<CapeCurve, LlsError> {
    let local = local_estimates(data, config, weights)?;
    local.check_skips(config)?;
    let b = config.cape_bins;
    let mut bins = Vec::new();
    for k in 0..b {
        let keep = |c: &CenterEstimate| bin_of(c.rank, b) == k;
        let Some((estimate, n_points)) = local.mean_where(keep) else {
            continue;
        };
        if n_points < 2 {
            continue;
        }
        let n_local = local
            .centers
            .iter()
            .filter(|c| keep(c))
            .filter_map(|c| c.local.map(|l| l.n_local))
            .min()
            .unwrap_or(0);
        bins.push(CapeBin {
            index: k,
            lower: k as f64 / b as f64,
            upper: (k + 1) as f64 / b as f64,
            grid_value: (k as f64 + 0.5) / b as f64,
            estimate,
            se: None,
            n_points,
            n_local,
        });
    }
    if bins.is_empty() {
        return Err(LlsError::AllPointsSkipped);
    }
    Ok(CapeCurve {
        design: data.design(),
        bandwidth: config.bandwidth,
        bins,
        skipped_points: local.skipped(),
    })
}

/// Alternative x-axis for curves conditioned on prior-variance ranks: per
/// bin, the mean rank of the observed learning rate among treated records in
/// that bin (ranks taken over the treated records).
pub fn alpha_rank_axis(data: &Dataset, config: &LlsConfig) -> Result<Vec<Option<f64>>, LlsError> {
    let pv = alpha::prior_variances(data)?;
    let pv_rank = rank_transform(&pv)?;
    let raw = raw_alphas(data);
    let treated: Vec<usize> = (0..data.len())
        .filter(|&i| data.derived()[i].treat && raw[i].is_some())
        .collect();
    let mut sums = vec![(0.0, 0usize); config.cape_bins];
    if !treated.is_empty() {
        let a: Vec<f64> = treated.iter().map(|&i| raw[i].unwrap_or_default()).collect();
        let a_rank = rank_transform(&a)?;
        for (k, &i) in treated.iter().enumerate() {
            let s = &mut sums[bin_of(pv_rank[i], config.cape_bins)];
            s.0 += a_rank[k];
            s.1 += 1;
        }
    }
    Ok(sums.into_iter().map(|(s, c)| (c > 0).then(|| s / c as f64)).collect())
}
