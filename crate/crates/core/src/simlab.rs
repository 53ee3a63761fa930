//! Synthetic experiment populations with known ground truth.
//!
//! Beliefs follow normal-normal Bayesian updating. Before the experiment each
//! person may buy costly signals; under quadratic loss the risk of acting on a
//! belief with variance σ² is τ²σ², so people with large |τ| buy more signals,
//! hold tighter priors, and update less when the experiment shows them
//! information. That negative link between learning rates and belief effects
//! is what attenuates the standard estimators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{rank_transform, validate_dataset_with_schema, Arm, BeliefRecord, DataError, Dataset, Design};

/// Safety bound on signal purchases.
pub const MAX_SIGNALS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("signal variance must be positive, got {0}")]
    NonPositiveSignalVariance(f64),
    #[error("information acquisition did not stop within {0} signals")]
    IterationCapExceeded(u64),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("invalid distribution spec for `{name}`: {reason}")]
    InvalidDistributionSpec { name: &'static str, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Posterior from a normal prior and a normal signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub var: f64,
    /// Weight on the signal.
    pub alpha: f64,
}

pub fn bayesian_update(prior_mean: f64, prior_var: f64, signal: f64, signal_var: f64) -> Result<Posterior, SimError> {
    if !(signal_var > 0.0) || !signal_var.is_finite() {
        return Err(SimError::NonPositiveSignalVariance(signal_var));
    }
    if !(prior_var >= 0.0) || !prior_var.is_finite() {
        return Err(SimError::InvalidParameter {
            name: "prior_var",
            reason: format!("must be finite and non-negative, got {prior_var}"),
        });
    }
    if !prior_mean.is_finite() || !signal.is_finite() {
        return Err(SimError::InvalidParameter {
            name: "prior_mean/signal",
            reason: "must be finite".into(),
        });
    }
    let alpha = prior_var / (prior_var + signal_var);
    Ok(Posterior {
        mean: (1.0 - alpha) * prior_mean + alpha * signal,
        var: prior_var * signal_var / (prior_var + signal_var),
        alpha,
    })
}

/// Outcome of pre-experiment information acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acquisition {
    pub final_var: f64,
    pub n_signals: u64,
    pub alpha: f64,
}

fn next_var(var: f64, signal_var: f64) -> f64 {
    var * signal_var / (var + signal_var)
}

/// Buy signals while the next one lowers quadratic-loss risk τ²σ² by more
/// than `cost`. On return, τ²(σ² − σ²₊) ≤ cost.
pub fn acquire_information(tau: f64, sigma_x0: f64, sigma_s: f64, cost: f64) -> Result<Acquisition, SimError> {
    if !(sigma_s > 0.0) || !sigma_s.is_finite() {
        return Err(SimError::NonPositiveSignalVariance(sigma_s));
    }
    if !(sigma_x0 >= 0.0) || !sigma_x0.is_finite() {
        return Err(SimError::InvalidParameter {
            name: "sigma_x0",
            reason: format!("must be finite and non-negative, got {sigma_x0}"),
        });
    }
    if !(cost >= 0.0) || !tau.is_finite() {
        return Err(SimError::InvalidParameter {
            name: "cost",
            reason: format!("cost must be non-negative and tau finite (cost {cost}, tau {tau})"),
        });
    }
    let tau2 = tau * tau;
    let mut var = sigma_x0;
    let mut bought = 0u64;
    loop {
        let next = next_var(var, sigma_s);
        if tau2 * (var - next) <= cost {
            break;
        }
        if bought == MAX_SIGNALS {
            return Err(SimError::IterationCapExceeded(MAX_SIGNALS));
        }
        var = next;
        bought += 1;
    }
    Ok(Acquisition {
        final_var: var,
        n_signals: bought,
        alpha: var / (var + sigma_s),
    })
}

/// Scalar distribution for population draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DistSpec {
    Point(f64),
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

impl DistSpec {
    pub fn validate(&self, name: &'static str) -> Result<(), SimError> {
        let bad = |reason: &str| {
            Err(SimError::InvalidDistributionSpec {
                name,
                reason: reason.to_string(),
            })
        };
        match *self {
            DistSpec::Point(v) if !v.is_finite() => bad("point mass must be finite"),
            DistSpec::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                bad("uniform needs finite lo <= hi")
            }
            DistSpec::Normal { mean, sd } if !(mean.is_finite() && sd.is_finite() && sd >= 0.0) => {
                bad("normal needs finite mean and sd >= 0")
            }
            _ => Ok(()),
        }
    }

    fn non_negative_support(&self) -> bool {
        match *self {
            DistSpec::Point(v) => v >= 0.0,
            DistSpec::Uniform { lo, .. } => lo >= 0.0,
            DistSpec::Normal { sd, mean } => sd == 0.0 && mean >= 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DistSpec::Point(v) => v,
            DistSpec::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..hi)
                }
            }
            DistSpec::Normal { mean, sd } => {
                if sd == 0.0 {
                    mean
                } else {
                    Normal::new(mean, sd).expect("validated normal").sample(rng)
                }
            }
        }
    }
}

impl std::str::FromStr for DistSpec {
    type Err = String;

    /// `point(v)`, `uniform(lo,hi)` or `normal(mean,sd)`; a bare number is a point mass.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(v) = s.parse::<f64>() {
            return Ok(DistSpec::Point(v));
        }
        let (name, rest) = s.split_once('(').ok_or_else(|| format!("bad distribution `{s}`"))?;
        let args = rest
            .strip_suffix(')')
            .ok_or_else(|| format!("bad distribution `{s}`"))?;
        let nums = args
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("bad number in `{s}`: {e}"))?;
        match (name.trim().to_ascii_lowercase().as_str(), nums.as_slice()) {
            ("point", [v]) => Ok(DistSpec::Point(*v)),
            ("uniform", [lo, hi]) => Ok(DistSpec::Uniform { lo: *lo, hi: *hi }),
            ("normal", [mean, sd]) => Ok(DistSpec::Normal { mean: *mean, sd: *sd }),
            _ => Err(format!("unknown distribution `{s}`")),
        }
    }
}

/// How individual belief effects τᵢ are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TauSpec {
    Draw(DistSpec),
    /// τ = `levels[k]` where k counts the `thresholds` that α exceeds.
    /// Requires zero acquisition cost.
    AlphaStep {
        thresholds: Vec<f64>,
        levels: Vec<f64>,
    },
    /// τ = intercept + slope · rank(α). Requires zero acquisition cost.
    AlphaRankLinear {
        intercept: f64,
        slope: f64,
    },
}

/// Signals shown in each arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SignalSpec {
    /// Sᵢ(A) = high, Sᵢ(B) = low for everyone.
    Common { high: f64, low: f64 },
    /// Sᵢ(B) ~ `low`, Sᵢ(A) = Sᵢ(B) + gap + `gap_tau_slope`·τᵢ with gap ~ `gap`.
    /// Passive designs only use Sᵢ(A).
    PerIndividual {
        low: DistSpec,
        gap: DistSpec,
        gap_tau_slope: f64,
    },
}

/// Optional covariate that predicts the learning rate: `offset + scale·α + N(0, noise_sd)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaCovariate {
    pub offset: f64,
    pub scale: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub design: Design,
    pub tau: TauSpec,
    pub u: DistSpec,
    pub prior_mean: DistSpec,
    /// Common initial prior variance σ²ₓ₀.
    pub sigma_x0: f64,
    /// Per-person initial prior variance; overrides `sigma_x0` when set.
    pub prior_var: Option<DistSpec>,
    /// Signal variance σ²ₛ.
    pub sigma_s: f64,
    /// Cost per pre-experiment signal; zero disables acquisition.
    pub cost: f64,
    pub signals: SignalSpec,
    pub p_treat: f64,
    /// Time effects (γ₀, γ₁) for panel outcomes.
    pub gamma: (f64, f64),
    pub alpha_covariate: Option<AlphaCovariate>,
    pub seed: u64,
}

impl SimConfig {
    /// Homogeneous-free baseline: τ ~ U(0.5, 2.5), no acquisition, common signals.
    pub fn new(n: usize, design: Design, seed: u64) -> Self {
        SimConfig {
            n,
            design,
            tau: TauSpec::Draw(DistSpec::Uniform { lo: 0.5, hi: 2.5 }),
            u: DistSpec::Normal { mean: 0.0, sd: 1.0 },
            prior_mean: DistSpec::Normal { mean: 0.0, sd: 1.0 },
            sigma_x0: 1.0,
            prior_var: None,
            sigma_s: 1.0,
            cost: 0.0,
            signals: SignalSpec::Common { high: 2.0, low: -1.0 },
            p_treat: 0.5,
            gamma: (0.0, 0.0),
            alpha_covariate: None,
            seed,
        }
    }

    /// Quadratic-loss costly-acquisition population: τ ~ U(0.25, 3),
    /// σ²ₓ₀ = 4, σ²ₛ = 1, C = 0.5. Learning rates fall in |τ|.
    pub fn costly_acquisition(n: usize, design: Design, seed: u64) -> Self {
        SimConfig {
            tau: TauSpec::Draw(DistSpec::Uniform { lo: 0.25, hi: 3.0 }),
            sigma_x0: 4.0,
            sigma_s: 1.0,
            cost: 0.5,
            ..SimConfig::new(n, design, seed)
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let param = |name: &'static str, reason: String| Err(SimError::InvalidParameter { name, reason });
        if self.n < 2 {
            return param("n", format!("need at least 2 individuals, got {}", self.n));
        }
        if !(self.p_treat > 0.0 && self.p_treat < 1.0) {
            return param("p_treat", format!("must lie in (0, 1), got {}", self.p_treat));
        }
        if !(self.sigma_s > 0.0) || !self.sigma_s.is_finite() {
            return Err(SimError::NonPositiveSignalVariance(self.sigma_s));
        }
        if !(self.sigma_x0 >= 0.0) || !self.sigma_x0.is_finite() {
            return param("sigma_x0", format!("must be non-negative, got {}", self.sigma_x0));
        }
        if !(self.cost >= 0.0) || !self.cost.is_finite() {
            return param("cost", format!("must be non-negative, got {}", self.cost));
        }
        if !(self.gamma.0.is_finite() && self.gamma.1.is_finite()) {
            return param("gamma", "time effects must be finite".into());
        }
        self.u.validate("u")?;
        self.prior_mean.validate("prior_mean")?;
        if let Some(pv) = &self.prior_var {
            pv.validate("prior_var")?;
            if !pv.non_negative_support() {
                return Err(SimError::InvalidDistributionSpec {
                    name: "prior_var",
                    reason: "prior variance draws must be non-negative".into(),
                });
            }
        }
        match &self.tau {
            TauSpec::Draw(d) => d.validate("tau")?,
            TauSpec::AlphaStep { thresholds, levels } => {
                if levels.len() != thresholds.len() + 1 || thresholds.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(SimError::InvalidDistributionSpec {
                        name: "tau",
                        reason: "step needs increasing thresholds and one more level than thresholds".into(),
                    });
                }
            }
            TauSpec::AlphaRankLinear { intercept, slope } => {
                if !(intercept.is_finite() && slope.is_finite()) {
                    return Err(SimError::InvalidDistributionSpec {
                        name: "tau",
                        reason: "coefficients must be finite".into(),
                    });
                }
            }
        }
        if !matches!(self.tau, TauSpec::Draw(_)) && self.cost > 0.0 {
            return Err(SimError::InvalidDistributionSpec {
                name: "tau",
                reason: "tau defined through alpha requires cost = 0 (acquisition makes alpha depend on tau)".into(),
            });
        }
        if let SignalSpec::PerIndividual {
            low,
            gap,
            gap_tau_slope,
        } = &self.signals
        {
            low.validate("signal.low")?;
            gap.validate("signal.gap")?;
            if !gap_tau_slope.is_finite() {
                return param("signal.gap_tau_slope", "must be finite".into());
            }
        }
        if let Some(c) = &self.alpha_covariate {
            if !(c.offset.is_finite() && c.scale.is_finite() && c.noise_sd >= 0.0) {
                return param("alpha_covariate", "needs finite offset/scale and noise_sd >= 0".into());
            }
        }
        Ok(())
    }
}

/// Latent truth for one simulated person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub id: String,
    pub tau: f64,
    pub u: f64,
    pub alpha: f64,
    /// Prior variance after acquisition.
    pub prior_var: f64,
    pub n_signals: u64,
    pub prior: f64,
    pub signal_a: f64,
    pub signal_b: f64,
    pub belief_a: f64,
    pub belief_b: f64,
    pub outcome_a: f64,
    pub outcome_b: f64,
}

impl TruthRow {
    /// Xᵢ(A) − Xᵢ(B)
    pub fn first_stage(&self) -> f64 {
        self.belief_a - self.belief_b
    }
}

/// Ground truth, aligned one-to-one with the simulated dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTruth {
    pub rows: Vec<TruthRow>,
}

impl SimTruth {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn tau(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.tau).collect()
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.alpha).collect()
    }

    pub fn mean_tau(&self) -> f64 {
        self.rows.iter().map(|r| r.tau).sum::<f64>() / self.len() as f64
    }
}

/// Independent per-person stream: same root seed, stream = person index.
fn person_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub const ALPHA_COVARIATE: &str = "alpha_proxy";

/// Draw a population and run the experiment on it.
pub fn simulate_population(config: &SimConfig) -> Result<(Dataset, SimTruth), SimError> {
    config.validate()?;
    let design = config.design;

    struct Person {
        tau: f64,
        u: f64,
        prior: f64,
        var: f64,
        n_signals: u64,
        alpha: f64,
        s_a: f64,
        s_b: f64,
        treat: bool,
        cov: Option<f64>,
    }

    let mut people = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let mut rng = person_rng(config.seed, i);
        let tau = match &config.tau {
            TauSpec::Draw(d) => d.sample(&mut rng),
            _ => f64::NAN,
        };
        let u = config.u.sample(&mut rng);
        let prior = config.prior_mean.sample(&mut rng);
        let var0 = config.prior_var.map_or(config.sigma_x0, |d| d.sample(&mut rng));
        let (var, n_signals, alpha) = if config.cost > 0.0 {
            let a = acquire_information(tau, var0, config.sigma_s, config.cost)?;
            (a.final_var, a.n_signals, a.alpha)
        } else {
            (var0, 0, var0 / (var0 + config.sigma_s))
        };
        let treat = rng.random_bool(config.p_treat);
        let (s_low, gap) = match &config.signals {
            SignalSpec::Common { high, low } => (*low, high - low),
            SignalSpec::PerIndividual { low, gap, .. } => (low.sample(&mut rng), gap.sample(&mut rng)),
        };
        let cov_noise = match config.alpha_covariate {
            Some(c) if c.noise_sd > 0.0 => Normal::new(0.0, c.noise_sd).expect("validated").sample(&mut rng),
            _ => 0.0,
        };
        people.push(Person {
            tau,
            u,
            prior,
            var,
            n_signals,
            alpha,
            s_a: s_low + gap,
            s_b: s_low,
            treat,
            cov: config.alpha_covariate.map(|c| c.offset + c.scale * alpha + cov_noise),
        });
    }

    // τ defined through α needs the whole population's α first.
    match &config.tau {
        TauSpec::Draw(_) => {}
        TauSpec::AlphaStep { thresholds, levels } => {
            for p in &mut people {
                let k = thresholds.iter().filter(|&&t| p.alpha > t).count();
                p.tau = levels[k];
            }
        }
        TauSpec::AlphaRankLinear { intercept, slope } => {
            let alphas: Vec<f64> = people.iter().map(|p| p.alpha).collect();
            let ranks = rank_transform(&alphas)?;
            for (p, r) in people.iter_mut().zip(ranks) {
                p.tau = intercept + slope * r;
            }
        }
    }
    if let SignalSpec::PerIndividual { gap_tau_slope, .. } = config.signals {
        for p in &mut people {
            p.s_a += gap_tau_slope * p.tau;
        }
    }
    // Without a signal in arm B, its "signal" is the prior itself.
    if matches!(design, Design::Passive | Design::Panel) {
        for p in &mut people {
            p.s_b = p.prior;
        }
    }

    let (g0, g1) = config.gamma;
    let width = config.n.to_string().len();
    let mut records = Vec::with_capacity(config.n);
    let mut truth = Vec::with_capacity(config.n);
    for (i, p) in people.into_iter().enumerate() {
        let id = format!("i{i:0width$}");
        let belief = |s: f64| p.alpha * (s - p.prior) + p.prior;
        let (x_a, x_b) = (belief(p.s_a), belief(p.s_b));
        let (y_a, y_b) = (p.tau * x_a + p.u, p.tau * x_b + p.u);
        let (x, y) = if p.treat { (x_a, y_a) } else { (x_b, y_b) };
        let arm = if p.treat { Arm::A } else { Arm::B };
        let mut rec = BeliefRecord {
            arm: Some(arm),
            prior_var: Some(p.var),
            signal_high: Some(p.s_a),
            covariates: p.cov.into_iter().collect(),
            ..BeliefRecord::new(id.clone(), p.prior, x, y)
        };
        match design {
            Design::Active => {
                rec.signal = Some(if p.treat { p.s_a } else { p.s_b });
                rec.signal_low = Some(p.s_b);
            }
            Design::Passive => {
                rec.signal = p.treat.then_some(p.s_a);
            }
            Design::Panel => {
                rec.signal = p.treat.then_some(p.s_a);
                rec.outcome_pre = Some(p.tau * p.prior + g0 + p.u);
                rec.outcome_post = p.tau * x + g1 + p.u;
            }
        }
        records.push(rec);
        truth.push(TruthRow {
            id,
            tau: p.tau,
            u: p.u,
            alpha: p.alpha,
            prior_var: p.var,
            n_signals: p.n_signals,
            prior: p.prior,
            signal_a: p.s_a,
            signal_b: p.s_b,
            belief_a: x_a,
            belief_b: x_b,
            outcome_a: y_a,
            outcome_b: y_b,
        });
    }

    let schema = if config.alpha_covariate.is_some() {
        vec![ALPHA_COVARIATE.to_string()]
    } else {
        Vec::new()
    };
    let dataset = validate_dataset_with_schema(records, design, schema)?;
    Ok((dataset, SimTruth { rows: truth }))
}

/// Pearson correlation; `None` when either side has no variance.
pub fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a[..n].iter().zip(&b[..n]) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn update_examples() {
        let p = bayesian_update(0.0, 1.0, 2.0, 1.0).unwrap();
        assert_eq!((p.mean, p.var, p.alpha), (1.0, 0.5, 0.5));
        let p = bayesian_update(5.0, 0.0, 99.0, 1.0).unwrap();
        assert_eq!((p.mean, p.var, p.alpha), (5.0, 0.0, 0.0));
        let p = bayesian_update(10.0, 3.0, 4.0, 1.0).unwrap();
        assert!((p.mean - 5.5).abs() < 1e-12);
        assert!((p.var - 0.75).abs() < 1e-12);
        assert!((p.alpha - 0.75).abs() < 1e-12);
        assert_eq!(
            bayesian_update(0.0, 1.0, 1.0, 0.0).unwrap_err(),
            SimError::NonPositiveSignalVariance(0.0)
        );
    }

    #[test]
    fn acquisition_examples() {
        let a = acquire_information(0.0, 1.0, 1.0, 0.3).unwrap();
        assert_eq!((a.final_var, a.n_signals, a.alpha), (1.0, 0, 0.5));
        let a = acquire_information(1.0, 1.0, 1.0, 0.3).unwrap();
        assert_eq!(a.n_signals, 1);
        assert!((a.final_var - 0.5).abs() < 1e-15);
        assert!((a.alpha - 1.0 / 3.0).abs() < 1e-15);
        let a = acquire_information(10.0, 1.0, 1.0, 0.3).unwrap();
        assert!(a.n_signals >= 2 && a.final_var < 0.5);
        assert_eq!(
            acquire_information(1.0, 1.0, 1.0, 0.0).unwrap_err(),
            SimError::IterationCapExceeded(MAX_SIGNALS)
        );
    }

    #[test]
    fn degenerate_population_outcomes() {
        let mut cfg = SimConfig::new(50, Design::Panel, 3);
        cfg.tau = TauSpec::Draw(DistSpec::Point(0.0));
        cfg.u = DistSpec::Point(0.0);
        cfg.gamma = (0.5, 2.0);
        let (ds, _) = simulate_population(&cfg).unwrap();
        for r in ds.records() {
            assert_eq!(r.outcome_pre, Some(0.5));
            assert_eq!(r.outcome_post, 2.0);
        }
        cfg.design = Design::Active;
        let (ds, _) = simulate_population(&cfg).unwrap();
        assert!(ds.records().iter().all(|r| r.outcome_post == 0.0));
    }

    #[test]
    fn treated_share_concentrates() {
        let (ds, _) = simulate_population(&SimConfig::new(100_000, Design::Passive, 11)).unwrap();
        assert!((ds.treated_share() - 0.5).abs() < 0.01);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SimConfig::costly_acquisition(500, Design::Active, 99);
        let (a, ta) = simulate_population(&cfg).unwrap();
        let (b, tb) = simulate_population(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = simulate_population(&SimConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn truth_is_internally_consistent() {
        for design in [Design::Panel, Design::Active, Design::Passive] {
            let (ds, truth) = simulate_population(&SimConfig::costly_acquisition(400, design, 5)).unwrap();
            for (r, t) in ds.records().iter().zip(&truth.rows) {
                assert_eq!(t.alpha, t.prior_var / (t.prior_var + 1.0));
                assert!(t.alpha > 0.0 && t.alpha < 1.0);
                assert_eq!(t.belief_a, t.alpha * (t.signal_a - t.prior) + t.prior);
                assert_eq!(t.belief_b, t.alpha * (t.signal_b - t.prior) + t.prior);
                assert_eq!(t.outcome_a, t.tau * t.belief_a + t.u);
                assert_eq!(t.outcome_b, t.tau * t.belief_b + t.u);
                let treated = r.arm == Some(Arm::A);
                assert_eq!(r.posterior, if treated { t.belief_a } else { t.belief_b });
                if design != Design::Panel {
                    assert_eq!(r.outcome_post, if treated { t.outcome_a } else { t.outcome_b });
                }
            }
        }
    }

    #[test]
    fn acquisition_makes_alpha_fall_with_tau() {
        let (_, truth) = simulate_population(&SimConfig::costly_acquisition(10_000, Design::Passive, 21)).unwrap();
        let abs_tau: Vec<f64> = truth.rows.iter().map(|r| r.tau.abs()).collect();
        assert!(correlation(&truth.alpha(), &abs_tau).unwrap() < 0.0);
    }

    #[test]
    fn tau_through_alpha_requires_zero_cost() {
        let mut cfg = SimConfig::costly_acquisition(10, Design::Active, 1);
        cfg.tau = TauSpec::AlphaRankLinear {
            intercept: 2.0,
            slope: -2.0,
        };
        assert!(matches!(
            simulate_population(&cfg),
            Err(SimError::InvalidDistributionSpec { .. })
        ));
    }

    #[test]
    fn invalid_p_treat() {
        let mut cfg = SimConfig::new(10, Design::Active, 1);
        cfg.p_treat = 1.5;
        assert!(matches!(
            cfg.validate(),
            Err(SimError::InvalidParameter { name: "p_treat", .. })
        ));
    }

    #[test]
    fn dist_parsing() {
        assert_eq!(
            "uniform(0.5, 3)".parse::<DistSpec>().unwrap(),
            DistSpec::Uniform { lo: 0.5, hi: 3.0 }
        );
        assert_eq!(
            "normal(0,1)".parse::<DistSpec>().unwrap(),
            DistSpec::Normal { mean: 0.0, sd: 1.0 }
        );
        assert_eq!("2.5".parse::<DistSpec>().unwrap(), DistSpec::Point(2.5));
        assert!("gamma(1,2)".parse::<DistSpec>().is_err());
    }

    proptest! {
        #[test]
        fn posterior_between_prior_and_signal(m in -50.0..50.0f64, v in 0.0..20.0f64, s in -50.0..50.0f64, sv in 0.01..20.0f64) {
            let p = bayesian_update(m, v, s, sv).unwrap();
            let (lo, hi) = if m < s { (m, s) } else { (s, m) };
            prop_assert!(p.mean >= lo - 1e-12 && p.mean <= hi + 1e-12);
            if v > 0.0 && m != s {
                prop_assert!(p.mean > lo && p.mean < hi || (p.mean - lo).abs() < 1e-9 || (p.mean - hi).abs() < 1e-9);
                prop_assert!(p.var < v);
            }
            prop_assert!(p.var <= v);
            prop_assert!(p.alpha >= 0.0 && p.alpha < 1.0);
        }

        #[test]
        fn more_signals_for_larger_effects(t1 in 0.0..20.0f64, t2 in 0.0..20.0f64, v0 in 0.1..5.0f64, s in 0.1..5.0f64, c in 0.05..2.0f64) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let a = acquire_information(lo, v0, s, c).unwrap();
            let b = acquire_information(-hi, v0, s, c).unwrap();
            prop_assert!(a.n_signals <= b.n_signals);
            prop_assert!(a.final_var >= b.final_var && a.alpha >= b.alpha);
            let slack = hi * hi * (b.final_var - next_var(b.final_var, s));
            prop_assert!(slack <= c);
        }
    }
}
