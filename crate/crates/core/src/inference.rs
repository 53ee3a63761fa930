//! Bootstrap standard errors for whole estimation pipelines.
//!
//! Each draw reweights records rather than resampling rows; the pipeline
//! receives the weights and must apply them to every weighted step,
//! including any first-stage estimation of learning rates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datamodel::Dataset;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("invalid bootstrap setting `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: &'static str },
    #[error("{failed} of {total} bootstrap draws failed{}", first_error.as_ref().map(|e| format!(" (first: {e})")).unwrap_or_default())]
    TooManyFailures {
        failed: usize,
        total: usize,
        first_error: Option<String>,
    },
    #[error("fewer than two bootstrap draws survived")]
    TooFewDraws,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapScheme {
    /// Dirichlet(1, …, 1) weights.
    Bayesian,
    /// Multinomial counts (classical resampling with replacement).
    Empirical,
}

impl std::str::FromStr for BootstrapScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bayesian" => Ok(BootstrapScheme::Bayesian),
            "empirical" => Ok(BootstrapScheme::Empirical),
            other => Err(format!("unknown bootstrap scheme `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_draws: usize,
    /// Total share of extreme draws discarded, split evenly between tails.
    pub outlier_drop: f64,
    pub seed: u64,
    pub parallel: bool,
    pub scheme: BootstrapScheme,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_draws: 1000,
            outlier_drop: 0.01,
            seed: 0,
            parallel: true,
            scheme: BootstrapScheme::Bayesian,
        }
    }
}

impl BootstrapConfig {
    pub fn new(n_draws: usize, seed: u64) -> Self {
        BootstrapConfig {
            n_draws,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.n_draws < 2 {
            return Err(InferenceError::InvalidConfig {
                field: "n_draws",
                reason: "at least two draws are needed",
            });
        }
        if !(0.0..0.5).contains(&self.outlier_drop) {
            return Err(InferenceError::InvalidConfig {
                field: "outlier_drop",
                reason: "must lie in [0, 0.5)",
            });
        }
        Ok(())
    }
}

/// Generates per-record weights for each draw. Weight streams are keyed by
/// record id, so the weight a record receives does not depend on where it
/// sits in the dataset.
#[derive(Debug, Clone)]
pub struct WeightGenerator {
    scheme: BootstrapScheme,
    /// Per-record ChaCha keys (Bayesian).
    keys: Vec<[u8; 32]>,
    /// Records in id order (empirical).
    by_id: Vec<usize>,
    seed_key: [u8; 32],
}

fn key_for(seed: u64, tag: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag);
    h.finalize().into()
}

impl WeightGenerator {
    pub fn new(data: &Dataset, seed: u64, scheme: BootstrapScheme) -> Self {
        let recs = data.records();
        let keys = match scheme {
            BootstrapScheme::Bayesian => recs.iter().map(|r| key_for(seed, r.id.as_bytes())).collect(),
            BootstrapScheme::Empirical => Vec::new(),
        };
        let mut by_id: Vec<usize> = (0..recs.len()).collect();
        if scheme == BootstrapScheme::Empirical {
            by_id.sort_by(|&a, &b| recs[a].id.cmp(&recs[b].id));
        }
        WeightGenerator {
            scheme,
            keys,
            by_id,
            seed_key: key_for(seed, b"\0empirical"),
        }
    }

    /// Weights for draw `draw`; positive (Bayesian) or nonnegative integers
    /// (empirical), summing to the number of records.
    pub fn draw(&self, draw: u64) -> Vec<f64> {
        let n = self.by_id.len();
        match self.scheme {
            BootstrapScheme::Bayesian => {
                let mut w: Vec<f64> = self
                    .keys
                    .iter()
                    .map(|k| {
                        let mut rng = ChaCha8Rng::from_seed(*k);
                        rng.set_stream(draw);
                        let e: f64 = rng.sample(Exp1);
                        // Exp1 can return exactly zero; keep weights strictly positive.
                        e.max(f64::MIN_POSITIVE)
                    })
                    .collect();
                let total: f64 = w.iter().sum();
                let scale = n as f64 / total;
                w.iter_mut().for_each(|v| *v *= scale);
                w
            }
            BootstrapScheme::Empirical => {
                let mut rng = ChaCha8Rng::from_seed(self.seed_key);
                rng.set_stream(draw);
                let mut w = vec![0.0; n];
                for _ in 0..n {
                    w[self.by_id[rng.random_range(0..n)]] += 1.0;
                }
                w
            }
        }
    }
}

/// Bootstrap distribution of a scalar statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOutput {
    pub se: f64,
    /// Successful draws in draw order, before outlier trimming.
    pub draws: Vec<f64>,
    pub n_failed: usize,
    /// Draws remaining after outlier trimming.
    pub n_kept: usize,
}

fn run_draws<T, E, F>(data: &Dataset, config: &BootstrapConfig, pipeline: F) -> (Vec<T>, usize, Option<String>)
where
    T: Send,
    E: std::fmt::Display,
    F: Fn(&Dataset, &[f64]) -> Result<T, E> + Sync,
{
    let gen = WeightGenerator::new(data, config.seed, config.scheme);
    let one = |d: usize| -> Result<T, String> {
        let w = gen.draw(d as u64);
        pipeline(data, &w).map_err(|e| e.to_string())
    };
    let results: Vec<Result<T, String>> = if config.parallel {
        (0..config.n_draws).into_par_iter().map(one).collect()
    } else {
        (0..config.n_draws).map(one).collect()
    };
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = 0;
    let mut first_error = None;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                failed += 1;
                first_error.get_or_insert(e);
            }
        }
    }
    (ok, failed, first_error)
}

/// Standard deviation after discarding `drop / 2` of the draws in each tail.
pub fn trimmed_sd(draws: &[f64], drop: f64) -> Option<(f64, usize)> {
    let mut v: Vec<f64> = draws.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let cut = (v.len() as f64 * drop / 2.0).floor() as usize;
    let kept = &v[cut..v.len() - cut];
    if kept.len() < 2 {
        return None;
    }
    // Shifting by the first draw keeps a constant statistic at exactly zero.
    let shift = kept[0];
    let mean = kept.iter().map(|x| x - shift).sum::<f64>() / kept.len() as f64;
    let var = kept.iter().map(|x| (x - shift - mean).powi(2)).sum::<f64>() / (kept.len() - 1) as f64;
    Some((var.sqrt(), kept.len()))
}

/// Bootstrap a scalar pipeline. Draws whose pipeline fails are dropped and
/// counted; more than half failing is an error.
pub fn bayesian_bootstrap<E, F>(
    data: &Dataset,
    pipeline: F,
    config: &BootstrapConfig,
) -> Result<BootstrapOutput, InferenceError>
where
    E: std::fmt::Display,
    F: Fn(&Dataset, &[f64]) -> Result<f64, E> + Sync,
{
    config.validate()?;
    let (draws, n_failed, first_error) = run_draws(data, config, pipeline);
    if 2 * n_failed > config.n_draws {
        return Err(InferenceError::TooManyFailures {
            failed: n_failed,
            total: config.n_draws,
            first_error,
        });
    }
    let (se, n_kept) = trimmed_sd(&draws, config.outlier_drop).ok_or(InferenceError::TooFewDraws)?;
    Ok(BootstrapOutput {
        se,
        draws,
        n_failed,
        n_kept,
    })
}

/// Bootstrap distribution of a vector statistic such as a binned curve.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorBootstrap {
    /// Per component; `None` when fewer than two draws produced it.
    pub se: Vec<Option<f64>>,
    pub n_failed: usize,
}

/// Bootstrap a pipeline returning `dim` components; a `NaN` component marks a
/// value missing from that draw and is skipped for that component only.
pub fn bootstrap_vector<E, F>(
    data: &Dataset,
    dim: usize,
    pipeline: F,
    config: &BootstrapConfig,
) -> Result<VectorBootstrap, InferenceError>
where
    E: std::fmt::Display,
    F: Fn(&Dataset, &[f64]) -> Result<Vec<f64>, E> + Sync,
{
    config.validate()?;
    let (draws, n_failed, first_error) = run_draws(data, config, pipeline);
    if 2 * n_failed > config.n_draws {
        return Err(InferenceError::TooManyFailures {
            failed: n_failed,
            total: config.n_draws,
            first_error,
        });
    }
    let se = (0..dim)
        .map(|k| {
            let col: Vec<f64> = draws.iter().filter_map(|d| d.get(k).copied()).collect();
            trimmed_sd(&col, config.outlier_drop).map(|(s, _)| s)
        })
        .collect();
    Ok(VectorBootstrap { se, n_failed })
}
