//! Run configuration: a flat `key = value` file with dotted sections,
//! overridden by command-line flags.
//!
//! ```text
//! design = passive
//! estimators = tsls_exposure, lls_ape
//!
//! [lls]
//! bandwidth = 0.05   # same as lls.bandwidth at top level
//! alpha_source = prior_var_rank
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use beliefcal::inference::{BootstrapConfig, BootstrapScheme};
use beliefcal::lls::{AlphaSource, ExposureWeighting, LlsConfig};
use beliefcal::simlab::{AlphaCovariate, DistSpec, SignalSpec, SimConfig, TauSpec};
use beliefcal::Design;

use crate::CliError;

pub const SEED_ENV: &str = "BELIEFCAL_SEED";

/// Parsed key/value pairs, keys fully qualified (`lls.bandwidth`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("config line {}: expected `key = value`, got `{line}`", n + 1))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(CliError::Config(format!("config line {}: empty key", n + 1)));
            }
            let key = if section.is_empty() {
                k.to_string()
            } else {
                format!("{section}.{k}")
            };
            let v = v.trim();
            let v = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
            if entries.insert(key.clone(), v.to_string()).is_some() {
                return Err(CliError::Config(format!(
                    "config line {}: duplicate key `{key}`",
                    n + 1
                )));
            }
        }
        Ok(ConfigFile { entries })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

const KEYS: &[&str] = &[
    "design",
    "estimators",
    "input",
    "output",
    "truth",
    "format",
    "seed",
    "estimators.covariates",
    "estimators.group_effects",
    "estimators.prior_available",
    "lls.bandwidth",
    "lls.trim_delta",
    "lls.trim_alpha",
    "lls.trim_exposure_sq",
    "lls.alpha_source",
    "lls.smoothing_bandwidth",
    "lls.cape_bins",
    "lls.max_skip_fraction",
    "lls.exposure_weighting",
    "lls.group_controls",
    "bootstrap.draws",
    "bootstrap.outlier_drop",
    "bootstrap.scheme",
    "bootstrap.parallel",
    "sim.preset",
    "sim.n",
    "sim.tau",
    "sim.tau_profile",
    "sim.tau_intercept",
    "sim.tau_slope",
    "sim.tau_thresholds",
    "sim.tau_levels",
    "sim.u",
    "sim.prior_mean",
    "sim.sigma_x0",
    "sim.prior_var",
    "sim.sigma_s",
    "sim.cost",
    "sim.signal_high",
    "sim.signal_low",
    "sim.signal_low_dist",
    "sim.signal_gap",
    "sim.gap_tau_slope",
    "sim.p_treat",
    "sim.gamma_pre",
    "sim.gamma_post",
    "sim.alpha_covariate_offset",
    "sim.alpha_covariate_scale",
    "sim.alpha_covariate_noise_sd",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    PanelFd,
    Wald,
    TslsExposure,
    TslsSplit,
    ReducedForm,
    LlsApe,
    LlsCape,
    Weights,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::PanelFd => "panel_fd",
            EstimatorKind::Wald => "wald",
            EstimatorKind::TslsExposure => "tsls_exposure",
            EstimatorKind::TslsSplit => "tsls_split",
            EstimatorKind::ReducedForm => "reduced_form",
            EstimatorKind::LlsApe => "lls_ape",
            EstimatorKind::LlsCape => "lls_cape",
            EstimatorKind::Weights => "weights",
        }
    }

    fn designs(self) -> &'static [Design] {
        match self {
            EstimatorKind::PanelFd => &[Design::Panel],
            EstimatorKind::Wald => &[Design::Active],
            EstimatorKind::TslsExposure | EstimatorKind::TslsSplit => &[Design::Passive],
            EstimatorKind::ReducedForm => &[Design::Active, Design::Passive],
            _ => &[Design::Panel, Design::Active, Design::Passive],
        }
    }

    /// What `estimate` runs when no selection is given.
    pub fn defaults(design: Design) -> Vec<EstimatorKind> {
        use EstimatorKind::*;
        match design {
            Design::Panel => vec![PanelFd, LlsApe],
            Design::Active => vec![Wald, ReducedForm, LlsApe],
            Design::Passive => vec![TslsExposure, TslsSplit, LlsApe],
        }
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use EstimatorKind::*;
        Ok(match s.trim() {
            "panel_fd" => PanelFd,
            "wald" => Wald,
            "tsls_exposure" => TslsExposure,
            "tsls_split" => TslsSplit,
            "reduced_form" => ReducedForm,
            "lls_ape" => LlsApe,
            "lls_cape" => LlsCape,
            "weights" => Weights,
            other => return Err(format!("unknown estimator `{other}`")),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub design: Option<Design>,
    pub estimators: Vec<EstimatorKind>,
    pub lls: LlsConfig,
    /// Zero disables bootstrap standard errors.
    pub bootstrap_draws: usize,
    pub outlier_drop: f64,
    pub bootstrap_scheme: BootstrapScheme,
    pub bootstrap_parallel: bool,
    pub sim: SimConfig,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub format: OutputFormat,
    pub seed: u64,
    pub covariates: Vec<String>,
    pub group_effects: bool,
    pub prior_available: bool,
}

fn parsed<T: FromStr>(file: &ConfigFile, key: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    file.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|e| CliError::Config(format!("config key `{key}`: invalid value `{v}`: {e}")))
        })
        .transpose()
}

fn set_from<T: FromStr>(file: &ConfigFile, key: &str, target: &mut T) -> Result<(), CliError>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = parsed(file, key)? {
        *target = v;
    }
    Ok(())
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn number_list(file: &ConfigFile, key: &str) -> Result<Option<Vec<f64>>, CliError> {
    file.get(key)
        .map(|v| {
            list(v)
                .iter()
                .map(|x| x.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Config(format!("config key `{key}`: {e}")))
        })
        .transpose()
}

fn bool_value(file: &ConfigFile, key: &str) -> Result<Option<bool>, CliError> {
    file.get(key)
        .map(|v| match v.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(CliError::Config(format!(
                "config key `{key}`: expected true or false, got `{v}`"
            ))),
        })
        .transpose()
}

impl RunConfig {
    /// Resolve a merged key/value map. `seed_env` is the fallback seed
    /// variable's value, consulted only when no `seed` key is present.
    pub fn resolve(file: &ConfigFile, seed_env: Option<&str>) -> Result<Self, CliError> {
        if let Some(k) = file.keys().find(|k| !KEYS.contains(k)) {
            return Err(CliError::Config(format!("unknown config key `{k}`")));
        }
        let design: Option<Design> = parsed(file, "design")?;
        let seed = match (parsed::<u64>(file, "seed")?, seed_env) {
            (Some(s), _) => s,
            (None, Some(v)) => v
                .trim()
                .parse()
                .map_err(|e| CliError::Config(format!("{SEED_ENV}: invalid seed `{v}`: {e}")))?,
            (None, None) => 0,
        };
        let format = match file.get("format").unwrap_or("json") {
            "json" => OutputFormat::Json,
            "csv" => OutputFormat::Csv,
            other => {
                return Err(CliError::Config(format!(
                    "unknown format `{other}` (expected json or csv)"
                )))
            }
        };
        let estimators = file
            .get("estimators")
            .map(|v| {
                list(v)
                    .iter()
                    .map(|s| s.parse::<EstimatorKind>().map_err(CliError::Config))
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?
            .unwrap_or_default();
        if let Some(d) = design {
            for e in &estimators {
                if !e.designs().contains(&d) {
                    return Err(CliError::Config(format!(
                        "estimator `{}` is not available for {d} designs",
                        e.as_str()
                    )));
                }
            }
        }

        let mut lls = LlsConfig::default();
        // Raw rates need each record's own signal, which passive controls lack.
        if design == Some(Design::Passive) {
            lls.alpha_source = AlphaSource::PriorVarRank;
        }
        set_from(file, "lls.bandwidth", &mut lls.bandwidth)?;
        set_from(file, "lls.trim_delta", &mut lls.trim_delta)?;
        set_from(file, "lls.trim_alpha", &mut lls.trim_alpha)?;
        set_from(file, "lls.trim_exposure_sq", &mut lls.trim_exposure_sq)?;
        set_from::<AlphaSource>(file, "lls.alpha_source", &mut lls.alpha_source)?;
        set_from(file, "lls.smoothing_bandwidth", &mut lls.smoothing_bandwidth)?;
        set_from(file, "lls.cape_bins", &mut lls.cape_bins)?;
        set_from(file, "lls.max_skip_fraction", &mut lls.max_skip_fraction)?;
        set_from::<ExposureWeighting>(file, "lls.exposure_weighting", &mut lls.exposure_weighting)?;
        if let Some(b) = bool_value(file, "lls.group_controls")? {
            lls.group_controls = b;
        }
        lls.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let defaults = BootstrapConfig::new(1, seed);
        let mut bootstrap_draws = 0;
        set_from(file, "bootstrap.draws", &mut bootstrap_draws)?;
        let mut outlier_drop = defaults.outlier_drop;
        set_from(file, "bootstrap.outlier_drop", &mut outlier_drop)?;
        let mut bootstrap_scheme = defaults.scheme;
        set_from(file, "bootstrap.scheme", &mut bootstrap_scheme)?;
        let bootstrap_parallel = bool_value(file, "bootstrap.parallel")?.unwrap_or(defaults.parallel);

        let run = RunConfig {
            design,
            estimators,
            lls,
            bootstrap_draws,
            outlier_drop,
            bootstrap_scheme,
            bootstrap_parallel,
            sim: sim_config(file, design.unwrap_or(Design::Active), seed)?,
            input: file.get("input").map(PathBuf::from),
            output: file.get("output").map(PathBuf::from),
            truth: file.get("truth").map(PathBuf::from),
            format,
            seed,
            covariates: file.get("estimators.covariates").map(list).unwrap_or_default(),
            group_effects: bool_value(file, "estimators.group_effects")?.unwrap_or(false),
            prior_available: bool_value(file, "estimators.prior_available")?.unwrap_or(true),
        };
        if let Some(b) = run.bootstrap() {
            b.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(run)
    }

    pub fn bootstrap(&self) -> Option<BootstrapConfig> {
        (self.bootstrap_draws > 0).then(|| BootstrapConfig {
            outlier_drop: self.outlier_drop,
            scheme: self.bootstrap_scheme,
            parallel: self.bootstrap_parallel,
            ..BootstrapConfig::new(self.bootstrap_draws, self.seed)
        })
    }

    pub fn require_design(&self) -> Result<Design, CliError> {
        self.design
            .ok_or_else(|| CliError::Config("no design given (use --design or `design =` in the config)".into()))
    }
}

fn sim_config(file: &ConfigFile, design: Design, seed: u64) -> Result<SimConfig, CliError> {
    let n = parsed(file, "sim.n")?.unwrap_or(1000);
    let mut cfg = match file.get("sim.preset").unwrap_or("baseline") {
        "baseline" => SimConfig::new(n, design, seed),
        "costly" => SimConfig::costly_acquisition(n, design, seed),
        other => {
            return Err(CliError::Config(format!(
                "unknown sim.preset `{other}` (expected baseline or costly)"
            )))
        }
    };
    set_from::<DistSpec>(file, "sim.u", &mut cfg.u)?;
    set_from::<DistSpec>(file, "sim.prior_mean", &mut cfg.prior_mean)?;
    set_from(file, "sim.sigma_x0", &mut cfg.sigma_x0)?;
    if let Some(pv) = parsed::<DistSpec>(file, "sim.prior_var")? {
        cfg.prior_var = Some(pv);
    }
    set_from(file, "sim.sigma_s", &mut cfg.sigma_s)?;
    set_from(file, "sim.cost", &mut cfg.cost)?;
    set_from(file, "sim.p_treat", &mut cfg.p_treat)?;
    set_from(file, "sim.gamma_pre", &mut cfg.gamma.0)?;
    set_from(file, "sim.gamma_post", &mut cfg.gamma.1)?;

    cfg.tau = match file.get("sim.tau_profile").unwrap_or("draw") {
        "draw" => match parsed::<DistSpec>(file, "sim.tau")? {
            Some(d) => TauSpec::Draw(d),
            None => cfg.tau,
        },
        "rank_linear" => TauSpec::AlphaRankLinear {
            intercept: parsed(file, "sim.tau_intercept")?.unwrap_or(2.0),
            slope: parsed(file, "sim.tau_slope")?.unwrap_or(-2.0),
        },
        "step" => TauSpec::AlphaStep {
            thresholds: number_list(file, "sim.tau_thresholds")?.unwrap_or_default(),
            levels: number_list(file, "sim.tau_levels")?.unwrap_or_default(),
        },
        other => {
            return Err(CliError::Config(format!(
                "unknown sim.tau_profile `{other}` (expected draw, rank_linear or step)"
            )))
        }
    };

    let per_person = ["sim.signal_low_dist", "sim.signal_gap", "sim.gap_tau_slope"];
    if per_person.iter().any(|k| file.get(k).is_some()) {
        cfg.signals = SignalSpec::PerIndividual {
            low: parsed(file, "sim.signal_low_dist")?.unwrap_or(DistSpec::Point(-1.0)),
            gap: parsed(file, "sim.signal_gap")?.unwrap_or(DistSpec::Point(3.0)),
            gap_tau_slope: parsed(file, "sim.gap_tau_slope")?.unwrap_or(0.0),
        };
    } else if let SignalSpec::Common { high, low } = &mut cfg.signals {
        set_from(file, "sim.signal_high", high)?;
        set_from(file, "sim.signal_low", low)?;
    }

    let cov_keys = [
        "sim.alpha_covariate_offset",
        "sim.alpha_covariate_scale",
        "sim.alpha_covariate_noise_sd",
    ];
    if cov_keys.iter().any(|k| file.get(k).is_some()) {
        cfg.alpha_covariate = Some(AlphaCovariate {
            offset: parsed(file, cov_keys[0])?.unwrap_or(0.0),
            scale: parsed(file, cov_keys[1])?.unwrap_or(1.0),
            noise_sd: parsed(file, cov_keys[2])?.unwrap_or(0.0),
        });
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}
