use serde::Serialize;
use serde_json::json;

use beliefcal::estimators::{
    implied_weights, panel_fd, reduced_form, tsls_passive_exposure, tsls_split, wald_active, AlphaInput,
    EstimatorOptions, SplitSide,
};
use beliefcal::inference::{bayesian_bootstrap, bootstrap_vector};
use beliefcal::lls::{
    estimate_ape, estimate_cape, infer_alpha_passive, learning_rate_smoothed, raw_alphas, AlphaSource, PassiveAlphaMode,
};
use beliefcal::simlab::{correlation, simulate_population};
use beliefcal::{Dataset, Design, EstimateResult};

use crate::config::{EstimatorKind, OutputFormat, RunConfig};
use crate::io::{emit, fmt_num, read_dataset, read_truth, truth_path, write_dataset, write_truth};
use crate::CliError;

pub fn simulate(run: &RunConfig) -> Result<(), CliError> {
    let out = run
        .output
        .as_deref()
        .ok_or_else(|| CliError::Config("simulate needs an output path (--output)".into()))?;
    let (data, truth) = simulate_population(&run.sim).map_err(|e| CliError::Config(e.to_string()))?;
    write_dataset(out, &data)?;
    let tpath = truth_path(out);
    write_truth(&tpath, &truth)?;
    let summary = json!({
        "n": data.len(),
        "design": data.design(),
        "treated_share": data.treated_share(),
        "corr_alpha_tau": correlation(&truth.alpha(), &truth.tau()),
        "data": out.display().to_string(),
        "truth": tpath.display().to_string(),
    });
    println!("{summary}");
    Ok(())
}

fn load(run: &RunConfig) -> Result<Dataset, CliError> {
    let design = run.require_design()?;
    let input = run
        .input
        .as_deref()
        .ok_or_else(|| CliError::Config("no input dataset given (use --input)".into()))?;
    read_dataset(input, design)
}

/// One line of an `estimate` report. `point` is absent only when the point
/// estimate itself failed.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub estimator: String,
    pub point: Option<f64>,
    pub se: Option<f64>,
    pub bandwidth: Option<f64>,
    pub n_total: Option<usize>,
    pub n_used: Option<usize>,
    pub skipped_points: Option<usize>,
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReportRow {
    fn ok(r: EstimateResult) -> Self {
        ReportRow {
            estimator: r.estimator,
            point: Some(r.point),
            se: r.se,
            bandwidth: r.bandwidth,
            n_total: Some(r.n_total),
            n_used: Some(r.n_used),
            skipped_points: r.skipped_points,
            seed: r.seed,
            error: None,
        }
    }

    fn failed(estimator: &str, error: String) -> Self {
        ReportRow {
            estimator: estimator.to_string(),
            point: None,
            se: None,
            bandwidth: None,
            n_total: None,
            n_used: None,
            skipped_points: None,
            seed: None,
            error: Some(error),
        }
    }
}

/// A named estimator run on optionally reweighted data.
type Pipeline<'a> = Box<dyn Fn(&Dataset, Option<&[f64]>) -> Result<EstimateResult, String> + Sync + 'a>;

fn options<'w>(run: &RunConfig, weights: Option<&'w [f64]>) -> EstimatorOptions<'w> {
    EstimatorOptions {
        weights,
        covariates: run.covariates.clone(),
        group_effects: run.group_effects,
    }
}

type StandardFn = fn(&Dataset, &EstimatorOptions<'_>) -> Result<EstimateResult, beliefcal::estimators::EstimatorError>;

fn pipelines(run: &RunConfig, kind: EstimatorKind) -> Result<Vec<(&'static str, Pipeline<'_>)>, CliError> {
    let standard =
        |f: StandardFn| -> Pipeline<'_> { Box::new(move |d, w| f(d, &options(run, w)).map_err(|e| e.to_string())) };
    let split = |side: SplitSide| -> Pipeline<'_> {
        Box::new(move |d, w| tsls_split(d, side, run.prior_available, &options(run, w)).map_err(|e| e.to_string()))
    };
    Ok(match kind {
        EstimatorKind::PanelFd => vec![("panel_fd", standard(panel_fd))],
        EstimatorKind::Wald => vec![("wald", standard(wald_active))],
        EstimatorKind::ReducedForm => vec![("reduced_form", standard(reduced_form))],
        EstimatorKind::TslsExposure => vec![("tsls_exposure", standard(tsls_passive_exposure))],
        EstimatorKind::TslsSplit => vec![
            ("tsls_split_above", split(SplitSide::Above)),
            ("tsls_split_below", split(SplitSide::Below)),
        ],
        EstimatorKind::LlsApe => vec![(
            "lls_ape",
            Box::new(move |d: &Dataset, w: Option<&[f64]>| estimate_ape(d, &run.lls, w).map_err(|e| e.to_string())),
        )],
        EstimatorKind::LlsCape | EstimatorKind::Weights => {
            return Err(CliError::Config(format!(
                "`{}` has its own command; run `beliefcal {}`",
                kind.as_str(),
                if kind == EstimatorKind::LlsCape {
                    "cape"
                } else {
                    "weights"
                }
            )))
        }
    })
}

/// Point estimate plus, when configured, a bootstrap standard error.
fn run_pipeline(run: &RunConfig, data: &Dataset, name: &str, p: &Pipeline<'_>) -> ReportRow {
    let point = match p(data, None) {
        Ok(r) => r,
        Err(e) => return ReportRow::failed(name, e),
    };
    let Some(boot) = run.bootstrap() else {
        return ReportRow::ok(point);
    };
    match bayesian_bootstrap(data, |d, w| p(d, Some(w)).map(|r| r.point), &boot) {
        Ok(out) => ReportRow::ok(point.with_bootstrap(out.se, boot.seed)),
        Err(e) => ReportRow {
            error: Some(format!("bootstrap: {e}")),
            ..ReportRow::ok(point)
        },
    }
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn int_cell<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

fn json_string(value: &impl Serialize) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn estimate(run: &RunConfig) -> Result<(), CliError> {
    let data = load(run)?;
    let kinds = if run.estimators.is_empty() {
        EstimatorKind::defaults(data.design())
    } else {
        run.estimators.clone()
    };
    let mut jobs = Vec::new();
    for k in kinds {
        jobs.extend(pipelines(run, k)?);
    }
    let rows: Vec<ReportRow> = jobs.iter().map(|(name, p)| run_pipeline(run, &data, name, p)).collect();

    let text = match run.format {
        OutputFormat::Json => json_string(&rows)?,
        OutputFormat::Csv => csv_string(
            &[
                "estimator",
                "point",
                "se",
                "bandwidth",
                "n_total",
                "n_used",
                "skipped_points",
                "seed",
                "error",
            ],
            rows.iter()
                .map(|r| {
                    vec![
                        r.estimator.clone(),
                        opt_cell(r.point),
                        opt_cell(r.se),
                        opt_cell(r.bandwidth),
                        int_cell(r.n_total),
                        int_cell(r.n_used),
                        int_cell(r.skipped_points),
                        int_cell(r.seed),
                        r.error.clone().unwrap_or_default(),
                    ]
                })
                .collect(),
        )?,
    };
    emit(run.output.as_deref(), &text)?;

    let failed: Vec<String> = rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.estimator)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Estimation(format!(
            "{} of {} estimators failed; {}",
            failed.len(),
            rows.len(),
            failed.join("; ")
        )))
    }
}

#[derive(Debug, Clone, Serialize)]
struct CapeRow {
    bin_center: f64,
    estimate: f64,
    se: Option<f64>,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    n_local: usize,
    n_points: usize,
}

/// Writes the binned curve with ±2·SE bands, and the APE as a reference row.
pub fn cape(run: &RunConfig) -> Result<(), CliError> {
    let data = load(run)?;
    let est = |e: beliefcal::lls::LlsError| CliError::Estimation(format!("lls_cape: {e}"));
    let curve = estimate_cape(&data, &run.lls, None).map_err(est)?;
    let n_bins = run.lls.cape_bins;
    let se = match run.bootstrap() {
        Some(boot) => Some(
            bootstrap_vector(
                &data,
                n_bins,
                |d, w| estimate_cape(d, &run.lls, Some(w)).map(|c| c.dense(n_bins)),
                &boot,
            )
            .map_err(|e| CliError::Estimation(format!("lls_cape bootstrap: {e}")))?
            .se,
        ),
        None => None,
    };
    let rows: Vec<CapeRow> = curve
        .bins
        .iter()
        .map(|b| {
            let s = se.as_ref().and_then(|v| v[b.index]);
            CapeRow {
                bin_center: b.grid_value,
                estimate: b.estimate,
                se: s,
                ci_lo: s.map(|s| b.estimate - 2.0 * s),
                ci_hi: s.map(|s| b.estimate + 2.0 * s),
                n_local: b.n_local,
                n_points: b.n_points,
            }
        })
        .collect();

    let ape = run_pipeline(
        run,
        &data,
        "lls_ape",
        &pipelines(run, EstimatorKind::LlsApe)?.remove(0).1,
    );
    let text = match run.format {
        OutputFormat::Json => json_string(&json!({
            "design": curve.design,
            "bandwidth": curve.bandwidth,
            "skipped_points": curve.skipped_points,
            "bins": rows,
            "ape": ape,
        }))?,
        OutputFormat::Csv => {
            let mut out: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        fmt_num(r.bin_center),
                        fmt_num(r.estimate),
                        opt_cell(r.se),
                        opt_cell(r.ci_lo),
                        opt_cell(r.ci_hi),
                        r.n_local.to_string(),
                    ]
                })
                .collect();
            out.push(vec![
                "ape".into(),
                opt_cell(ape.point),
                opt_cell(ape.se),
                opt_cell(ape.se.zip(ape.point).map(|(s, p)| p - 2.0 * s)),
                opt_cell(ape.se.zip(ape.point).map(|(s, p)| p + 2.0 * s)),
                String::new(),
            ]);
            csv_string(&["bin_center", "estimate", "se", "ci_lo", "ci_hi", "n_local"], out)?
        }
    };
    emit(run.output.as_deref(), &text)?;
    match ape.error {
        Some(e) => Err(CliError::Estimation(format!("lls_ape: {e}"))),
        None => Ok(()),
    }
}

/// Learning rates for implied weights when no simulation truth is available.
fn estimated_alphas(run: &RunConfig, data: &Dataset) -> Result<Option<Vec<Option<f64>>>, CliError> {
    let est = |e: beliefcal::lls::LlsError| CliError::Estimation(format!("weights: {e}"));
    Ok(match (data.design(), run.lls.alpha_source) {
        (Design::Panel, _) => None,
        (Design::Active, AlphaSource::Smoothed) => {
            Some(learning_rate_smoothed(data, run.lls.smoothing_bandwidth, None).map_err(est)?)
        }
        (Design::Passive, AlphaSource::Predicted) => Some(
            infer_alpha_passive(data, PassiveAlphaMode::Predicted, None)
                .map_err(est)?
                .into_iter()
                .map(Some)
                .collect(),
        ),
        _ => Some(raw_alphas(data)),
    })
}

pub fn weights(run: &RunConfig) -> Result<(), CliError> {
    let data = load(run)?;
    let truth = run.truth.as_deref().map(read_truth).transpose()?;
    let alphas;
    let input = match (&truth, data.design()) {
        (_, Design::Panel) => AlphaInput::None,
        (Some(t), _) => AlphaInput::Truth(t),
        (None, _) => {
            alphas = estimated_alphas(run, &data)?.unwrap_or_default();
            AlphaInput::Estimated(&alphas)
        }
    };
    let table = implied_weights(&data, input).map_err(|e| CliError::Estimation(format!("weights: {e}")))?;
    let text = match run.format {
        OutputFormat::Json => {
            let mut summary = json!({
                "design": table.design,
                "source": table.source.as_str(),
                "n_weighted": table.rows.len(),
                "negative_share": table.rows.iter().filter(|r| r.normalized < 0.0).count() as f64 / table.rows.len() as f64,
            });
            if let Some(t) = &truth {
                if t.len() == data.len() {
                    summary["weighted_tau"] = json!(table.weighted_average(&t.tau()));
                    summary["mean_tau"] = json!(t.mean_tau());
                }
            }
            let rows: Vec<_> = table
                .rows
                .iter()
                .map(|r| json!({"id": r.id, "unnormalized": r.unnormalized, "normalized": r.normalized}))
                .collect();
            summary["rows"] = json!(rows);
            json_string(&summary)?
        }
        OutputFormat::Csv => {
            let rows = table
                .rows
                .iter()
                .map(|r| vec![r.id.clone(), fmt_num(r.unnormalized), fmt_num(r.normalized)])
                .collect();
            csv_string(&["id", "unnormalized", "normalized"], rows)?
        }
    };
    emit(run.output.as_deref(), &text)
}
