use beliefcal::estimators::{tsls_passive_exposure, EstimatorOptions};
use beliefcal::lls::*;
use beliefcal::simlab::{simulate_population, AlphaCovariate, DistSpec, SimConfig, TauSpec, ALPHA_COVARIATE};
use beliefcal::{validate_dataset_with_schema, BeliefRecord, Dataset, Design};
use proptest::prelude::*;

fn homogeneous(design: Design, n: usize, seed: u64) -> SimConfig {
    let mut cfg = SimConfig::new(n, design, seed);
    cfg.tau = TauSpec::Draw(DistSpec::Point(1.5));
    cfg.prior_var = Some(DistSpec::Uniform { lo: 0.25, hi: 4.0 });
    cfg
}

#[test]
fn homogeneous_effect_in_every_design() {
    let (ds, _) = simulate_population(&homogeneous(Design::Panel, 4_000, 1)).unwrap();
    let ape = estimate_ape(&ds, &LlsConfig::default(), None).unwrap();
    assert!((ape.point - 1.5).abs() < 0.05, "panel {}", ape.point);

    let (ds, _) = simulate_population(&homogeneous(Design::Active, 4_000, 2)).unwrap();
    let ape = estimate_ape(&ds, &LlsConfig::default(), None).unwrap();
    assert!((ape.point - 1.5).abs() < 0.05, "active {}", ape.point);

    let (ds, _) = simulate_population(&homogeneous(Design::Passive, 4_000, 3)).unwrap();
    let cfg = LlsConfig {
        alpha_source: AlphaSource::PriorVarRank,
        bandwidth: 0.1,
        ..LlsConfig::default()
    };
    let ape = estimate_ape(&ds, &cfg, None).unwrap();
    assert!((ape.point - 1.5).abs() < 0.1, "passive {}", ape.point);
}

fn shuffled(ds: &Dataset) -> Dataset {
    let mut recs: Vec<BeliefRecord> = ds.records().to_vec();
    recs.reverse();
    let n = recs.len();
    for i in 0..n / 2 {
        recs.swap(i, (i * 7919) % n);
    }
    validate_dataset_with_schema(recs, ds.design(), ds.covariate_names().to_vec()).unwrap()
}

#[test]
fn record_order_does_not_matter() {
    for (design, cfg) in [
        (Design::Active, LlsConfig::default()),
        (
            Design::Passive,
            LlsConfig {
                alpha_source: AlphaSource::PriorVarRank,
                ..LlsConfig::default()
            },
        ),
        (Design::Panel, LlsConfig::default()),
    ] {
        let (ds, _) = simulate_population(&SimConfig::costly_acquisition(1_500, design, 5)).unwrap();
        let a = estimate_ape(&ds, &cfg, None).unwrap().point;
        let b = estimate_ape(&shuffled(&ds), &cfg, None).unwrap().point;
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{design}: {a} vs {b}");
    }
}

#[test]
fn cape_tracks_a_declining_profile() {
    let mut cfg = SimConfig::new(8_000, Design::Active, 9);
    cfg.prior_var = Some(DistSpec::Uniform { lo: 0.25, hi: 4.0 });
    cfg.tau = TauSpec::AlphaRankLinear {
        intercept: 2.0,
        slope: -2.0,
    };
    let (ds, _) = simulate_population(&cfg).unwrap();
    let lcfg = LlsConfig {
        cape_bins: 5,
        ..LlsConfig::default()
    };
    let curve = estimate_cape(&ds, &lcfg, None).unwrap();
    assert_eq!(curve.bins.len(), 5);
    for w in curve.bins.windows(2) {
        assert!(w[1].estimate < w[0].estimate);
        assert!(w[1].grid_value > w[0].grid_value);
    }
    for b in &curve.bins {
        let expected = 2.0 - 2.0 * b.grid_value;
        assert!(
            (b.estimate - expected).abs() < 0.1,
            "bin {}: {} vs {}",
            b.index,
            b.estimate,
            expected
        );
        assert!(b.n_local >= 2);
    }
}

#[test]
fn single_bin_equals_ape() {
    let (ds, _) = simulate_population(&SimConfig::costly_acquisition(3_000, Design::Active, 10)).unwrap();
    let cfg = LlsConfig {
        cape_bins: 1,
        ..LlsConfig::default()
    };
    let curve = estimate_cape(&ds, &cfg, None).unwrap();
    let ape = estimate_ape(&ds, &cfg, None).unwrap();
    assert_eq!(curve.bins.len(), 1);
    assert!((curve.bins[0].estimate - ape.point).abs() < 1e-12);
}

#[test]
fn predicted_alpha_extrapolates_to_controls() {
    let mut cfg = SimConfig::new(6_000, Design::Passive, 11);
    cfg.prior_var = Some(DistSpec::Uniform { lo: 0.25, hi: 4.0 });
    cfg.alpha_covariate = Some(AlphaCovariate {
        offset: 1.0,
        scale: 2.0,
        noise_sd: 0.0,
    });
    let (ds, truth) = simulate_population(&cfg).unwrap();
    assert_eq!(ds.covariate_names(), [ALPHA_COVARIATE.to_string()]);
    let fitted = infer_alpha_passive(&ds, PassiveAlphaMode::Predicted, None).unwrap();
    for ((f, t), d) in fitted.iter().zip(&truth.rows).zip(ds.derived()) {
        if !d.treat {
            assert!((f - t.alpha).abs() < 1e-8);
        }
    }

    // noisy proxy: still centered on the truth for controls
    cfg.alpha_covariate = Some(AlphaCovariate {
        offset: 0.0,
        scale: 1.0,
        noise_sd: 0.05,
    });
    let (ds, truth) = simulate_population(&cfg).unwrap();
    let fitted = infer_alpha_passive(&ds, PassiveAlphaMode::Predicted, None).unwrap();
    let devs: Vec<f64> = fitted
        .iter()
        .zip(&truth.rows)
        .zip(ds.derived())
        .filter(|(_, d)| !d.treat)
        .map(|((f, t), _)| f - t.alpha)
        .collect();
    let mean_dev = devs.iter().sum::<f64>() / devs.len() as f64;
    assert!(mean_dev.abs() < 0.01, "mean deviation {mean_dev}");
}

#[test]
fn lls_beats_tsls_under_costly_acquisition() {
    let (ds, truth) = simulate_population(&SimConfig::costly_acquisition(20_000, Design::Passive, 12)).unwrap();
    let cfg = LlsConfig {
        alpha_source: AlphaSource::PriorVarRank,
        ..LlsConfig::default()
    };
    let ape = estimate_ape(&ds, &cfg, None).unwrap();
    let tsls = tsls_passive_exposure(&ds, &EstimatorOptions::default()).unwrap();
    assert!(ape.point > tsls.point);
    assert!((ape.point / truth.mean_tau() - 1.0).abs() < 0.05);
    assert_eq!(ape.bandwidth, Some(0.05));
    assert!(ape.n_used <= ape.n_total);
}

#[test]
fn smoothed_alpha_runs_end_to_end() {
    let (ds, truth) = simulate_population(&homogeneous(Design::Active, 3_000, 13)).unwrap();
    let cfg = LlsConfig {
        alpha_source: AlphaSource::Smoothed,
        ..LlsConfig::default()
    };
    let ape = estimate_ape(&ds, &cfg, None).unwrap();
    assert!((ape.point - truth.mean_tau()).abs() < 0.05);
}

#[test]
fn too_many_skips_abort() {
    // distinct learning rates and a tiny window: each neighborhood holds one record
    let (ds, _) = simulate_population(&homogeneous(Design::Active, 200, 14)).unwrap();
    let cfg = LlsConfig {
        bandwidth: 0.001,
        ..LlsConfig::default()
    };
    assert!(matches!(
        estimate_ape(&ds, &cfg, None),
        Err(LlsError::AllPointsSkipped) | Err(LlsError::TooManySkipped { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn panel_time_trend_is_absorbed(seed in 0u64..1000, shift in -5.0f64..5.0) {
        let mut cfg = SimConfig::costly_acquisition(400, Design::Panel, seed);
        let (a, _) = simulate_population(&cfg).unwrap();
        cfg.gamma = (0.0, shift);
        let (b, _) = simulate_population(&cfg).unwrap();
        let lcfg = LlsConfig { bandwidth: 0.2, ..LlsConfig::default() };
        let la = local_estimates(&a, &lcfg, None).unwrap();
        let lb = local_estimates(&b, &lcfg, None).unwrap();
        for (x, y) in la.centers.iter().zip(&lb.centers) {
            match (x.local, y.local) {
                (Some(p), Some(q)) => prop_assert!((p.estimate - q.estimate).abs() < 1e-8),
                (None, None) => {}
                _ => prop_assert!(false, "skip pattern changed"),
            }
        }
    }

    #[test]
    fn two_point_neighborhoods_are_binary_contrasts(
        ys in prop::collection::vec(-5.0f64..5.0, 6..30),
        dx in 0.1f64..3.0,
        ws in prop::collection::vec(0.1f64..3.0, 30),
    ) {
        let n = ys.len();
        let recs: Vec<BeliefRecord> = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| BeliefRecord {
                outcome_pre: Some(0.0),
                ..BeliefRecord::new(format!("r{i:02}"), 0.0, if i % 2 == 0 { dx } else { 0.0 }, y)
            })
            .collect();
        let ds = validate_dataset_with_schema(recs, Design::Panel, vec![]).unwrap();
        let x: Vec<f64> = ds.derived().iter().map(|d| d.delta_x).collect();
        let w = &ws[..n];
        let expected = beliefcal::regress::binary_contrast(&ys, &x, Some(w)).unwrap();
        let local = local_estimates(&ds, &LlsConfig::default(), Some(w)).unwrap();
        for c in local.centers {
            prop_assert!((c.local.unwrap().estimate - expected).abs() < 1e-10);
        }
    }
}
