use beliefcal::estimators::{wald_active, EstimatorOptions};
use beliefcal::inference::*;
use beliefcal::lls::{estimate_ape, estimate_ape_given, learning_rate_smoothed, AlphaSource, LlsConfig};
use beliefcal::simlab::{simulate_population, SimConfig};
use beliefcal::{validate_dataset_with_schema, BeliefRecord, Design};

#[test]
fn stage_one_uncertainty_propagates() {
    let cfg = LlsConfig {
        alpha_source: AlphaSource::Smoothed,
        smoothing_bandwidth: 0.1,
        ..LlsConfig::default()
    };
    let boot = BootstrapConfig::new(60, 17);
    let (mut full, mut frozen) = (0.0, 0.0);
    let reps = 3;
    for seed in 0..reps {
        let (ds, _) = simulate_population(&SimConfig::costly_acquisition(2_000, Design::Active, 70 + seed)).unwrap();
        full += bayesian_bootstrap(&ds, |d, w| estimate_ape(d, &cfg, Some(w)).map(|e| e.point), &boot)
            .unwrap()
            .se;
        let alpha = learning_rate_smoothed(&ds, cfg.smoothing_bandwidth, None).unwrap();
        frozen += bayesian_bootstrap(
            &ds,
            |d, w| estimate_ape_given(d, &cfg, &alpha, Some(w)).map(|e| e.point),
            &boot,
        )
        .unwrap()
        .se;
    }
    assert!(full > frozen, "full {full} frozen {frozen}");
}

#[test]
fn se_is_invariant_to_record_order() {
    let (ds, _) = simulate_population(&SimConfig::new(400, Design::Active, 21)).unwrap();
    let mut recs: Vec<BeliefRecord> = ds.records().to_vec();
    recs.reverse();
    let rev = validate_dataset_with_schema(recs, Design::Active, vec![]).unwrap();
    let boot = BootstrapConfig::new(100, 4);
    let stat = |d: &beliefcal::Dataset, w: &[f64]| wald_active(d, &EstimatorOptions::weighted(w)).map(|e| e.point);
    let a = bayesian_bootstrap(&ds, stat, &boot).unwrap();
    let b = bayesian_bootstrap(&rev, stat, &boot).unwrap();
    assert!((a.se - b.se).abs() < 1e-10 * a.se);
    for (x, y) in a.draws.iter().zip(&b.draws) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn empirical_scheme_gives_comparable_se() {
    let (ds, _) = simulate_population(&SimConfig::new(1_000, Design::Active, 22)).unwrap();
    let stat = |d: &beliefcal::Dataset, w: &[f64]| wald_active(d, &EstimatorOptions::weighted(w)).map(|e| e.point);
    let bayes = bayesian_bootstrap(&ds, stat, &BootstrapConfig::new(300, 5)).unwrap().se;
    let emp = bayesian_bootstrap(
        &ds,
        stat,
        &BootstrapConfig {
            scheme: BootstrapScheme::Empirical,
            ..BootstrapConfig::new(300, 5)
        },
    )
    .unwrap()
    .se;
    assert!((emp / bayes - 1.0).abs() < 0.25, "bayes {bayes} empirical {emp}");
}
