use beliefcal::estimators::*;
use beliefcal::simlab::{simulate_population, DistSpec, SimConfig, TauSpec};
use beliefcal::{validate_dataset, Arm, BeliefRecord, Design};
use proptest::prelude::*;

fn opts() -> EstimatorOptions<'static> {
    EstimatorOptions::default()
}

fn homogeneous(design: Design, n: usize, seed: u64) -> SimConfig {
    let mut cfg = SimConfig::new(n, design, seed);
    cfg.tau = TauSpec::Draw(DistSpec::Point(1.5));
    cfg
}

#[test]
fn homogeneous_panel_is_exact() {
    let mut cfg = homogeneous(Design::Panel, 2_000, 1);
    cfg.gamma = (0.0, 0.0);
    let (ds, _) = simulate_population(&cfg).unwrap();
    assert!((panel_fd(&ds, &opts()).unwrap().point - 1.5).abs() < 1e-10);

    cfg.gamma = (2.0, -3.0);
    let (ds, _) = simulate_population(&cfg).unwrap();
    assert!((panel_fd(&ds, &opts()).unwrap().point - 1.5).abs() < 1e-10);
}

#[test]
fn homogeneous_cross_sections_recover_tau() {
    let (ds, _) = simulate_population(&homogeneous(Design::Active, 20_000, 2)).unwrap();
    assert!((wald_active(&ds, &opts()).unwrap().point - 1.5).abs() < 0.05);
    let (ds, _) = simulate_population(&homogeneous(Design::Passive, 20_000, 3)).unwrap();
    assert!((tsls_passive_exposure(&ds, &opts()).unwrap().point - 1.5).abs() < 0.1);
}

#[test]
fn wald_is_reduced_form_over_first_stage() {
    for seed in 0..10 {
        let (ds, _) = simulate_population(&SimConfig::costly_acquisition(500, Design::Active, seed)).unwrap();
        let wald = wald_active(&ds, &opts()).unwrap().point;
        let rf = reduced_form(&ds, &opts()).unwrap().point;
        let fs = first_stage(&ds, &opts()).unwrap();
        assert_eq!(wald, rf / fs);
    }
}

#[test]
fn reduced_form_matches_truth_oracle() {
    let (ds, truth) = simulate_population(&SimConfig::costly_acquisition(20_000, Design::Active, 8)).unwrap();
    let rf = reduced_form(&ds, &opts()).unwrap().point;
    let oracle: f64 = truth
        .rows
        .iter()
        .map(|t| t.tau * (t.belief_a - t.belief_b))
        .sum::<f64>()
        / truth.len() as f64;
    assert!((rf - oracle).abs() < 0.05 * oracle.abs(), "rf {rf} oracle {oracle}");
}

#[test]
fn split_matches_restricted_oracle_on_average() {
    // the within-split first stage is small, so compare averages across replications
    let reps = 20;
    for side in [SplitSide::Above, SplitSide::Below] {
        let (mut est_sum, mut oracle_sum) = (0.0, 0.0);
        for seed in 0..reps {
            let mut cfg = SimConfig::costly_acquisition(40_000, Design::Passive, 100 + seed);
            cfg.u = DistSpec::Point(0.0);
            cfg.prior_mean = DistSpec::Uniform { lo: 1.0, hi: 3.0 };
            let (ds, truth) = simulate_population(&cfg).unwrap();
            let member = split_membership(&ds, side, true).unwrap();
            est_sum += tsls_split(&ds, side, true, &opts()).unwrap().point;
            let (mut num, mut den) = (0.0, 0.0);
            for (t, &m) in truth.rows.iter().zip(&member) {
                if m {
                    let w = t.alpha * (t.signal_a - t.prior);
                    num += w * t.tau;
                    den += w;
                }
            }
            oracle_sum += num / den;
        }
        let (est, oracle) = (est_sum / reps as f64, oracle_sum / reps as f64);
        assert!((est - oracle).abs() < 0.08, "{side:?}: est {est} oracle {oracle}");
    }
}

#[test]
fn split_sides_cover_the_sample() {
    let (ds, _) = simulate_population(&SimConfig::new(300, Design::Passive, 5)).unwrap();
    let above = split_membership(&ds, SplitSide::Above, true).unwrap();
    let below = split_membership(&ds, SplitSide::Below, true).unwrap();
    assert!(above.iter().zip(&below).all(|(a, b)| !(*a && *b)));
}

#[test]
fn all_priors_above_signal_leaves_below_split_empty() {
    let recs = (0..6)
        .map(|i| BeliefRecord {
            arm: Some(if i % 2 == 0 { Arm::A } else { Arm::B }),
            signal: (i % 2 == 0).then_some(0.0),
            signal_high: Some(0.0),
            ..BeliefRecord::new(
                format!("r{i}"),
                2.0 + i as f64,
                if i % 2 == 0 { 1.0 + i as f64 } else { 2.0 + i as f64 },
                i as f64,
            )
        })
        .collect();
    let ds = validate_dataset(recs, Design::Passive).unwrap();
    assert_eq!(
        tsls_split(&ds, SplitSide::Below, true, &opts()).unwrap_err(),
        EstimatorError::EmptySplit
    );
    assert!(tsls_split(&ds, SplitSide::Above, true, &opts()).is_ok());
}

#[test]
fn attenuation_direction() {
    let (ds, truth) = simulate_population(&SimConfig::costly_acquisition(20_000, Design::Passive, 31)).unwrap();
    assert!(tsls_passive_exposure(&ds, &opts()).unwrap().point < truth.mean_tau());
    let (ds, truth) = simulate_population(&SimConfig::costly_acquisition(20_000, Design::Active, 32)).unwrap();
    assert!(wald_active(&ds, &opts()).unwrap().point < truth.mean_tau());
}

#[test]
fn group_effects_with_common_groups_leave_wald_close() {
    let (ds, _) = simulate_population(&homogeneous(Design::Active, 4_000, 40)).unwrap();
    let recs: Vec<BeliefRecord> = ds
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| BeliefRecord {
            group: Some(format!("g{}", i % 3)),
            ..r.clone()
        })
        .collect();
    let grouped = validate_dataset(recs, Design::Active).unwrap();
    let with = wald_active(
        &grouped,
        &EstimatorOptions {
            group_effects: true,
            ..Default::default()
        },
    )
    .unwrap()
    .point;
    assert!((with - 1.5).abs() < 0.1);
}

proptest! {
    #[test]
    fn implied_weights_normalize(seed in 0u64..200, design_k in 0usize..3) {
        let design = [Design::Panel, Design::Active, Design::Passive][design_k];
        let (ds, truth) = simulate_population(&SimConfig::costly_acquisition(200, design, seed)).unwrap();
        let table = implied_weights(&ds, AlphaInput::Truth(&truth)).unwrap();
        let total: f64 = table.rows.iter().map(|r| r.normalized).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        if design != Design::Panel {
            prop_assert!(table.rows.iter().all(|r| r.unnormalized >= 0.0));
        }
    }

    #[test]
    fn panel_weights_reproduce_fd_exactly(seed in 0u64..200) {
        let mut cfg = SimConfig::costly_acquisition(300, Design::Panel, seed);
        cfg.u = DistSpec::Point(0.0);
        let (ds, truth) = simulate_population(&cfg).unwrap();
        let fd = panel_fd(&ds, &opts()).unwrap().point;
        let oracle = implied_weights(&ds, AlphaInput::None).unwrap().weighted_average(&truth.tau());
        prop_assert!((fd - oracle).abs() < 1e-9);
    }

    #[test]
    fn split_equivalence_without_priors(seed in 0u64..300) {
        let (ds, _) = simulate_population(&SimConfig::new(150, Design::Passive, seed)).unwrap();
        for side in [SplitSide::Above, SplitSide::Below] {
            prop_assert_eq!(split_membership(&ds, side, true).unwrap(), split_membership(&ds, side, false).unwrap());
        }
    }
}
