use crossmatch::propensity::{encode_design, fit_logistic, overlap_report, wald_inference};
use crossmatch::synthlab::{generate, scenario_suite, suite_scenario, true_estimands};

#[test]
fn heterogeneous_truth_orders_att_above_ate() {
    let data = generate(&suite_scenario("heterogeneous").unwrap()).unwrap();
    let truth = true_estimands(&data.units).unwrap();
    assert!(truth.att - truth.ate > 0.01, "{truth:?}");
    assert!(truth.ate > truth.atnt);
}

#[test]
fn every_suite_scenario_satisfies_consistency_and_decomposition() {
    for scenario in scenario_suite() {
        let data = generate(&scenario).unwrap();
        for u in &data.units {
            let y = if u.z == 1 { u.y1 } else { u.y0 };
            assert_eq!(u.y, y);
            assert!(u.e_true > 0.0 && u.e_true < 1.0);
        }
        let truth = true_estimands(&data.units).unwrap();
        let [n0, n1] = data.table.arm_counts();
        let mix = (n1 as f64 * truth.att + n0 as f64 * truth.atnt) / scenario.n as f64;
        assert!((truth.ate - mix).abs() < 1e-12, "{}", scenario.name);
        if scenario.name == "null" {
            assert_eq!((truth.ate, truth.att, truth.atnt), (0.0, 0.0, 0.0));
        }
    }
}

#[test]
fn weak_overlap_scenario_is_flagged() {
    let data = generate(&suite_scenario("weak_overlap").unwrap()).unwrap();
    let model = fit_logistic(&encode_design(&data.table), data.table.treatment()).unwrap();
    assert!(overlap_report(&model.scores, data.table.treatment(), (0.01, 0.99)).poor_overlap);
}

#[test]
fn refit_recovers_the_assignment_coefficients() {
    let scenario = suite_scenario("strong_confounding").unwrap().with_n(40_000).with_seed(4242);
    let data = generate(&scenario).unwrap();
    let model = fit_logistic(&encode_design(&data.table), data.table.treatment()).unwrap();
    for (row, gamma) in wald_inference(&model).unwrap().iter().zip(&scenario.ps_coefficients) {
        assert!(
            (row.estimate - gamma).abs() < 3.0 * row.std_error,
            "{}: {} ± {} vs {gamma}",
            row.term,
            row.estimate,
            row.std_error
        );
    }
}

#[test]
fn scenario_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.toml");
    let scenario = suite_scenario("binary_shots").unwrap();
    std::fs::write(&path, scenario.to_config_string()).unwrap();
    let back = crossmatch::Scenario::from_config_file(&path).unwrap();
    assert_eq!(back, scenario);
    let a = generate(&scenario).unwrap();
    let b = generate(&back).unwrap();
    assert_eq!(format!("{:?}", a.units), format!("{:?}", b.units));
    assert_ne!(
        generate(&scenario.with_seed(1)).unwrap().table.outcome(),
        a.table.outcome()
    );
}
