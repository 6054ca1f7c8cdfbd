mod support;

use crossmatch::matching::{nearest_neighbor_match, Estimand, MatchResult, MatchSpec};
use proptest::prelude::*;
use support::{brute_force_match, random_instance, random_spec, rng};

fn as_tuples(r: &MatchResult) -> Vec<(usize, usize, f64)> {
    r.pairs.iter().map(|p| (p.focal, p.matched, p.weight)).collect()
}

#[test]
fn agrees_with_exhaustive_scan() {
    let mut rng = rng(31);
    for case in 0..300 {
        let (scores, z) = random_instance(&mut rng, 500);
        for estimand in Estimand::ALL {
            let spec = random_spec(&mut rng, &z, estimand);
            let got = nearest_neighbor_match(&scores, &z, &spec, estimand).unwrap();
            let (pairs, unmatched) = brute_force_match(&scores, &z, &spec, estimand);
            assert_eq!(as_tuples(&got), pairs, "case {case} {estimand} {spec:?}");
            assert_eq!(got.unmatched, unmatched, "case {case} {estimand} {spec:?}");
        }
    }
}

#[test]
fn without_replacement_rejects_oversized_focal_arm() {
    let spec = MatchSpec {
        with_replacement: false,
        ..MatchSpec::default()
    };
    let z = [1, 1, 1, 0, 0];
    let scores = [0.1, 0.2, 0.3, 0.4, 0.5];
    assert!(nearest_neighbor_match(&scores, &z, &spec, Estimand::Att).is_err());
    assert!(nearest_neighbor_match(&scores, &z, &spec, Estimand::Ate).is_err());
    assert!(nearest_neighbor_match(&scores, &z, &spec, Estimand::Atnt).is_ok());
}

fn dyadic_instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    prop::collection::vec((1u32..256, any::<bool>()), 2..120).prop_map(|units| {
        let mut z: Vec<u8> = units.iter().map(|u| u8::from(u.1)).collect();
        let n = z.len();
        z[0] = 0;
        z[n - 1] = 1;
        (units.iter().map(|u| f64::from(u.0) / 1024.0).collect(), z)
    })
}

fn estimand() -> impl Strategy<Value = Estimand> {
    prop::sample::select(Estimand::ALL.to_vec())
}

proptest! {
    #[test]
    fn weights_and_k_counts_are_conserved((scores, z) in dyadic_instance(), est in estimand(), ties in any::<bool>()) {
        let spec = MatchSpec { allow_ties: ties, ..MatchSpec::default() };
        let r = nearest_neighbor_match(&scores, &z, &spec, est).unwrap();
        for (i, group) in r.by_focal() {
            let total: f64 = group.iter().map(|p| p.weight).sum();
            prop_assert!((total - 1.0).abs() < 1e-12, "focal {} sums to {}", i, total);
            for p in group {
                prop_assert_ne!(z[p.focal], z[p.matched]);
                prop_assert!(p.weight > 0.0 && p.weight <= 1.0);
            }
        }
        let k_total: f64 = r.k_counts.iter().sum();
        prop_assert!((k_total - r.n_matched_focal() as f64).abs() < 1e-9);
    }

    #[test]
    fn every_pair_is_at_the_minimum_distance((scores, z) in dyadic_instance(), est in estimand()) {
        let r = nearest_neighbor_match(&scores, &z, &MatchSpec::default(), est).unwrap();
        for p in &r.pairs {
            let best = (0..z.len())
                .filter(|&j| z[j] != z[p.focal])
                .map(|j| (scores[p.focal] - scores[j]).abs())
                .fold(f64::INFINITY, f64::min);
            prop_assert!((scores[p.focal] - scores[p.matched]).abs() <= best + 1e-8);
        }
    }

    #[test]
    fn shifting_all_scores_keeps_the_match((scores, z) in dyadic_instance(), est in estimand(), shift in 0u32..256, ties in any::<bool>()) {
        // dyadic scores keep every distance exact under the shift
        let shifted: Vec<f64> = scores.iter().map(|s| s + f64::from(shift) / 1024.0).collect();
        let spec = MatchSpec { allow_ties: ties, ..MatchSpec::default() };
        let a = nearest_neighbor_match(&scores, &z, &spec, est).unwrap();
        let b = nearest_neighbor_match(&shifted, &z, &spec, est).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ate_restricted_to_treated_is_att((scores, z) in dyadic_instance(), ties in any::<bool>(), caliper in prop::option::of(0.001f64..0.1)) {
        let spec = MatchSpec { allow_ties: ties, caliper, ..MatchSpec::default() };
        let ate = nearest_neighbor_match(&scores, &z, &spec, Estimand::Ate).unwrap();
        let att = nearest_neighbor_match(&scores, &z, &spec, Estimand::Att).unwrap();
        let atnt = nearest_neighbor_match(&scores, &z, &spec, Estimand::Atnt).unwrap();
        let treated: Vec<_> = ate.pairs.iter().filter(|p| z[p.focal] == 1).copied().collect();
        let controls: Vec<_> = ate.pairs.iter().filter(|p| z[p.focal] == 0).copied().collect();
        prop_assert_eq!(treated, att.pairs);
        prop_assert_eq!(controls, atnt.pairs);
    }

    #[test]
    fn matching_is_deterministic((scores, z) in dyadic_instance(), est in estimand()) {
        let a = nearest_neighbor_match(&scores, &z, &MatchSpec::default(), est).unwrap();
        let b = nearest_neighbor_match(&scores, &z, &MatchSpec::default(), est).unwrap();
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
