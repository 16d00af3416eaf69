use lplab::geometry::{make_grid, DomainParams, GridKind};
use lplab::multipliers::{build_calderon, gamma_bump, make_profile, omega_bump, PartitionKind};
use lplab::spectral::{build_operator, ModelTag};
use proptest::prelude::*;
use std::f64::consts::PI;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn partition_identity_holds_pointwise(e in -3.0..3.0f64) {
        let x = 10f64.powf(e);
        let p = make_profile("lp-heat").unwrap();
        for kind in [PartitionKind::Inhomogeneous, PartitionKind::Homogeneous] {
            let part = build_calderon(&p, kind).unwrap();
            prop_assert!((part.identity_sum(x, None) - 1.0).abs() < 1e-10, "{kind:?} at {x}");
        }
    }

    #[test]
    fn bump_supports_are_exact(eps in 0.1..5.0f64, x in -12.0..12.0f64) {
        prop_assert_eq!(gamma_bump(eps, x) > 0.0, 0.5 * eps < x.abs() && x.abs() < 2.0 * eps);
        prop_assert_eq!(omega_bump(eps, x) > 0.0, x.abs() < 2.0 * eps);
        prop_assert_eq!(gamma_bump(eps, x), gamma_bump(eps, -x));
    }

    #[test]
    fn profile_algebra_is_pointwise(c in 0.1..4.0f64, x in 0.0..6.0f64) {
        let a = make_profile("lp-heat").unwrap();
        let b = make_profile("lp-heat-3").unwrap();
        prop_assert!((a.dilate(c).unwrap().eval(x) - a.eval(c * x)).abs() < 1e-15);
        prop_assert!((a.scaled(c).unwrap().eval(x) - c * a.eval(x)).abs() < 1e-15);
        prop_assert!((a.product(&b).unwrap().eval(x) - a.eval(x) * b.eval(x)).abs() < 1e-15);
    }

    #[test]
    fn partitions_reconstruct_mean_zero_signals(
        amps in prop::collection::vec(-1.0..1.0f64, 6),
        t in 0.2..4.0f64,
    ) {
        let g = make_grid(GridKind::LinePeriodic, 32, DomainParams::Periodic { period: 32.0 }).unwrap();
        let m = build_operator(&g, ModelTag::Laplacian).unwrap();
        let f: Vec<f64> = g
            .points()
            .iter()
            .map(|&x| amps.iter().enumerate().map(|(k, a)| a * (2.0 * PI * (k + 1) as f64 * x / 32.0 + k as f64).cos()).sum())
            .collect();
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let p = make_profile("lp-heat").unwrap();
        for kind in [PartitionKind::Inhomogeneous, PartitionKind::Homogeneous] {
            let rec = build_calderon(&p, kind).unwrap().reconstruct(&m, t, &f).unwrap();
            let err = rec.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-10 * norm, "{kind:?}: {err}");
        }
    }
}

#[test]
fn unknown_tags_are_rejected() {
    for tag in ["lp-heat-0", "lp-heat-17", "lp-heat-x", "wave"] {
        assert!(make_profile(tag).is_err(), "{tag}");
    }
}

#[test]
fn lp_heat_is_admissible_and_heat_is_not() {
    let lp = make_profile("lp-heat").unwrap();
    for x in [0.0, 0.3, 1.0, 2.5] {
        assert!((lp.eval(x) - x * x * (-x * x).exp()).abs() < 1e-16);
    }
    assert_eq!(lp.phi0(), 0.0);
    assert!(lp.report().admissible);
    let heat = make_profile("heat").unwrap();
    assert_eq!(heat.phi0(), 1.0);
    assert!(heat.report().class_a && !heat.report().admissible);
}
