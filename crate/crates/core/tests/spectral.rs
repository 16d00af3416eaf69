use lplab::geometry::{make_grid, DomainParams, GridKind};
use lplab::multipliers::make_profile;
use lplab::spectral::{build_operator, ModelTag, SpectralModel};
use proptest::prelude::*;

fn torus(n: usize) -> SpectralModel {
    let g = make_grid(GridKind::LinePeriodic, n, DomainParams::Periodic { period: 32.0 }).unwrap();
    build_operator(&g, ModelTag::Laplacian).unwrap()
}

fn bessel(n: usize) -> SpectralModel {
    let g = make_grid(GridKind::Halfline, n, DomainParams::Halfline { lambda: 1.0, right: 8.0 }).unwrap();
    build_operator(&g, ModelTag::Bessel { lambda: 1.0 }).unwrap()
}

fn models() -> [SpectralModel; 2] {
    [torus(32), bessel(32)]
}

fn inner(m: &SpectralModel, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).zip(m.grid().quad_weights()).map(|((x, y), w)| x * y * w).sum()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

fn signal() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 32)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn coefficients_satisfy_parseval(f in signal()) {
        for m in models() {
            let c = m.forward(&f).unwrap();
            let lhs = inner(&m, &f, &f);
            prop_assert!((c.iter().map(|v| v * v).sum::<f64>() - lhs).abs() <= 1e-10 * lhs.max(1.0));
        }
    }

    #[test]
    fn multipliers_are_self_adjoint(f in signal(), g in signal(), t in 0.05..4.0f64) {
        let p = make_profile("lp-heat").unwrap();
        for m in models() {
            let (tf, tg) = (m.apply_multiplier(&p, t, &f).unwrap(), m.apply_multiplier(&p, t, &g).unwrap());
            let (a, b) = (inner(&m, &tf, &g), inner(&m, &f, &tg));
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn heat_is_a_contraction_semigroup(f in signal(), s in 0.01..2.0f64, t in 0.01..2.0f64) {
        for m in models() {
            let composed = m.apply_heat(t, &m.apply_heat(s, &f).unwrap()).unwrap();
            let direct = m.apply_heat(s + t, &f).unwrap();
            prop_assert!(close(&composed, &direct, 1e-10));
            prop_assert!(inner(&m, &direct, &direct) <= inner(&m, &f, &f) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn heat_profile_is_the_semigroup_at_squared_scale(f in signal(), t in 0.05..3.0f64) {
        let heat = make_profile("heat").unwrap();
        for m in models() {
            prop_assert!(close(&m.apply_multiplier(&heat, t, &f).unwrap(), &m.apply_heat(t * t, &f).unwrap(), 1e-10));
        }
    }
}

#[test]
fn generator_is_nonnegative_and_kills_constants_on_the_torus() {
    let m = torus(32);
    let one = vec![1.0; 32];
    assert!(m.apply_generator(&one).unwrap().iter().all(|v| v.abs() < 1e-10));
    assert!(m.eigenvalues().iter().all(|&e| e >= -1e-12));
    let b = bessel(32);
    assert!(b.eigenvalues().iter().all(|&e| e > 0.0));
}
