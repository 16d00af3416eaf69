use lplab::geometry::{make_grid, DomainParams, Grid, GridKind};
use lplab::multipliers::{make_profile, MultiplierProfile};
use lplab::spectral::{build_operator, ModelTag, SpectralModel};
use lplab::squarefns::*;
use lplab::{Exec, Field2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn torus(n: usize) -> Grid {
    make_grid(GridKind::LinePeriodic, n, DomainParams::Periodic { period: 32.0 }).unwrap()
}

fn laplacian(n: usize) -> SpectralModel {
    build_operator(&torus(n), ModelTag::Laplacian).unwrap()
}

fn l2(f: &Field2, g: &Grid) -> f64 {
    let q = g.quad_weights();
    let mut s = 0.0;
    for i in 0..f.n1() {
        for j in 0..f.n2() {
            s += f.get(i, j).powi(2) * q[i] * q[j];
        }
    }
    s.sqrt()
}

// Sum of random trig terms with frequencies 2πk/32, |k| ∈ [2, 4] on each axis.
fn band_limited(n: usize, seed: u64) -> Field2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = torus(n).points().to_vec();
    let terms: Vec<(f64, f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let k1 = rng.gen_range(2..=4) as f64;
            let k2 = rng.gen_range(2..=4) as f64;
            (rng.gen_range(-1.0..1.0), k1, k2, rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    Field2::from_fn(n, n, |i, j| {
        terms
            .iter()
            .map(|&(a, k1, k2, p1, p2)| a * (2.0 * PI * k1 * x[i] / 32.0 + p1).cos() * (2.0 * PI * k2 * x[j] / 32.0 + p2).cos())
            .sum()
    })
}

fn mode(n: usize, k1: f64, k2: f64, ph1: f64, ph2: f64) -> Field2 {
    let x = torus(n).points().to_vec();
    Field2::from_fn(n, n, |i, j| (2.0 * PI * k1 * x[i] / 32.0 + ph1).cos() * (2.0 * PI * k2 * x[j] / 32.0 + ph2).cos())
}

fn lp_heat() -> MultiplierProfile {
    make_profile("lp-heat").unwrap()
}

fn engine<'a>(
    m: &'a SpectralModel,
    p: &'a MultiplierProfile,
    ladder: &ScaleLadder,
    req: FunctionalRequest,
) -> SquareEngine<'a> {
    SquareEngine::new([m, m], [p, p], ladder, req).unwrap()
}

fn full_request() -> FunctionalRequest {
    FunctionalRequest { area: true, gstar: Some((3.0, 3.0)), peetre: Some((2.0, 2.0)), checked: true }
}

#[test]
fn single_mode_values_are_symbol_products() {
    let m = laplacian(32);
    let p = lp_heat();
    let ladder = make_ladder(-1, 1, 2).unwrap();
    let f = mode(32, 3.0, 2.0, 0.3, -1.1);
    let sf = multiplier_field(&m, &m, &p, &p, &ladder, &f, Exec::Sequential).unwrap();
    let (xi1, xi2) = (2.0 * PI * 3.0 / 32.0, 2.0 * PI * 2.0 / 32.0);
    for (a, &t1) in ladder.t().iter().enumerate() {
        for (b, &t2) in ladder.t().iter().enumerate() {
            let want = f.scale(p.eval(t1 * xi1) * p.eval(t2 * xi2));
            assert!(sf.get(a, b).max_abs_diff(&want) < 1e-12);
        }
    }
    let zero = multiplier_field(&m, &m, &p, &p, &ladder, &Field2::zeros(32, 32), Exec::Sequential).unwrap();
    assert!(zero.values().iter().all(|v| v.max_abs() == 0.0));
}

#[test]
fn axis_order_swap_commutes() {
    let g1 = torus(32);
    let g2 = make_grid(GridKind::Halfline, 24, DomainParams::Halfline { lambda: 0.5, right: 6.0 }).unwrap();
    let m1 = build_operator(&g1, ModelTag::Laplacian).unwrap();
    let m2 = build_operator(&g2, ModelTag::Bessel { lambda: 0.5 }).unwrap();
    let (p1, p2) = (lp_heat(), make_profile("lp-heat-2").unwrap());
    let ladder = make_ladder(-1, 1, 1).unwrap();
    let f = Field2::from_fn(32, 24, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0);
    let a = multiplier_field(&m1, &m2, &p1, &p2, &ladder, &f, Exec::Sequential).unwrap();
    let b = multiplier_field(&m2, &m1, &p2, &p1, &ladder, &f.transpose(), Exec::Parallel).unwrap();
    let n = ladder.len();
    for i in 0..n {
        for j in 0..n {
            assert!(a.get(i, j).max_abs_diff(&b.get(j, i).transpose()) < 1e-12);
        }
    }
}

#[test]
fn engine_matches_materialized_path() {
    let g1 = torus(32);
    let g2 = make_grid(GridKind::Halfline, 24, DomainParams::Halfline { lambda: 1.0, right: 8.0 }).unwrap();
    let m1 = build_operator(&g1, ModelTag::Laplacian).unwrap();
    let m2 = build_operator(&g2, ModelTag::Bessel { lambda: 1.0 }).unwrap();
    let p = lp_heat();
    let ladder = make_ladder(-2, 2, 2).unwrap();
    let f = Field2::from_fn(32, 24, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
    let req = full_request();
    let eng = SquareEngine::new([&m1, &m2], [&p, &p], &ladder, req).unwrap();
    let out = eng.evaluate(&f, Exec::Parallel).unwrap();
    let sf = multiplier_field(&m1, &m2, &p, &p, &ladder, &f, Exec::Sequential).unwrap();
    let tol = 1e-10 * g_function(&sf).max_abs();
    assert!(out.g.max_abs_diff(&g_function(&sf)) < tol);
    assert!(out.area.as_ref().unwrap().max_abs_diff(&area_function(&sf)) < tol);
    assert!(out.gstar.as_ref().unwrap().max_abs_diff(&gstar_function(&sf, 3.0, 3.0).unwrap()) < tol);
    let pe = peetre_field(&sf, 2.0, 2.0, Exec::Sequential).unwrap();
    assert!(out.peetre.as_ref().unwrap().max_abs_diff(&vertical_peetre_norm(&pe)) < tol);
    let seq = eng.evaluate(&f, Exec::Sequential).unwrap();
    assert_eq!(seq, out);
}

#[test]
fn peetre_field_matches_brute_force_on_torus() {
    let g = torus(16);
    let m = build_operator(&g, ModelTag::Laplacian).unwrap();
    let p = lp_heat();
    let ladder = make_ladder(-2, 1, 1).unwrap();
    let f = Field2::from_fn(16, 16, |i, j| ((i * 5 + j * 3) % 7) as f64 - 3.0);
    let sf = multiplier_field(&m, &m, &p, &p, &ladder, &f, Exec::Sequential).unwrap();
    let (l1, l2) = (1.5, 2.5);
    let pe = peetre_field(&sf, l1, l2, Exec::Parallel).unwrap();
    let x = g.points();
    let n = ladder.len();
    for a in 0..n {
        for b in 0..n {
            let (t1, t2) = (ladder.t()[a], ladder.t()[b]);
            let v = sf.get(a, b);
            for x1 in 0..16 {
                for x2 in 0..16 {
                    let mut best = 0.0f64;
                    for y1 in 0..16 {
                        for y2 in 0..16 {
                            let w = (1.0 + g.dist(x[x1], x[y1]) / t1).powf(-l1) * (1.0 + g.dist(x[x2], x[y2]) / t2).powf(-l2);
                            best = best.max(v.get(y1, y2).abs() * w);
                        }
                    }
                    assert!((pe.get(a, b).get(x1, x2) - best).abs() <= 1e-14 * best.max(1.0));
                }
            }
        }
    }
}

#[test]
fn g_of_single_mode_is_an_eighth() {
    let m = laplacian(64);
    let p = lp_heat();
    let ladder = make_ladder(-8, 8, 4).unwrap();
    let f = mode(64, 3.0, 2.0, 0.4, 0.0);
    let out = engine(&m, &p, &ladder, FunctionalRequest { area: false, ..Default::default() })
        .evaluate(&f, Exec::Parallel)
        .unwrap();
    let top = f.max_abs();
    for (g, v) in out.g.as_slice().iter().zip(f.as_slice()) {
        if v.abs() > 0.1 * top {
            assert!((g / v.abs() - 0.125).abs() < 0.01 * 0.125, "{g} {v}");
        }
    }
}

#[test]
fn l2_identities_on_the_torus() {
    let m = laplacian(128);
    let p = lp_heat();
    let ladder = make_ladder(-4, 8, 4).unwrap();
    let req = FunctionalRequest { area: true, gstar: Some((3.0, 3.0)), peetre: None, checked: false };
    let eng = engine(&m, &p, &ladder, req);
    let g = m.grid();
    for seed in 0..3 {
        let f = band_limited(128, seed);
        let out = eng.evaluate(&f, Exec::Parallel).unwrap();
        let ng = l2(&out.g, g);
        assert!((ng / l2(&f, g) / 0.125 - 1.0).abs() < 0.02);
        assert!((l2(out.area.as_ref().unwrap(), g) / ng - 1.0).abs() < 0.02);
        let r = l2(out.gstar.as_ref().unwrap(), g) / ng;
        assert!((r / 0.5 - 1.0).abs() < 0.03, "g*/g = {r}");
        assert!(tail_energy(&eng, &f).unwrap().certified);
    }
}

#[test]
fn phase_averaged_area_is_translation_invariant() {
    let m = laplacian(64);
    let p = lp_heat();
    let ladder = make_ladder(-4, 8, 4).unwrap();
    let eng = engine(&m, &p, &ladder, FunctionalRequest::default());
    let mut total = Field2::zeros(64, 64);
    for (a, b) in [(0.0, 0.0), (0.5 * PI, 0.0), (0.0, 0.5 * PI), (0.5 * PI, 0.5 * PI)] {
        let s = eng.evaluate(&mode(64, 3.0, 2.0, a, b), Exec::Parallel).unwrap().area.unwrap();
        total.axpy(1.0, &s.map(|v| v * v));
    }
    let (lo, hi) = total.as_slice().iter().fold((f64::MAX, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    assert!(hi / lo - 1.0 < 0.02, "{lo} {hi}");
}

#[test]
fn pointwise_chain_holds() {
    let m = laplacian(32);
    let p = lp_heat();
    let ladder = make_ladder(-3, 4, 2).unwrap();
    let eng = engine(&m, &p, &ladder, full_request());
    for seed in 0..3 {
        let f = band_limited(32, seed);
        let out = eng.evaluate(&f, Exec::Parallel).unwrap();
        let ch = out.chain.unwrap();
        assert_eq!(ch.total(), 0, "{ch:?}");
        // g* ≥ 2^{-(n₁λ₁+n₂λ₂)/2} S with n = 1, λ = 3.
        let (s, gs) = (out.area.unwrap(), out.gstar.unwrap());
        for (a, b) in s.as_slice().iter().zip(gs.as_slice()) {
            assert!(*b >= a * 2f64.powf(-3.0) * (1.0 - 1e-12));
        }
    }
}

#[test]
fn gstar_nonincreasing_in_lambda() {
    let m = laplacian(32);
    let p = lp_heat();
    let ladder = make_ladder(-3, 4, 2).unwrap();
    let f = band_limited(32, 9);
    let sf = multiplier_field(&m, &m, &p, &p, &ladder, &f, Exec::Parallel).unwrap();
    let vals: Vec<Field2> = [1.0, 2.0, 4.0, 8.0].iter().map(|&l| gstar_function(&sf, l, l).unwrap()).collect();
    for w in vals.windows(2) {
        for (a, b) in w[0].as_slice().iter().zip(w[1].as_slice()) {
            assert!(*b <= a * (1.0 + 1e-12));
        }
    }
    assert!(gstar_function(&sf, 0.0, 1.0).is_err());
    assert!(peetre_field(&sf, 1.0, -1.0, Exec::Sequential).is_err());
}

#[test]
fn steep_peetre_localizes() {
    let m = laplacian(16);
    let p = lp_heat();
    let ladder = make_ladder(-1, 1, 1).unwrap();
    let f = Field2::from_fn(16, 16, |i, j| ((i * 5 + j * 3) % 7) as f64 - 3.0);
    let sf = multiplier_field(&m, &m, &p, &p, &ladder, &f, Exec::Sequential).unwrap();
    let pe = peetre_field(&sf, 400.0, 400.0, Exec::Sequential).unwrap();
    for (v, q) in sf.values().iter().zip(pe.values()) {
        for i in 0..16 {
            for j in 0..16 {
                let here = v.get(i, j).abs();
                let mut nb = here;
                for (di, dj) in [(1, 0), (15, 0), (0, 1), (0, 15), (1, 1), (15, 15), (1, 15), (15, 1)] {
                    nb = nb.max(v.get((i + di) % 16, (j + dj) % 16).abs());
                }
                let got = q.get(i, j);
                assert!(got >= here * (1.0 - 1e-12) && got <= nb);
                assert!((got - here).abs() <= 1e-6 * nb.max(1e-300) || here < nb);
            }
        }
    }
}

#[test]
fn vertical_peetre_dominates_g() {
    let m = laplacian(32);
    let p = lp_heat();
    let ladder = make_ladder(-2, 3, 2).unwrap();
    let f = band_limited(32, 4);
    let out = engine(&m, &p, &ladder, full_request()).evaluate(&f, Exec::Parallel).unwrap();
    let pe = out.peetre.unwrap();
    for (a, b) in out.g.as_slice().iter().zip(pe.as_slice()) {
        assert!(*b >= a * (1.0 - 1e-12));
    }
    let z = engine(&m, &p, &ladder, full_request()).evaluate(&Field2::zeros(32, 32), Exec::Parallel).unwrap();
    assert_eq!(z.g.max_abs(), 0.0);
    assert_eq!(z.peetre.unwrap().max_abs(), 0.0);
}

#[test]
fn ladder_refinement_changes_g_little() {
    let m = laplacian(64);
    let p = lp_heat();
    let f = band_limited(64, 2);
    let norm = |spo: usize| {
        let ladder = make_ladder(-4, 8, spo).unwrap();
        let out = engine(&m, &p, &ladder, FunctionalRequest { area: false, ..Default::default() })
            .evaluate(&f, Exec::Parallel)
            .unwrap();
        l2(&out.g, m.grid())
    };
    let (a, b) = (norm(4), norm(8));
    assert!((a / b - 1.0).abs() < 0.005);
}

#[test]
fn narrow_ladder_fails_tail_certification() {
    let m = laplacian(64);
    let p = lp_heat();
    let ladder = make_ladder(0, 1, 4).unwrap();
    let eng = engine(&m, &p, &ladder, FunctionalRequest::default());
    let rep = tail_energy(&eng, &band_limited(64, 1)).unwrap();
    assert!(!rep.certified && rep.fraction[0] > rep.budget);
}

#[test]
fn profile_energy_of_lp_heat() {
    assert!((profile_log_energy(&lp_heat()) - 0.125).abs() < 1e-10);
}

fn lq_l2(seq: &[Vec<Field2>]) -> f64 {
    seq.iter().flatten().map(|f| f.as_slice().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn functionals_are_absolutely_homogeneous(c in -20.0f64..20.0, seed in 0u64..1000) {
        let m = laplacian(16);
        let p = lp_heat();
        let ladder = make_ladder(-1, 2, 1).unwrap();
        let eng = engine(&m, &p, &ladder, full_request());
        let f = band_limited(16, seed);
        let a = eng.evaluate(&f, Exec::Sequential).unwrap();
        let b = eng.evaluate(&f.scale(c), Exec::Sequential).unwrap();
        let pairs = [(&a.g, &b.g), (a.area.as_ref().unwrap(), b.area.as_ref().unwrap()),
                     (a.gstar.as_ref().unwrap(), b.gstar.as_ref().unwrap()), (a.peetre.as_ref().unwrap(), b.peetre.as_ref().unwrap())];
        for (x, y) in pairs {
            prop_assert!(y.max_abs_diff(&x.scale(c.abs())) <= 1e-12 * x.max_abs().max(1e-300) * c.abs().max(1.0));
        }
    }

    #[test]
    fn scale_convolution_obeys_young(
        vals in prop::collection::vec(0.0f64..1.0, 6 * 5 * 4),
        sigma in prop::sample::select(vec![0.5f64, 1.0, 2.0]),
    ) {
        let seq: Vec<Vec<Field2>> = (0..6)
            .map(|a| (0..5).map(|b| Field2::from_vec(2, 2, vals[(a * 5 + b) * 4..(a * 5 + b + 1) * 4].to_vec()).unwrap()).collect())
            .collect();
        let h = ry_convolve(&seq, sigma, sigma).unwrap();
        let bound = ry_young_constant(sigma, sigma);
        prop_assert!(lq_l2(&h) <= bound * lq_l2(&seq) * (1.0 + 1e-12));
        let sharp = ry_convolve(&seq, 60.0, 60.0).unwrap();
        for (x, y) in sharp.iter().flatten().zip(seq.iter().flatten()) {
            prop_assert!(x.max_abs_diff(y) < 1e-15);
        }
    }
}
