use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lplab::geometry::{make_grid, DomainParams, GridKind};
use lplab::lab::{evaluate_corpus, generate_corpus, CorpusFamily, CorpusSpec};
use lplab::multipliers::make_profile;
use lplab::spectral::{build_operator, ModelTag};
use lplab::squarefns::{make_ladder, FunctionalRequest, SquareEngine};
use lplab::Exec;

fn engine(c: &mut Criterion) {
    let profile = make_profile("lp-heat").unwrap();
    let ladder = make_ladder(-3, 4, 4).unwrap();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for n in [32, 64] {
        let grid = make_grid(GridKind::LinePeriodic, n, DomainParams::Periodic { period: 32.0 }).unwrap();
        let m = build_operator(&grid, ModelTag::Laplacian).unwrap();
        let req = FunctionalRequest { area: true, gstar: Some((3.0, 3.0)), peetre: Some((3.0, 3.0)), checked: false };
        let eng = SquareEngine::new([&m, &m], [&profile, &profile], &ladder, req).unwrap();
        let spec = CorpusSpec { families: CorpusFamily::ALL.to_vec(), count: 4, band: (2, 4) };
        let corpus = generate_corpus(&m, &m, &spec, 1).unwrap();
        let f = corpus.entries[3].sample(&m, &m).unwrap();
        for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
            group.bench_with_input(BenchmarkId::new(format!("single-{name}"), n), &f, |b, f| {
                b.iter(|| eng.evaluate(f, exec).unwrap())
            });
            group.bench_with_input(BenchmarkId::new(format!("corpus-{name}"), n), &corpus, |b, c| {
                b.iter(|| evaluate_corpus(&eng, c, &m, &m, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, engine);
criterion_main!(benches);
