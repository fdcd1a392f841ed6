use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use evade_core::dynamics::{ParticleRealization, SimulationWindow};
use evade_core::evasion::strategy_percolation_follower;
use evade_core::field::{chi_seed_of, compute_blocked_field, compute_vacancy_field, find_open_path, Diamond};
use evade_core::influence::sample_chi;
use evade_core::model::{verify_cone_disjointness, ModelParams};

fn sampling(c: &mut Criterion) {
    let mut g = c.benchmark_group("sample");
    for depth in [10u64, 30] {
        let p = ModelParams::lattice(0.1, 1.0, 2).unwrap();
        let w = SimulationWindow::for_depth(&p, depth).unwrap();
        g.bench_with_input(BenchmarkId::new("lattice", depth), &depth, |b, _| {
            b.iter(|| ParticleRealization::sample(&p, &w, black_box(7)).unwrap())
        });
    }
    let p = ModelParams::continuum(0.1, 1.0, 2).unwrap();
    let w = SimulationWindow::for_depth(&p, 10).unwrap();
    g.sample_size(10);
    g.bench_function("continuum/10", |b| b.iter(|| ParticleRealization::sample(&p, &w, black_box(7)).unwrap()));
    g.finish();
}

fn fields(c: &mut Criterion) {
    let p = ModelParams::lattice(0.2, 1.0, 2).unwrap();
    let w = SimulationWindow::for_depth(&p, 20).unwrap();
    let r = ParticleRealization::sample(&p, &w, 3).unwrap();
    c.bench_function("vacancy_field/20", |b| b.iter(|| compute_vacancy_field(&r, 20, None).unwrap()));
    c.bench_function("blocked_field/20", |b| {
        b.iter(|| compute_blocked_field(&r, chi_seed_of(r.seed()), 20, 1.5).unwrap())
    });
    c.bench_function("follower/20", |b| b.iter(|| strategy_percolation_follower(&r, 20).unwrap()));
    let open = Diamond::from_fn(200, |x, y| (x * 31 + y * 17).rem_euclid(7) != 0);
    c.bench_function("open_path/200", |b| b.iter(|| find_open_path(black_box(&open), 200)));
}

fn oracles(c: &mut Criterion) {
    let p = ModelParams::lattice(0.2, 1.0, 2).unwrap();
    let mut g = c.benchmark_group("oracles");
    g.sample_size(10);
    g.bench_function("chi/1000", |b| b.iter(|| sample_chi(&p, 1000, 200.0, black_box(1)).unwrap()));
    g.bench_function("cone/10x20", |b| b.iter(|| verify_cone_disjointness(&p, 10, 20, 16).unwrap()));
    g.finish();
}

criterion_group!(benches, sampling, fields, oracles);
criterion_main!(benches);
