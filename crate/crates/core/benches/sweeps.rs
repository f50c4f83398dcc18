//! Rayon against the sequential fallback on the two data-parallel sweeps:
//! the interaction-function grid and a direct-perturbation oracle sweep.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;

use pwsm::coupling::{interaction_value, morrison_curto_coupling, Diffusive};
use pwsm::cycle::{find_limit_cycle, LimitCycle};
use pwsm::iprc::{iprc_affine, IprcOptions, PiecewiseIprc};
use pwsm::oracle::{direct_iprc, OracleOptions, PhaseLookupTable};
use pwsm::par::{map_indexed, map_indexed_sequential};
use pwsm::zoo::{build_model, morrison_curto_weights, Model};

fn solve(name: &str) -> (Model, LimitCycle, PiecewiseIprc) {
    let model = build_model(name, &[]).unwrap();
    let cycle = find_limit_cycle(&model.system, &model.section, &model.guess, &model.cycle_options()).unwrap();
    let iprc = iprc_affine(&model.system, &cycle, &IprcOptions::default()).unwrap();
    (model, cycle, iprc)
}

fn h_grid(c: &mut Criterion) {
    let mut group = c.benchmark_group("h_grid");
    group.sample_size(10);
    let n_h = 128;
    let n_t = 2048;

    let (_, cycle, iprc) = solve("octagon");
    let phi = |j: usize| j as f64 / n_h as f64;
    group.bench_function(BenchmarkId::new("octagon", "parallel"), |b| {
        b.iter(|| map_indexed(n_h, |j| interaction_value(&cycle, &iprc, &Diffusive, phi(j), n_t)))
    });
    group.bench_function(BenchmarkId::new("octagon", "sequential"), |b| {
        b.iter(|| map_indexed_sequential(n_h, |j| interaction_value(&cycle, &iprc, &Diffusive, phi(j), n_t)))
    });

    let (_, cycle, iprc) = solve("morrison-curto");
    let g = morrison_curto_coupling(&morrison_curto_weights(0.5, 0.25), 0.5, 1.0);
    group.bench_function(BenchmarkId::new("morrison-curto", "parallel"), |b| {
        b.iter(|| map_indexed(n_h, |j| interaction_value(&cycle, &iprc, &g, phi(j), n_t)))
    });
    group.bench_function(BenchmarkId::new("morrison-curto", "sequential"), |b| {
        b.iter(|| map_indexed_sequential(n_h, |j| interaction_value(&cycle, &iprc, &g, phi(j), n_t)))
    });
    group.finish();
}

fn oracle_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracle_sweep");
    group.sample_size(10);
    let (model, cycle, _) = solve("aplysia");
    let table = PhaseLookupTable::new(&model.system, &cycle, PhaseLookupTable::DEFAULT_ROWS);
    let opts = OracleOptions::default();
    let n = 32;
    let kick = DVector::from_vec(vec![0.0, 1.0, 0.0]);
    let probe = |i: usize| {
        let theta = (i as f64 + 0.5) / n as f64;
        direct_iprc(&model.system, &cycle, &table, theta, &kick, 1e-4, &opts).ok()
    };
    group.bench_function(BenchmarkId::new("aplysia", "parallel"), |b| b.iter(|| map_indexed(n, probe)));
    group.bench_function(BenchmarkId::new("aplysia", "sequential"), |b| {
        b.iter(|| map_indexed_sequential(n, probe))
    });
    group.finish();
}

criterion_group!(benches, h_grid, oracle_sweep);
criterion_main!(benches);
