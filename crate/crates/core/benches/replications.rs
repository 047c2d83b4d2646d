use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use propagation_limit::geometry::gen_hexagonal;
use propagation_limit::poisson_limit::{l_max_for, sample_limit_sir, LimitModel};
use propagation_limit::propagation::{PropagationParams, ShadowingSpec};
use propagation_limit::stats::min_loss_ks_statistics;
use propagation_limit::stats::protocols::sample_network_min_losses;
use propagation_limit::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn network_min_losses(c: &mut Criterion) {
    let spec = ShadowingSpec::from_db(10.0).unwrap();
    let params = PropagationParams::new(1.0, 4.0).unwrap().raw();
    let mut g = c.benchmark_group("poisson_min_loss_200");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_network_min_losses(1.0, 8.0, &spec, &params, 200, 1, exec).unwrap())
        });
    }
    g.finish();
}

fn hexagonal_ks(c: &mut Criterion) {
    let pattern = gen_hexagonal(30, 1.0).unwrap();
    let mut g = c.benchmark_group("hexagonal_ks_10x100");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| min_loss_ks_statistics(&pattern, 4.0, 1.0, 10.0, 100, 10, 2, exec).unwrap())
        });
    }
    g.finish();
}

fn limit_sir(c: &mut Criterion) {
    let model = LimitModel::new(1.0, 4.0).unwrap();
    let l_max = l_max_for(&model, 1e-3);
    let mut g = c.benchmark_group("limit_sir_100");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_limit_sir(&model, l_max, 100, 3, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, network_min_losses, hexagonal_ks, limit_sir);
criterion_main!(benches);
