use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slac_core::actor_critic::{actor_loss_and_gradient, build_actor, build_critic, critic_targets, NetworkConfig};
use slac_core::grid::{grid_value_iteration, GridAxis};
use slac_core::nn::Activation;
use slac_core::ocp::{control_lattice, ControlProblem, DoubleIntegrator, Dubins};
use slac_core::sl::SlOperatorConfig;
use slac_core::ExecMode;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn net(act: Activation) -> NetworkConfig {
    NetworkConfig {
        hidden: 128,
        depth: 4,
        activation: act,
        residual: false,
    }
}

fn batched_operator(c: &mut Criterion) {
    let p = DoubleIntegrator::new(Default::default()).unwrap();
    let actor = build_actor(&p, &net(Activation::Tanh), 1).unwrap();
    let critic = build_critic(&p, &net(Activation::Tanh), 2).unwrap();
    let xs = p.sample_domain(&mut ChaCha8Rng::seed_from_u64(0), 500);
    let op = SlOperatorConfig::new(0.05, 1.0).unwrap();
    let mut g = c.benchmark_group("double_integrator_500");
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::new("forward", name), &mode, |b, &m| {
            b.iter(|| critic.forward_batch(m, xs.view()).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("actor_gradient", name), &mode, |b, &m| {
            b.iter(|| actor_loss_and_gradient(&p, &actor, &critic, xs.view(), &op, m).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("critic_targets", name), &mode, |b, &m| {
            b.iter(|| critic_targets(&p, &actor, &critic, xs.view(), &op, m))
        });
    }
    g.finish();
}

fn grid_solve(c: &mut Criterion) {
    let p = Dubins::new(Default::default()).unwrap();
    let axes = [
        GridAxis::new(-2.0, 2.0, 31),
        GridAxis::new(-2.0, 2.0, 31),
        GridAxis::periodic(-std::f64::consts::PI, std::f64::consts::PI, 24),
    ];
    let controls = control_lattice(&p, 11).unwrap();
    let op = SlOperatorConfig::new(0.05, 0.2).unwrap();
    let mut g = c.benchmark_group("dubins_grid_10_sweeps");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &m| {
            b.iter(|| grid_value_iteration(&p, &axes, &controls, &op, 1e-300, 10, m).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, batched_operator, grid_solve);
criterion_main!(benches);
