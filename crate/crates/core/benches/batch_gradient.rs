//! Learner batch gradient: the `par::map` fan-out used by the learner against
//! a plain in-order loop. Build with `--no-default-features` to make both
//! paths sequential.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kickstart::actor_learner::{batch_gradient, Actor};
use kickstart::envs::{self, SuiteConfig};
use kickstart::losses::{kickstart_loss, KickstartParams, LossTerms, VTraceParams};
use kickstart::{GradientBuffer, NetSpec, PolicyValueNet, Trajectory};

fn batch(net: &PolicyValueNet, size: usize, unroll: usize) -> Vec<Trajectory> {
    let suite = envs::suite(&SuiteConfig::default()).unwrap();
    (0..size)
        .map(|i| {
            let task = &suite[i % suite.len()];
            let mut actor = Actor::new(i, i % suite.len(), task, 7).unwrap();
            actor.unroll(net, 0, None, unroll).unwrap()
        })
        .collect()
}

fn sequential(
    batch: &[Trajectory],
    net: &PolicyValueNet,
    params: &KickstartParams,
) -> (LossTerms, GradientBuffer) {
    let scale = 1.0 / batch.len() as f64;
    let mut terms = LossTerms {
        distill_loss: vec![0.0; params.lambdas.len()],
        ..LossTerms::default()
    };
    let mut grads = GradientBuffer::zeros_like(net);
    for t in batch {
        let (l, g) = kickstart_loss(t, net, params).unwrap();
        terms.accumulate(&l, scale);
        grads.add_scaled(&g, scale).unwrap();
    }
    (terms, grads)
}

fn bench(c: &mut Criterion) {
    let spec = NetSpec::new(envs::TaskSpec::named("tag-3", 8).unwrap().observation_len(), &[64], 5);
    let net = PolicyValueNet::init(&spec, 1).unwrap();
    let params = KickstartParams::rl_only(0.01, 0.5, VTraceParams::default());
    let mut group = c.benchmark_group("batch_gradient");
    for size in [8usize, 32] {
        let b = batch(&net, size, 20);
        assert_eq!(
            batch_gradient(&b, &net, &params).unwrap(),
            sequential(&b, &net, &params),
            "parallel and sequential reductions must agree bit for bit"
        );
        group.bench_with_input(BenchmarkId::new("par_map", size), &b, |bench, b| {
            bench.iter(|| batch_gradient(b, &net, &params).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", size), &b, |bench, b| {
            bench.iter(|| sequential(b, &net, &params))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
