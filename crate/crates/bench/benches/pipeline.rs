use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gnn_comm::constraints::ChannelConfig;
use gnn_comm::env::PredatorPrey;
use gnn_comm::marl::{batch_loss, run_episode};
use gnn_comm::numeric::Tape;
use gnn_comm_bench::{episodes, experiment, rollout};

const PRESETS: [&str; 4] = ["no_comm", "gppo_like", "dgn_like", "dicg_like"];

fn rollouts(c: &mut Criterion) {
    let mut group = c.benchmark_group("episode");
    let channel = ChannelConfig::default();
    for preset in PRESETS {
        let exp = experiment(preset);
        let mut env = PredatorPrey::new(exp.env.clone()).unwrap();
        let mut k = 0;
        group.bench_function(BenchmarkId::from_parameter(preset), |b| {
            b.iter(|| {
                k += 1;
                run_episode(&exp.policy, &exp.store, &mut env, &channel, rollout(k)).unwrap()
            })
        });
    }
    group.finish();
}

fn updates(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_backward");
    group.sample_size(20);
    let channel = ChannelConfig::default();
    for preset in PRESETS {
        let exp = experiment(preset);
        let traces = episodes(&exp, exp.train.batch_episodes as u64);
        group.bench_function(BenchmarkId::from_parameter(preset), |b| {
            b.iter(|| {
                let mut t = Tape::new();
                let (loss, _, _) =
                    batch_loss(&mut t, &exp.policy, &exp.store, &traces, &exp.train, &exp.env, &channel, None).unwrap();
                t.backward(loss).unwrap();
                t.len()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, rollouts, updates);
criterion_main!(benches);
