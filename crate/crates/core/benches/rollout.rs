use criterion::{criterion_group, criterion_main, Criterion};
use lsp_core::config::RunConfig;
use lsp_core::exec::Exec;
use lsp_core::trainer::Trainer;

fn executors() -> Vec<Exec> {
    #[cfg(feature = "parallel")]
    {
        vec![Exec::Sequential, Exec::Parallel]
    }
    #[cfg(not(feature = "parallel"))]
    {
        vec![Exec::Sequential]
    }
}

fn bench_epoch(c: &mut Criterion) {
    let config = RunConfig {
        embed_dim: 16,
        hidden_dim: 64,
        context_window: 16,
        eval_every: 0,
        log_wall_time: false,
        ..RunConfig::default()
    };
    let mut group = c.benchmark_group("self_play_epoch");
    group.sample_size(10);
    for exec in executors() {
        group.bench_function(exec.name(), |b| {
            b.iter_batched(
                || Trainer::new(config.clone(), None).unwrap().with_exec(exec),
                |mut t| t.step().unwrap(),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, bench_epoch);
criterion_main!(benches);
