use criterion::{criterion_group, criterion_main, Criterion};
use distlist::runtime::config::Protocol;
use distlist::runtime::{simulate, SimConfig};

fn cfg(protocol: Protocol) -> SimConfig {
    let mut c = SimConfig {
        protocol,
        servers: 3,
        clients: 4,
        steps: 400,
        initial_keys: 32,
        key_space: 64,
        ..SimConfig::default()
    };
    c.set("script", "20:move:0:1;120:split:0:8;200:move:1:2").unwrap();
    c
}

fn moves(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(20);
    for (name, p) in [("am", Protocol::Am), ("tr", Protocol::Tr)] {
        g.bench_function(name, |b| b.iter(|| simulate(cfg(p)).now()));
        g.bench_function(format!("{name}_report"), |b| b.iter(|| simulate(cfg(p)).report().all_ok()));
    }
    g.finish();
}

criterion_group!(benches, moves);
criterion_main!(benches);
