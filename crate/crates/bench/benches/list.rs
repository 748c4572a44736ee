use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use distlist::exec::block_on;
use distlist::verify::fuzz::base_history;
use distlist::verify::linearizability::check_linearizable;
use distlist::List;

fn list_ops(c: &mut Criterion) {
    let keys: Vec<u64> = (0..256).collect();
    c.bench_function("insert_after_head", |b| {
        b.iter_batched(
            || List::new(1024),
            |l| {
                for k in 0..256 {
                    block_on(l.insert_after(l.head(), k)).unwrap();
                }
                l
            },
            BatchSize::SmallInput,
        )
    });
    let l = List::from_keys(512, &keys);
    c.bench_function("lookup_256", |b| b.iter(|| block_on(l.lookup(black_box(200)))));
    c.bench_function("delete_and_delink_256", |b| {
        b.iter_batched(
            || List::from_keys(512, &keys),
            |l| {
                for k in (0..256).step_by(2) {
                    block_on(l.delete(l.find(k).unwrap())).unwrap();
                }
                block_on(l.delink_pass()).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn checker(c: &mut Criterion) {
    let cases: Vec<_> = (0..64).map(|s| base_history(s, 4, 8, s % 2 == 0)).collect();
    c.bench_function("linearizability_64_histories", |b| {
        b.iter(|| {
            for h in &cases {
                check_linearizable(&h.initial, &h.ops).unwrap();
            }
        })
    });
}

criterion_group!(benches, list_ops, checker);
criterion_main!(benches);
