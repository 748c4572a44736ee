use distlist::verify::fuzz::ReplayFixture;
use distlist::verify::oracle::{replay_oracle, SeqEntry, SublistEvent};
use proptest::prelude::*;

#[test]
fn every_delivery_order_of_small_sets_converges() {
    for seed in 0..10 {
        let f = ReplayFixture::generate(seed, 3, 4);
        let want = f.expected();
        let mut order: Vec<usize> = (0..f.events.len()).collect();
        let mut seen = 0;
        permute(&mut order, 0, &mut |o| {
            assert_eq!(f.deliver(o), want, "seed {seed} order {o:?}");
            seen += 1;
        });
        assert_eq!(seen, 24);
    }
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

#[test]
fn oracle_rejects_unknown_targets() {
    let base = vec![SeqEntry { key: 1, ts: 1, sid: 0, deleted: false }];
    let ghost = distlist::core_list::Ident { sid: 0, ts: 9 };
    assert!(replay_oracle(&base, &[SublistEvent::Delete { target: ghost }]).is_err());
    let item = SeqEntry { key: 2, ts: 1, sid: 0, deleted: false };
    assert!(replay_oracle(&base, &[SublistEvent::Insert { prev: None, item }]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn delivery_order_does_not_matter(seed in 0u64..1000, base in 0usize..5, n in 1usize..10, shuffle in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let f = ReplayFixture::generate(seed, base, n);
        let mut order: Vec<usize> = (0..f.events.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle));
        prop_assert_eq!(f.deliver(&order), f.expected());
    }

    #[test]
    fn oracle_keeps_every_node(seed in 0u64..1000, base in 0usize..5, n in 0usize..12) {
        let f = ReplayFixture::generate(seed, base, n);
        let out = f.expected();
        let inserts = f.events.iter().filter(|e| matches!(e, SublistEvent::Insert { .. })).count();
        prop_assert_eq!(out.len(), f.base.len() + inserts);
        for ev in &f.events {
            if let SublistEvent::Delete { target } = ev {
                prop_assert!(out.iter().any(|e| e.ident() == *target && e.deleted));
            }
        }
    }
}
