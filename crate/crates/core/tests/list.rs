use distlist::exec::block_on;
use distlist::verify::fuzz::base_history;
use distlist::verify::history::{Ret, Target};
use distlist::verify::linearizability::check_linearizable;
use distlist::{List, ListError};
use proptest::prelude::*;

#[test]
fn sequential_operations() {
    let l = List::from_keys(16, &[1, 2, 3]);
    assert_eq!(l.keys(), vec![1, 2, 3]);
    let two = l.find(2).unwrap();
    let n = block_on(l.insert_after(two, 9)).unwrap();
    assert_eq!(l.keys(), vec![1, 2, 9, 3]);
    block_on(l.delete(two)).unwrap();
    assert_eq!(l.keys(), vec![1, 9, 3]);
    assert_eq!(block_on(l.delete(two)), Err(ListError::NodeNotFound));
    // A tombstone still answers next.
    assert_eq!(block_on(l.next(two)).unwrap().node(), n.node());
    assert_eq!(block_on(l.next(l.head())).unwrap().node(), l.find(1).unwrap().node());
    assert_eq!(block_on(l.lookup(9)).len(), 1);
    assert!(block_on(l.insert_after(l.tail(), 4)).is_err());
}

#[test]
fn delink_removes_tombstones_only() {
    let l = List::from_keys(32, &[0, 1, 2, 3, 4, 5, 6, 7]);
    for k in [0, 3, 4, 7] {
        block_on(l.delete(l.find(k).unwrap())).unwrap();
    }
    let gone = block_on(l.delink_pass()).unwrap();
    assert_eq!(gone.len(), 4);
    assert_eq!(l.dump(), vec![(1, false), (2, false), (5, false), (6, false)]);
    assert!(block_on(l.delink_pass()).unwrap().is_empty());

    l.set_busy(true);
    assert_eq!(block_on(l.delink_pass()), Err(ListError::Busy));
}

#[test]
fn concurrent_histories_linearize() {
    for seed in 0..400 {
        let c = base_history(seed, 1 + (seed % 4) as usize, 8, seed % 2 == 0);
        check_linearizable(&c.initial, &c.ops).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

#[test]
fn corrupted_history_is_rejected() {
    let mut caught = 0;
    for seed in 0..100 {
        let mut c = base_history(seed, 2, 8, false);
        let Some(i) = c.ops.iter().position(|o| matches!(o.ret, Some(Ret::Node(Target::Tail)))) else {
            continue;
        };
        // A next that saw the tail now claims an identity nobody created.
        let bogus = distlist::core_list::Ident { sid: 7, ts: 999_999 };
        c.ops[i].ret = Some(Ret::Node(Target::Node(bogus)));
        assert!(check_linearizable(&c.initial, &c.ops).is_err(), "seed {seed}");
        caught += 1;
    }
    assert!(caught > 10);
}

#[derive(Clone, Debug)]
enum Step {
    Insert(usize, u64),
    Delete(usize),
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        (0..20usize, 0..10u64).prop_map(|(p, k)| Step::Insert(p, k)),
        (0..20usize).prop_map(Step::Delete),
    ]
}

proptest! {
    #[test]
    fn matches_a_vector_model(steps in prop::collection::vec(step(), 0..40), delink_at in 0..40usize) {
        let l = List::new(64);
        // (ref, key, deleted)
        let mut model: Vec<(distlist::ItemRef, u64, bool)> = vec![];
        for (n, s) in steps.iter().enumerate() {
            if n == delink_at {
                block_on(l.delink_pass()).unwrap();
                model.retain(|e| !e.2);
            }
            match *s {
                Step::Insert(p, k) => {
                    let (prev, at) = if model.is_empty() || p % (model.len() + 1) == 0 {
                        (l.head(), 0)
                    } else {
                        let i = p % (model.len() + 1) - 1;
                        (model[i].0, i + 1)
                    };
                    let prev_deleted = at > 0 && model[at - 1].2;
                    match block_on(l.insert_after(prev, k)) {
                        Ok(r) => {
                            prop_assert!(!prev_deleted);
                            model.insert(at, (r, k, false));
                        }
                        Err(e) => {
                            prop_assert!(prev_deleted);
                            prop_assert_eq!(e, ListError::NodeNotFound);
                        }
                    }
                }
                Step::Delete(i) => {
                    if model.is_empty() {
                        continue;
                    }
                    let i = i % model.len();
                    let res = block_on(l.delete(model[i].0));
                    prop_assert_eq!(res.is_ok(), !model[i].2);
                    model[i].2 = true;
                }
            }
            let want: Vec<(u64, bool)> = model.iter().map(|e| (e.1, e.2)).collect();
            prop_assert_eq!(l.dump(), want);
        }
        let live: Vec<u64> = model.iter().filter(|e| !e.2).map(|e| e.1).collect();
        prop_assert_eq!(l.keys(), live);
    }
}
