//! Seeded workload generators for the property suites: small concurrent
//! histories over the standalone list, and replay fixtures delivered to a
//! sublist copy in chosen orders.

use std::cell::RefCell;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::history::{History, Op, OpRecord, Ret, Target};
use super::oracle::{replay_oracle, SeqEntry, SublistEvent};
use crate::core_list::{Ident, Item, ItemRef, Key, List};
use crate::exec::{now, sleep, step, Executor};
use crate::runtime::{SimConfig, World};
use crate::tr_protocol;

/// A finished concurrent history over a single list.
#[derive(Clone, Debug)]
pub struct BaseCase {
    pub initial: Vec<SeqEntry>,
    pub ops: Vec<OpRecord>,
    pub delinked: usize,
}

fn entries(list: &List) -> Vec<SeqEntry> {
    let a = list.arena();
    let mut out = vec![];
    let mut c = a.next(list.head().node()).expect("head.next");
    while c != list.tail().node() {
        out.push(SeqEntry {
            key: a.key(c).app().expect("app key"),
            ts: a.ts(c),
            sid: 0,
            deleted: a.is_deleted(c),
        });
        c = a.next(c).expect("next");
    }
    out
}

/// Runs `total` insert/delete/next operations split over `workers` tasks
/// under a seeded interleaving. With `delinker`, a background task runs
/// delink passes concurrently.
pub fn base_history(seed: u64, workers: usize, total: usize, delinker: bool) -> BaseCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n0 = rng.gen_range(0..=3);
    let keys: Vec<u64> = (0..n0).map(|_| rng.gen_range(0..4)).collect();
    let list = Rc::new(List::from_keys(64, &keys));
    let initial = entries(&list);
    let mut exec = Executor::new();
    let history = Rc::new(RefCell::new(History::new()));
    let mut pool: Vec<ItemRef> = vec![list.head(), list.tail()];
    let mut c = list.arena().next(list.head().node()).expect("head.next");
    while c != list.tail().node() {
        pool.push(c.with_lease(u64::MAX));
        c = list.arena().next(c).expect("next");
    }
    let pool = Rc::new(RefCell::new(pool));
    let delinked = Rc::new(RefCell::new(0));
    for w in 0..workers {
        let mine = total / workers + usize::from(w < total % workers);
        let (list, history, pool) = (list.clone(), history.clone(), pool.clone());
        let mut wr = ChaCha8Rng::seed_from_u64(seed ^ ((w as u64 + 1) * 0x9e37_79b9));
        exec.spawn(async move {
            let target = |r: ItemRef| {
                let n = r.node();
                if n == list.head().node() {
                    Target::Head
                } else if n == list.tail().node() {
                    Target::Tail
                } else {
                    Target::Node(list.arena().ident(n))
                }
            };
            for _ in 0..mine {
                let r = {
                    let p = pool.borrow();
                    p[wr.gen_range(0..p.len())]
                };
                let kind = wr.gen_range(0..3);
                let op = match kind {
                    0 => Op::InsertAfter(target(r), wr.gen_range(0..4)),
                    1 => Op::Delete(target(r)),
                    _ => Op::Next(target(r)),
                };
                let id = history.borrow_mut().invoke(step(), now(), w as u32, op.clone());
                let ret = match op {
                    Op::InsertAfter(_, k) => match list.insert_after(r, k).await {
                        Ok(n) => {
                            pool.borrow_mut().push(n);
                            Ret::Node(target(n))
                        }
                        Err(e) => Ret::Err(e),
                    },
                    Op::Delete(_) => match list.delete(r).await {
                        Ok(()) => Ret::Ok,
                        Err(e) => Ret::Err(e),
                    },
                    _ => match list.next(r).await {
                        Ok(n) => {
                            pool.borrow_mut().push(n);
                            Ret::Node(target(n))
                        }
                        Err(e) => Ret::Err(e),
                    },
                };
                history.borrow_mut().respond(id, step(), now(), ret);
            }
        });
    }
    if delinker {
        let (list, delinked) = (list.clone(), delinked.clone());
        exec.spawn(async move {
            for _ in 0..2 {
                if let Ok(v) = list.delink_pass().await {
                    *delinked.borrow_mut() += v.len();
                }
            }
        });
    }
    let finished = exec.run(&mut rng, 1_000_000);
    assert!(finished, "base history did not finish");
    let ops = history.borrow().ops();
    let delinked = *delinked.borrow();
    BaseCase { initial, ops, delinked }
}

/// Updates replicated to one sublist copy, in source order.
#[derive(Clone, Debug)]
pub struct ReplayFixture {
    pub cfg: SimConfig,
    pub base: Vec<SeqEntry>,
    pub events: Vec<SublistEvent>,
}

impl ReplayFixture {
    /// A sublist of `base` nodes and `n` source-side updates on it. Items
    /// come from server 1 with increasing timestamps, as they would from a
    /// single source.
    pub fn generate(seed: u64, base: usize, n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SimConfig {
            servers: 1,
            clients: 0,
            steps: 0,
            sublists: 1,
            initial_keys: base,
            key_space: 64,
            seed,
            ..SimConfig::default()
        };
        let base = World::new(cfg.clone()).initial;
        let mut seq = base.clone();
        let mut events = vec![];
        let mut ts = 1000;
        for _ in 0..n {
            let live: Vec<Ident> = seq.iter().filter(|e| !e.deleted).map(|e| e.ident()).collect();
            if !live.is_empty() && rng.gen_ratio(1, 3) {
                let target = *live.choose(&mut rng).expect("non-empty");
                events.push(SublistEvent::Delete { target });
            } else {
                let all: Vec<Ident> = seq.iter().map(|e| e.ident()).collect();
                let prev = if all.is_empty() || rng.gen_ratio(1, 4) {
                    None
                } else {
                    Some(*all.choose(&mut rng).expect("non-empty"))
                };
                ts += rng.gen_range(1..4);
                let item = SeqEntry {
                    key: rng.gen_range(0..64),
                    ts,
                    sid: 1,
                    deleted: false,
                };
                events.push(SublistEvent::Insert { prev, item });
            }
            seq = replay_oracle(&base, &events).expect("generated events apply");
        }
        ReplayFixture { cfg, base, events }
    }

    pub fn expected(&self) -> Vec<SeqEntry> {
        replay_oracle(&self.base, &self.events).expect("generated events apply")
    }

    /// Delivers event `order[i]` at tick `i + 1` and returns the copy's
    /// final contents.
    pub fn deliver(&self, order: &[usize]) -> Vec<SeqEntry> {
        let mut w = World::new(self.cfg.clone());
        let s = w.server(0);
        let sh = s.registry.borrow().subheads()[0];
        let item = |key: Key, id: Ident| Item {
            key,
            next: None,
            is_deleted: false,
            start_count: None,
            end_count: None,
            new_location: Some(sh),
            ts: id.ts,
            sid: id.sid,
        };
        let key_of = |id: Ident| {
            self.base
                .iter()
                .map(|e| (e.ident(), e.key))
                .chain(self.events.iter().filter_map(|ev| match ev {
                    SublistEvent::Insert { item, .. } => Some((item.ident(), item.key)),
                    _ => None,
                }))
                .find(|(i, _)| *i == id)
                .map(|(_, k)| k)
                .expect("event names a known node")
        };
        for (at, &i) in order.iter().enumerate() {
            let ev = self.events[i];
            let s = s.clone();
            let prev_item = match ev {
                SublistEvent::Insert { prev: None, .. } => Some(item(Key::SubHead, Ident { sid: 0, ts: 0 })),
                SublistEvent::Insert { prev: Some(p), .. } => Some(item(Key::App(key_of(p)), p)),
                SublistEvent::Delete { .. } => None,
            };
            let target = match ev {
                SublistEvent::Insert { item: it, .. } => item(Key::App(it.key), it.ident()),
                SublistEvent::Delete { target } => item(Key::App(key_of(target)), target),
            };
            w.spawn(async move {
                sleep(at as u64 + 1).await;
                match prev_item {
                    Some(p) => {
                        tr_protocol::replicate_insert_receive(&s, &p, &target).await;
                    }
                    None => tr_protocol::replicate_delete_receive(&s, &target).await,
                }
            });
        }
        assert!(w.run(), "replay delivery stalled");
        s.sequence(sh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::linearizability::check_linearizable;

    #[test]
    fn base_histories_are_deterministic() {
        let a = base_history(7, 3, 8, true);
        let b = base_history(7, 3, 8, true);
        assert_eq!(a.ops, b.ops);
        assert_eq!(a.initial, b.initial);
    }

    #[test]
    fn a_few_base_histories_linearize() {
        for seed in 0..40 {
            let c = base_history(seed, 4, 8, seed % 2 == 0);
            assert!(check_linearizable(&c.initial, &c.ops).is_ok(), "seed {seed}");
        }
    }

    #[test]
    fn in_order_delivery_matches_the_oracle() {
        let fx = ReplayFixture::generate(3, 4, 6);
        let order: Vec<usize> = (0..fx.events.len()).collect();
        assert_eq!(fx.deliver(&order), fx.expected());
    }

    #[test]
    fn reversed_delivery_matches_the_oracle() {
        let fx = ReplayFixture::generate(5, 3, 6);
        let order: Vec<usize> = (0..fx.events.len()).rev().collect();
        assert_eq!(fx.deliver(&order), fx.expected());
    }
}
