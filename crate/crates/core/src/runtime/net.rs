//! Simulated network: reliable, delayed, optionally reordering.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::message::{Endpoint, Msg};

#[derive(Clone, Copy, Debug)]
pub struct NetConfig {
    pub min_delay: u64,
    pub max_delay: u64,
    pub reorder: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            min_delay: 1,
            max_delay: 4,
            reorder: true,
        }
    }
}

pub struct SimNet {
    cfg: NetConfig,
    rng: ChaCha8Rng,
    // (deliver_at, tiebreak, seq)
    queue: BTreeMap<(u64, u64, u64), Msg>,
    seq: u64,
    last: HashMap<(Endpoint, Endpoint), (u64, u64)>,
    sent: u64,
    delivered: u64,
}

impl SimNet {
    pub fn new(cfg: NetConfig, seed: u64) -> Self {
        assert!(cfg.min_delay >= 1 && cfg.min_delay <= cfg.max_delay);
        SimNet {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: BTreeMap::new(),
            seq: 0,
            last: HashMap::new(),
            sent: 0,
            delivered: 0,
        }
    }

    pub fn config(&self) -> NetConfig {
        self.cfg
    }

    /// Enqueues `msg` for delivery after a random delay from `now`.
    /// Returns the delivery tick.
    pub fn send(&mut self, now: u64, msg: Msg) -> u64 {
        let mut at = now + self.rng.gen_range(self.cfg.min_delay..=self.cfg.max_delay);
        let fifo = !self.cfg.reorder || msg.body.is_stream();
        let mut tie = if self.cfg.reorder { self.rng.gen() } else { 0 };
        if fifo {
            if let Some(&(la, lt)) = self.last.get(&(msg.src, msg.dst)) {
                if at < la {
                    at = la;
                }
                if at == la && tie < lt {
                    tie = lt;
                }
            }
            self.last.insert((msg.src, msg.dst), (at, tie));
        }
        self.seq += 1;
        self.sent += 1;
        self.queue.insert((at, tie, self.seq), msg);
        at
    }

    pub fn next_due(&self) -> Option<u64> {
        self.queue.keys().next().map(|k| k.0)
    }

    /// Removes the next message due by `now`.
    pub fn pop_due(&mut self, now: u64) -> Option<Msg> {
        let (&k, _) = self.queue.iter().next()?;
        if k.0 > now {
            return None;
        }
        self.delivered += 1;
        self.queue.remove(&k)
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }
}
