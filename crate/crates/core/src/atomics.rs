//! Single-word CAS, shared counters and RDCSS built on top of them.

use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, Ordering::SeqCst};

/// Reserved "minus infinity" for a start counter that must stay negative.
pub const NEG_INF: i64 = -(1 << 62);

/// Largest value an [`AtomicWord`] can hold (one low bit is reserved for tags).
pub const WORD_MAX: u64 = (1 << 63) - 1;

const TAG: u64 = 1;

/// A machine word. Values are stored shifted left by one so the low bit can
/// mark an RDCSS descriptor.
#[derive(Debug)]
pub struct AtomicWord(AtomicU64);

impl AtomicWord {
    pub fn new(v: u64) -> Self {
        debug_assert!(v <= WORD_MAX);
        AtomicWord(AtomicU64::new(v << 1))
    }

    /// Plain load. Must not be used on a cell that RDCSS writes into; use
    /// [`Rdcss::read`] for those.
    pub fn load(&self) -> u64 {
        let raw = self.0.load(SeqCst);
        debug_assert!(raw & TAG == 0, "descriptor observed through plain load");
        raw >> 1
    }

    /// Initialising store, before the cell is shared.
    pub fn store(&self, v: u64) {
        debug_assert!(v <= WORD_MAX);
        self.0.store(v << 1, SeqCst);
    }

    pub fn cas(&self, expected: u64, new: u64) -> bool {
        cas(self, expected, new)
    }

    fn raw(&self) -> &AtomicU64 {
        &self.0
    }
}

/// Compare-and-swap on a plain word.
pub fn cas(cell: &AtomicWord, expected: u64, new: u64) -> bool {
    debug_assert!(new <= WORD_MAX);
    cell.0
        .compare_exchange(expected << 1, new << 1, SeqCst, SeqCst)
        .is_ok()
}

/// Signed 64-bit counter. `increment` returns the post-increment value.
#[derive(Debug, Default)]
pub struct SharedCounter(AtomicI64);

impl SharedCounter {
    pub fn new(v: i64) -> Self {
        SharedCounter(AtomicI64::new(v))
    }
    pub fn increment(&self) -> i64 {
        self.0.fetch_add(1, SeqCst) + 1
    }
    pub fn get(&self) -> i64 {
        self.0.load(SeqCst)
    }
    pub fn cas(&self, expected: i64, new: i64) -> bool {
        self.0.compare_exchange(expected, new, SeqCst, SeqCst).is_ok()
    }
    pub(crate) fn set(&self, v: i64) {
        self.0.store(v, SeqCst)
    }
}

/// Location handle resolver. RDCSS descriptors name their cells by id so
/// that helpers can find them again without raw pointers.
pub trait CellMap {
    fn cell(&self, id: u64) -> &AtomicWord;
}

impl CellMap for [AtomicWord] {
    fn cell(&self, id: u64) -> &AtomicWord {
        &self[id as usize]
    }
}

impl CellMap for Vec<AtomicWord> {
    fn cell(&self, id: u64) -> &AtomicWord {
        &self[id as usize]
    }
}

const UNDECIDED: u64 = 0;
const SUCCEEDED: u64 = 1;
const FAILED: u64 = 2;
const NO_SEQ: u64 = u64::MAX;

#[derive(Debug)]
struct Slot {
    in_use: AtomicBool,
    seq: AtomicU64,
    // (seq << 2) | state
    outcome: AtomicU64,
    control: AtomicU64,
    exp_control: AtomicU64,
    data: AtomicU64,
    exp_data: AtomicU64,
    new_data: AtomicU64,
}

impl Slot {
    fn empty() -> Self {
        Slot {
            in_use: AtomicBool::new(false),
            seq: AtomicU64::new(NO_SEQ),
            outcome: AtomicU64::new(0),
            control: AtomicU64::new(0),
            exp_control: AtomicU64::new(0),
            data: AtomicU64::new(0),
            exp_data: AtomicU64::new(0),
            new_data: AtomicU64::new(0),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Desc {
    seq: u64,
    control: u64,
    exp_control: u64,
    data: u64,
    exp_data: u64,
    new_data: u64,
}

enum Install {
    Installed,
    Helped,
    Mismatch,
}

/// Outcome of an RDCSS descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Undecided,
    Succeeded,
    Failed,
}

/// A domain of RDCSS descriptors: a fixed ring of slots addressed by a
/// sequence number that is written into the data cell as `(seq << 1) | 1`.
#[derive(Debug)]
pub struct Rdcss {
    slots: Box<[Slot]>,
    next_seq: AtomicU64,
}

impl Rdcss {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Rdcss {
            slots: (0..capacity).map(|_| Slot::empty()).collect(),
            next_seq: AtomicU64::new(0),
        }
    }

    fn slot(&self, seq: u64) -> &Slot {
        &self.slots[(seq % self.slots.len() as u64) as usize]
    }

    fn alloc(&self, d: Desc) -> u64 {
        loop {
            let seq = self.next_seq.fetch_add(1, SeqCst);
            assert!(seq < (1 << 61), "descriptor sequence exhausted");
            let s = self.slot(seq);
            if s.in_use.compare_exchange(false, true, SeqCst, SeqCst).is_err() {
                continue;
            }
            s.outcome.store(seq << 2 | UNDECIDED, SeqCst);
            s.control.store(d.control, SeqCst);
            s.exp_control.store(d.exp_control, SeqCst);
            s.data.store(d.data, SeqCst);
            s.exp_data.store(d.exp_data, SeqCst);
            s.new_data.store(d.new_data, SeqCst);
            s.seq.store(seq, SeqCst);
            return seq;
        }
    }

    fn release(&self, seq: u64) {
        let s = self.slot(seq);
        s.seq.store(NO_SEQ, SeqCst);
        s.in_use.store(false, SeqCst);
    }

    /// Reads a descriptor by seq; `None` if the slot has been recycled.
    fn fetch(&self, seq: u64) -> Option<Desc> {
        let s = self.slot(seq);
        if s.seq.load(SeqCst) != seq {
            return None;
        }
        let d = Desc {
            seq,
            control: s.control.load(SeqCst),
            exp_control: s.exp_control.load(SeqCst),
            data: s.data.load(SeqCst),
            exp_data: s.exp_data.load(SeqCst),
            new_data: s.new_data.load(SeqCst),
        };
        (s.seq.load(SeqCst) == seq).then_some(d)
    }

    fn complete<C: CellMap + ?Sized>(&self, cells: &C, d: &Desc) {
        let s = self.slot(d.seq);
        let decision = if cells.cell(d.control).load() == d.exp_control {
            SUCCEEDED
        } else {
            FAILED
        };
        let _ = s
            .outcome
            .compare_exchange(d.seq << 2 | UNDECIDED, d.seq << 2 | decision, SeqCst, SeqCst);
        let o = s.outcome.load(SeqCst);
        let fin = if o >> 2 != d.seq {
            // recycled: the owner already resolved it, the tag is gone
            return;
        } else {
            o & 3
        };
        let value = if fin == SUCCEEDED { d.new_data } else { d.exp_data };
        let _ = cells
            .cell(d.data)
            .raw()
            .compare_exchange(d.seq << 1 | TAG, value << 1, SeqCst, SeqCst);
    }

    fn help<C: CellMap + ?Sized>(&self, cells: &C, raw: u64) {
        if let Some(d) = self.fetch(raw >> 1) {
            self.complete(cells, &d);
        }
    }

    /// Reads an RDCSS data cell, resolving any descriptor found in it.
    pub fn read<C: CellMap + ?Sized>(&self, cells: &C, data: u64) -> u64 {
        let cell = cells.cell(data);
        loop {
            let raw = cell.raw().load(SeqCst);
            if raw & TAG == 0 {
                return raw >> 1;
            }
            self.help(cells, raw);
        }
    }

    /// CAS on a data cell that RDCSS may concurrently target.
    pub fn cas<C: CellMap + ?Sized>(&self, cells: &C, data: u64, expected: u64, new: u64) -> bool {
        let cell = cells.cell(data);
        loop {
            match cell
                .raw()
                .compare_exchange(expected << 1, new << 1, SeqCst, SeqCst)
            {
                Ok(_) => return true,
                Err(raw) if raw & TAG == TAG => self.help(cells, raw),
                Err(_) => return false,
            }
        }
    }

    /// Unconditional write to a data cell, helping any installed descriptor
    /// out of the way first.
    pub fn store<C: CellMap + ?Sized>(&self, cells: &C, data: u64, new: u64) {
        loop {
            let cur = self.read(cells, data);
            if self.cas(cells, data, cur, new) {
                return;
            }
        }
    }

    /// Restricted double-compare single-swap: iff `control == exp_control`
    /// and `data == exp_data`, atomically sets `data := new_data`.
    pub fn rdcss<C: CellMap + ?Sized>(
        &self,
        cells: &C,
        control: u64,
        exp_control: u64,
        data: u64,
        exp_data: u64,
        new_data: u64,
    ) -> bool {
        debug_assert!(control != data);
        debug_assert!(new_data <= WORD_MAX && exp_data <= WORD_MAX);
        let d = Desc {
            seq: 0,
            control,
            exp_control,
            data,
            exp_data,
            new_data,
        };
        let seq = self.alloc(d);
        let d = Desc { seq, ..d };
        let ok = loop {
            match self.install(cells, &d) {
                Install::Installed => {
                    self.complete(cells, &d);
                    break self.outcome_of(seq) == Outcome::Succeeded;
                }
                Install::Helped => continue,
                Install::Mismatch => break false,
            }
        };
        self.release(seq);
        ok
    }

    fn install<C: CellMap + ?Sized>(&self, cells: &C, d: &Desc) -> Install {
        match cells.cell(d.data).raw().compare_exchange(
            d.exp_data << 1,
            d.seq << 1 | TAG,
            SeqCst,
            SeqCst,
        ) {
            Ok(_) => Install::Installed,
            Err(raw) if raw & TAG == TAG => {
                self.help(cells, raw);
                Install::Helped
            }
            Err(_) => Install::Mismatch,
        }
    }

    fn outcome_of(&self, seq: u64) -> Outcome {
        let o = self.slot(seq).outcome.load(SeqCst);
        debug_assert_eq!(o >> 2, seq);
        match o & 3 {
            SUCCEEDED => Outcome::Succeeded,
            FAILED => Outcome::Failed,
            _ => Outcome::Undecided,
        }
    }

    /// Number of descriptors currently installed or being installed.
    pub fn in_flight(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.in_use.load(SeqCst))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn cells(vals: &[u64]) -> Vec<AtomicWord> {
        vals.iter().map(|&v| AtomicWord::new(v)).collect()
    }

    #[test]
    fn cas_success_and_failure() {
        let c = AtomicWord::new(0);
        assert!(cas(&c, 0, 1));
        assert_eq!(c.load(), 1);
        let c = AtomicWord::new(1);
        assert!(!cas(&c, 0, 2));
        assert_eq!(c.load(), 1);
    }

    #[test]
    fn counter_examples() {
        let c = SharedCounter::new(0);
        assert_eq!(c.increment(), 1);
        let c = SharedCounter::new(NEG_INF);
        assert_eq!(c.increment(), NEG_INF + 1);
        assert!(c.get() < 0);
        let c = SharedCounter::new(7);
        assert!(c.cas(7, NEG_INF));
        assert_eq!(c.get(), NEG_INF);
    }

    #[test]
    fn neg_inf_survives_many_increments() {
        let c = SharedCounter::new(NEG_INF);
        for _ in 0..100_000 {
            assert!(c.increment() < 0);
        }
        // headroom is far larger than any run
        assert!(NEG_INF + (1i64 << 61) < 0);
    }

    #[test]
    fn rdcss_both_hold() {
        let r = Rdcss::new(8);
        let m = cells(&[0, 10]);
        assert!(r.rdcss(&m, 0, 0, 1, 10, 11));
        assert_eq!(r.read(&m, 1), 11);
        assert_eq!(r.in_flight(), 0);
    }

    #[test]
    fn rdcss_control_mismatch() {
        let r = Rdcss::new(8);
        let m = cells(&[1, 10]);
        assert!(!r.rdcss(&m, 0, 0, 1, 10, 11));
        assert_eq!(r.read(&m, 1), 10);
    }

    #[test]
    fn rdcss_data_mismatch() {
        let r = Rdcss::new(8);
        let m = cells(&[0, 9]);
        assert!(!r.rdcss(&m, 0, 0, 1, 10, 11));
        assert_eq!(r.read(&m, 1), 9);
    }

    #[test]
    fn helper_resolves_installed_descriptor() {
        // install a descriptor by hand, as if the owner stalled after its CAS
        let r = Rdcss::new(4);
        let m = cells(&[0, 10]);
        let seq = r.alloc(Desc {
            seq: 0,
            control: 0,
            exp_control: 0,
            data: 1,
            exp_data: 10,
            new_data: 12,
        });
        m[1].raw().store(seq << 1 | TAG, SeqCst);
        // a reader helps it to completion
        assert_eq!(r.read(&m, 1), 12);
        // a second helper is a no-op
        r.help(&m, seq << 1 | TAG);
        assert_eq!(r.read(&m, 1), 12);
        assert_eq!(r.outcome_of(seq), Outcome::Succeeded);
    }

    #[test]
    fn helper_fails_descriptor_when_control_changed() {
        let r = Rdcss::new(4);
        let m = cells(&[0, 10]);
        let seq = r.alloc(Desc {
            seq: 0,
            control: 0,
            exp_control: 0,
            data: 1,
            exp_data: 10,
            new_data: 12,
        });
        m[1].raw().store(seq << 1 | TAG, SeqCst);
        m[0].store(1);
        assert!(!r.cas(&m, 1, 12, 13));
        assert_eq!(r.read(&m, 1), 10);
    }

    // Steps of each actor; an actor's step may need several attempts
    // when it helps a descriptor, but that stays inside one step here.
    #[derive(Clone, Copy, PartialEq, Debug)]
    enum Actor {
        Rd,
        Cas,
        Ctl,
    }

    fn interleavings(counts: &[(Actor, usize)]) -> Vec<Vec<Actor>> {
        fn go(left: &mut Vec<(Actor, usize)>, cur: &mut Vec<Actor>, out: &mut Vec<Vec<Actor>>) {
            if left.iter().all(|(_, n)| *n == 0) {
                out.push(cur.clone());
                return;
            }
            for i in 0..left.len() {
                if left[i].1 > 0 {
                    left[i].1 -= 1;
                    cur.push(left[i].0);
                    go(left, cur, out);
                    cur.pop();
                    left[i].1 += 1;
                }
            }
        }
        let mut out = vec![];
        go(&mut counts.to_vec(), &mut vec![], &mut out);
        out
    }

    // sequential semantics of the three ops from (ctl=0, data=10)
    fn sequential(order: &[Actor]) -> (bool, bool, u64) {
        let (mut ctl, mut data) = (0u64, 10u64);
        let (mut rd_ok, mut cas_ok) = (false, false);
        for a in order {
            match a {
                Actor::Rd => {
                    rd_ok = ctl == 0 && data == 10;
                    if rd_ok {
                        data = 11;
                    }
                }
                Actor::Cas => {
                    cas_ok = data == 10;
                    if cas_ok {
                        data = 20;
                    }
                }
                Actor::Ctl => ctl = 1,
            }
        }
        (rd_ok, cas_ok, data)
    }

    #[test]
    fn rdcss_cas_control_all_interleavings_linearize() {
        // rdcss = install, complete; cas = one step; control flip = one step
        let scheds = interleavings(&[(Actor::Rd, 2), (Actor::Cas, 1), (Actor::Ctl, 1)]);
        assert_eq!(scheds.len(), 12);
        let perms: Vec<Vec<Actor>> = interleavings(&[(Actor::Rd, 1), (Actor::Cas, 1), (Actor::Ctl, 1)]);
        for sched in scheds {
            let r = Rdcss::new(4);
            let m = cells(&[0, 10]);
            let d = Desc { seq: 0, control: 0, exp_control: 0, data: 1, exp_data: 10, new_data: 11 };
            let seq = r.alloc(d);
            let d = Desc { seq, ..d };
            let mut rd_step = 0;
            let (mut rd_ok, mut cas_ok) = (false, false);
            let mut installed = false;
            for (i, a) in sched.iter().enumerate() {
                match a {
                    Actor::Rd if rd_step == 0 => {
                        rd_step = 1;
                        installed = loop {
                            match r.install(&m, &d) {
                                Install::Installed => break true,
                                Install::Helped => continue,
                                Install::Mismatch => break false,
                            }
                        };
                    }
                    Actor::Rd => {
                        if installed {
                            r.complete(&m, &d);
                            rd_ok = r.outcome_of(seq) == Outcome::Succeeded;
                        }
                        let _ = i;
                    }
                    Actor::Cas => cas_ok = r.cas(&m, 1, 10, 20),
                    Actor::Ctl => m[0].store(1),
                }
            }
            let got = (rd_ok, cas_ok, r.read(&m, 1));
            // real-time order: an op that finished before another started
            // must precede it
            let first = |x: Actor| sched.iter().position(|a| *a == x).unwrap();
            let last = |x: Actor| sched.iter().rposition(|a| *a == x).unwrap();
            let ok = perms.iter().any(|p| {
                let respects = p.iter().enumerate().all(|(i, x)| {
                    p[i + 1..].iter().all(|y| last(*y) > first(*x))
                });
                respects && sequential(p) == got
            });
            assert!(ok, "schedule {sched:?} produced {got:?}");
        }
    }

    #[test]
    fn two_thread_cas_exactly_one_wins() {
        for _ in 0..200 {
            let c = Arc::new(AtomicWord::new(0));
            let hs: Vec<_> = [1u64, 2]
                .into_iter()
                .map(|v| {
                    let c = c.clone();
                    std::thread::spawn(move || cas(&c, 0, v))
                })
                .collect();
            let wins: Vec<bool> = hs.into_iter().map(|h| h.join().unwrap()).collect();
            assert_eq!(wins.iter().filter(|w| **w).count(), 1);
        }
    }

    #[test]
    fn concurrent_rdcss_and_cas_stress() {
        // many threads race rdcss(ctl=0, data: v -> v+1) with plain cas on data
        let r = Arc::new(Rdcss::new(64));
        let m = Arc::new(cells(&[0, 0]));
        let hs: Vec<_> = (0..4)
            .map(|t| {
                let (r, m) = (r.clone(), m.clone());
                std::thread::spawn(move || {
                    let mut wins = 0u64;
                    for _ in 0..2000 {
                        let cur = r.read(&*m, 1);
                        let ok = if t % 2 == 0 {
                            r.rdcss(&*m, 0, 0, 1, cur, cur + 1)
                        } else {
                            r.cas(&*m, 1, cur, cur + 1)
                        };
                        wins += ok as u64;
                    }
                    wins
                })
            })
            .collect();
        let total: u64 = hs.into_iter().map(|h| h.join().unwrap()).sum();
        assert_eq!(r.read(&*m, 1), total);
        assert_eq!(r.in_flight(), 0);
    }
}
