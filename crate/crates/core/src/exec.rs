//! Deterministic single-threaded executor for simulated tasks.
//!
//! Algorithms are written as `async fn`s that call [`pause`] after every
//! shared-memory step. Under the simulator each `pause` is a point where the
//! seeded scheduler may switch to another task; under [`block_on`] it is a
//! no-op spin, so the same code runs on real threads.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::pin::Pin;
use std::task::{Context, Poll, Waker};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

thread_local! {
    static NOW: Cell<u64> = const { Cell::new(0) };
    static WAKE_AT: Cell<Option<u64>> = const { Cell::new(None) };
    static STEP: Cell<u64> = const { Cell::new(0) };
}

/// Current simulated tick (0 outside the simulator).
pub fn now() -> u64 {
    NOW.with(|n| n.get())
}

/// Global step counter; increases by one per task poll in the simulator.
/// Histories use it as a total order finer than ticks.
pub fn step() -> u64 {
    STEP.with(|s| s.get())
}

pub(crate) fn set_now(t: u64) {
    NOW.with(|n| n.set(t))
}

pub struct Pause(bool);

impl Future for Pause {
    type Output = ();
    fn poll(mut self: Pin<&mut Self>, _: &mut Context<'_>) -> Poll<()> {
        if self.0 {
            Poll::Ready(())
        } else {
            self.0 = true;
            Poll::Pending
        }
    }
}

/// Yield to the scheduler once.
pub fn pause() -> Pause {
    Pause(false)
}

pub struct Sleep(u64);

impl Future for Sleep {
    type Output = ();
    fn poll(self: Pin<&mut Self>, _: &mut Context<'_>) -> Poll<()> {
        if now() >= self.0 {
            Poll::Ready(())
        } else {
            WAKE_AT.with(|w| w.set(Some(self.0)));
            Poll::Pending
        }
    }
}

/// Suspend until the given tick.
pub fn sleep_until(t: u64) -> Sleep {
    Sleep(t)
}

/// Suspend for `d` ticks (at least one).
pub fn sleep(d: u64) -> Sleep {
    Sleep(now() + d.max(1))
}

/// Drive a future to completion on the current thread, spinning through
/// every `pause`.
pub fn block_on<F: Future>(f: F) -> F::Output {
    let mut f = std::pin::pin!(f);
    let mut cx = Context::from_waker(Waker::noop());
    loop {
        if let Poll::Ready(v) = f.as_mut().poll(&mut cx) {
            return v;
        }
        std::hint::spin_loop();
    }
}

pub type TaskId = u64;
type BoxFut = Pin<Box<dyn Future<Output = ()>>>;

struct Task {
    fut: BoxFut,
}

/// Seeded scheduler over boxed tasks. Runnable tasks are polled in random
/// order; sleeping tasks wake when simulated time reaches their deadline.
pub struct Executor {
    tasks: BTreeMap<TaskId, Task>,
    runnable: Vec<TaskId>,
    sleeping: BTreeSet<(u64, TaskId)>,
    next_id: TaskId,
    now: u64,
    steps: u64,
}

impl Default for Executor {
    fn default() -> Self {
        Self::new()
    }
}

impl Executor {
    pub fn new() -> Self {
        set_now(0);
        STEP.with(|s| s.set(0));
        Executor {
            tasks: BTreeMap::new(),
            runnable: vec![],
            sleeping: BTreeSet::new(),
            next_id: 0,
            now: 0,
            steps: 0,
        }
    }

    pub fn spawn(&mut self, f: impl Future<Output = ()> + 'static) -> TaskId {
        let id = self.next_id;
        self.next_id += 1;
        self.tasks.insert(id, Task { fut: Box::pin(f) });
        self.runnable.push(id);
        id
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn live(&self) -> usize {
        self.tasks.len()
    }

    pub fn has_runnable(&self) -> bool {
        !self.runnable.is_empty()
    }

    pub fn is_alive(&self, id: TaskId) -> bool {
        self.tasks.contains_key(&id)
    }

    /// Earliest wake-up among sleeping tasks.
    pub fn next_wake(&self) -> Option<u64> {
        self.sleeping.first().map(|(t, _)| *t)
    }

    /// Polls one runnable task chosen by `rng`. Returns false if none.
    pub fn step(&mut self, rng: &mut ChaCha8Rng) -> bool {
        if self.runnable.is_empty() {
            return false;
        }
        let i = rng.gen_range(0..self.runnable.len());
        let id = self.runnable.swap_remove(i);
        self.poll_task(id);
        true
    }

    /// Polls the given runnable task (used by exhaustive schedule drivers).
    pub fn step_task(&mut self, id: TaskId) -> bool {
        match self.runnable.iter().position(|t| *t == id) {
            Some(i) => {
                self.runnable.swap_remove(i);
                self.poll_task(id);
                true
            }
            None => false,
        }
    }

    /// Ids of runnable tasks in ascending order.
    pub fn runnable(&self) -> Vec<TaskId> {
        let mut v = self.runnable.clone();
        v.sort_unstable();
        v
    }

    fn poll_task(&mut self, id: TaskId) {
        self.steps += 1;
        STEP.with(|s| s.set(self.steps));
        set_now(self.now);
        WAKE_AT.with(|w| w.set(None));
        let task = self.tasks.get_mut(&id).expect("task");
        let mut cx = Context::from_waker(Waker::noop());
        match task.fut.as_mut().poll(&mut cx) {
            Poll::Ready(()) => {
                self.tasks.remove(&id);
            }
            Poll::Pending => match WAKE_AT.with(|w| w.take()) {
                Some(t) if t > self.now => {
                    self.sleeping.insert((t, id));
                }
                _ => self.runnable.push(id),
            },
        }
    }

    /// Moves time forward to `t` and wakes every task due by then.
    pub fn advance_to(&mut self, t: u64) {
        debug_assert!(t >= self.now);
        self.now = t;
        set_now(t);
        while let Some(&(w, id)) = self.sleeping.first() {
            if w > t {
                break;
            }
            self.sleeping.pop_first();
            self.runnable.push(id);
        }
    }

    /// Runs until nothing is runnable or sleeping, or `max_steps` polls.
    /// Returns true if all tasks finished.
    pub fn run(&mut self, rng: &mut ChaCha8Rng, max_steps: u64) -> bool {
        let start = self.steps;
        loop {
            if self.steps - start >= max_steps {
                return self.tasks.is_empty();
            }
            if self.step(rng) {
                continue;
            }
            match self.next_wake() {
                Some(t) => self.advance_to(t),
                None => return self.tasks.is_empty(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::rc::Rc;
    use std::cell::RefCell;

    #[test]
    fn sleep_wakes_at_deadline() {
        let mut ex = Executor::new();
        let log = Rc::new(RefCell::new(vec![]));
        let l = log.clone();
        ex.spawn(async move {
            sleep(5).await;
            l.borrow_mut().push(now());
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(ex.run(&mut rng, 100));
        assert_eq!(*log.borrow(), vec![5]);
    }

    #[test]
    fn interleaving_is_seed_deterministic() {
        let run = |seed| {
            let mut ex = Executor::new();
            let log = Rc::new(RefCell::new(vec![]));
            for t in 0..3 {
                let l = log.clone();
                ex.spawn(async move {
                    for i in 0..4 {
                        l.borrow_mut().push(t * 10 + i);
                        pause().await;
                    }
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ex.run(&mut rng, 1000);
            let v = log.borrow().clone();
            v
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn block_on_runs_through_pauses() {
        let v = block_on(async {
            pause().await;
            pause().await;
            3
        });
        assert_eq!(v, 3);
    }
}
