//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use distlist::core_list::{Key, List};
use distlist::exec::{block_on, Executor};
use distlist::runtime::config::Protocol;
use distlist::runtime::{simulate, Report, SimConfig, World};
use distlist::verify::fuzz::{base_history, ReplayFixture};
use distlist::verify::linearizability::check_linearizable;
use distlist::verify::lookup::check_lookups;
use distlist_cli::scenario;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn scenario_cfg(name: &str, seed: u64) -> SimConfig {
    let mut c = SimConfig::from_kv(scenario(name).expect("bundled scenario")).expect("scenario parses");
    c.seed = seed;
    c
}

fn failing(r: &Report) -> Vec<String> {
    let mut v: Vec<String> = r
        .verdicts
        .iter()
        .filter(|(_, v)| !v.ok)
        .map(|(k, v)| format!("{k}: {}", v.detail))
        .collect();
    v.extend(r.faults.iter().cloned());
    v
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// 1. Base-list histories are linearizable.
fn base_linearizability() -> Outcome {
    let t = Instant::now();
    let (mut concurrent, mut delinked) = (0, 0);
    for seed in 0..1000u64 {
        let workers = 1 + (seed % 4) as usize;
        let c = base_history(seed, workers, 8, seed % 2 == 0);
        concurrent += usize::from(workers > 1);
        delinked += c.delinked;
        check_linearizable(&c.initial, &c.ops).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    let el = t.elapsed();
    ensure(el < Duration::from_secs(120), || format!("took {el:?}"))?;
    ensure(delinked > 0, || "no delink pass removed anything".into())?;
    Ok(format!(
        "1000 histories ({concurrent} concurrent, {delinked} nodes delinked), 0 violations in {el:.1?}"
    ))
}

/// Small, fast configuration with one move and sometimes a split.
fn fuzz_cfg(seed: u64) -> SimConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = SimConfig {
        protocol: if seed.is_multiple_of(2) { Protocol::Am } else { Protocol::Tr },
        servers: rng.gen_range(2..=3),
        clients: 3,
        seed,
        steps: 60,
        sublists: rng.gen_range(1..=2),
        initial_keys: 12,
        key_space: 8,
        think: (1, 3),
        net_delay: (1, 6),
        ..SimConfig::default()
    };
    c.op_mix.lookup = 4;
    let mut script = format!("{}:move:0:1", rng.gen_range(2..20));
    if rng.gen_bool(0.5) {
        script.push_str(&format!(";{}:split:0:{}", rng.gen_range(2..30), rng.gen_range(1..5)));
    }
    c.set("script", &script).expect("script parses");
    c
}

/// 2. Lookups include every node present throughout.
fn lookup_property() -> Outcome {
    let (mut lookups, mut during_move, mut moved) = (0, 0, 0);
    for seed in 0..1000u64 {
        let w = simulate(fuzz_cfg(seed));
        let st = w.ctx.stats.borrow();
        ensure(st.faults.is_empty(), || format!("seed {seed}: {:?}", st.faults))?;
        let ops = st.history.ops();
        let bad = check_lookups(&w.initial, &ops);
        ensure(bad.is_empty(), || format!("seed {seed}: {}", bad[0]))?;
        let windows: Vec<(u64, u64)> = st
            .moves
            .iter()
            .filter_map(|m| Some((m.t_start, m.t_switch?)))
            .collect();
        moved += usize::from(!windows.is_empty());
        for e in st.history.events() {
            if let distlist::verify::history::EventKind::Invoke(distlist::verify::history::Op::Lookup(_)) = e.kind {
                lookups += 1;
                during_move += usize::from(windows.iter().any(|&(a, b)| (a..=b).contains(&e.tick)));
            }
        }
    }
    ensure(during_move > 0 && moved >= 900, || format!("{during_move} lookups overlapped a move in {moved} runs"))?;
    Ok(format!(
        "1000 schedules, {lookups} lookups ({during_move} during a move or switch), 0 violations"
    ))
}

/// 3. Aborting move: clean when quiet, aborts and recovers when hot.
fn am_move() -> Outcome {
    for seed in 0..10 {
        let r = simulate(scenario_cfg("quiescent-move", seed)).report();
        ensure(failing(&r).is_empty(), || format!("quiescent seed {seed}: {:?}", failing(&r)))?;
        ensure(!r.moves.is_empty(), || format!("quiescent seed {seed}: no move"))?;
        for m in &r.moves {
            ensure(m.attempts == 1 && m.aborts == 0, || {
                format!("quiescent seed {seed}: attempts {} aborts {}", m.attempts, m.aborts)
            })?;
        }
    }
    let mut worst = 0.0f64;
    let mut aborts = 0;
    for seed in 0..10 {
        let cfg = scenario_cfg("hot-move", seed);
        let stop = cfg.write_until.expect("hot-move stops writing");
        let r = simulate(cfg).report();
        ensure(failing(&r).is_empty(), || format!("hot seed {seed}: {:?}", failing(&r)))?;
        let m = r.moves.first().ok_or_else(|| format!("hot seed {seed}: no move"))?;
        ensure(m.aborts >= 1, || format!("hot seed {seed}: no abort"))?;
        ensure(m.residues.iter().all(|&x| x == 0), || format!("hot seed {seed}: residues {:?}", m.residues))?;
        let cas = m.t_cas.ok_or_else(|| format!("hot seed {seed}: move never finished"))?;
        let bound = 10 * m.nodes as u64;
        let took = cas.saturating_sub(stop);
        ensure(took <= bound, || format!("hot seed {seed}: done {took} ticks after writes stopped, bound {bound}"))?;
        worst = worst.max(took as f64 / bound as f64);
        aborts += m.aborts;
    }
    Ok(format!(
        "quiescent: 10/10 single attempts; hot: {aborts} aborts over 10 runs, residue 0, worst completion {:.0}% of 10*|sublist|",
        worst * 100.0
    ))
}

/// 4. start - end == offset at quiescent checkpoints; splits conserve it.
fn counter_identity() -> Outcome {
    let (mut checkpoints, mut splits) = (0, 0);
    let names = ["split-storm", "hot-move", "quiescent-move"];
    for name in names {
        for seed in 0..4 {
            let r = simulate(scenario_cfg(name, seed)).report();
            ensure(r.checkpoint_violations.is_empty(), || {
                format!("{name} seed {seed}: {}", r.checkpoint_violations[0])
            })?;
            ensure(r.verdicts["counter_identity"].ok, || {
                format!("{name} seed {seed}: {}", r.verdicts["counter_identity"].detail)
            })?;
            for s in &r.splits {
                ensure(s.a1 + s.a2 == s.old_offset, || format!("{name} seed {seed}: split {s:?}"))?;
            }
            checkpoints += r.checkpoints;
            splits += r.splits.len();
        }
    }
    ensure(checkpoints > 0 && splits > 0, || format!("{checkpoints} checkpoints, {splits} splits"))?;
    Ok(format!("{checkpoints} checkpoints and {splits} splits, 0 violations"))
}

fn tr_cfg(seed: u64) -> SimConfig {
    let mut c = SimConfig {
        protocol: Protocol::Tr,
        servers: 2,
        clients: 3,
        seed,
        steps: 150,
        sublists: 1,
        initial_keys: 10,
        key_space: 16,
        think: (1, 2),
        net_delay: (1, 8),
        reorder: true,
        ..SimConfig::default()
    };
    c.op_mix.insert = 5;
    c.op_mix.delete = 3;
    c.set("script", &format!("{}:move:0:1", 5 + seed % 10)).expect("script parses");
    c
}

/// 5 and 7. Replicating moves reconstruct the source exactly, never abort,
/// and answer clients before replicating.
fn tr_runs() -> (Outcome, Outcome) {
    let run = || -> Result<(u64, usize, u64), String> {
        let (mut replicated, mut busy_moves, mut full) = (0, 0, 0);
        for seed in 0..500u64 {
            let w = simulate(tr_cfg(seed));
            let r = w.report();
            ensure(failing(&r).is_empty(), || format!("seed {seed}: {:?}", failing(&r)))?;
            full += 1;
            let st = w.ctx.stats.borrow();
            ensure(st.faults.is_empty(), || format!("seed {seed}: {:?}", st.faults))?;
            ensure(!st.moves.is_empty(), || format!("seed {seed}: no move"))?;
            for m in &st.moves {
                ensure(m.snapshots_equal == Some(true), || format!("seed {seed}: source and target differ at the CAS"))?;
                ensure(m.oracle_equal == Some(true), || format!("seed {seed}: target differs from the replay oracle"))?;
                ensure(m.aborts == 0, || format!("seed {seed}: {} aborts", m.aborts))?;
                busy_moves += usize::from(m.replayed_events > 0);
            }
            for (req, line) in &st.replicate_lines {
                let resp = st.response_line.get(req).copied();
                ensure(resp.is_some_and(|r| r < *line), || {
                    format!("seed {seed}: request {req:?} replicated at line {line}, answered at {resp:?}")
                })?;
            }
            replicated += st.replicates;
        }
        Ok((replicated, busy_moves, full))
    };
    let five = run();
    let c5 = five.clone().and_then(|(replicated, busy, full)| {
        ensure(busy >= 400, || format!("only {busy} of 500 moves replayed updates"))?;
        Ok(format!(
            "500 runs, {busy} with updates replayed ({replicated} replicates), 100% equal to source and oracle; {full} fully verified"
        ))
    });
    let c7 = five.and_then(|(replicated, _, _)| {
        let mut extra = 0;
        for name in ["reorder-adversary", "sorted-mixed"] {
            for seed in 0..2 {
                let r = simulate(scenario_cfg(name, seed)).report();
                ensure(r.verdicts["replicate_after_response"].ok, || {
                    format!("{name} seed {seed}: {}", r.verdicts["replicate_after_response"].detail)
                })?;
                let aborts: u32 = r.moves.iter().map(|m| m.aborts).sum();
                ensure(aborts == 0, || format!("{name} seed {seed}: {aborts} aborts"))?;
                extra += r.replicates;
            }
        }
        ensure(replicated + extra > 0, || "no replicates sent".into())?;
        Ok(format!("0 aborts; {} replicates each sent after the client response", replicated + extra))
    });
    (c5, c7)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = vec![];
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// 6. Replay result does not depend on delivery order.
fn replay_order() -> Outcome {
    let mut exhaustive = 0;
    for seed in 0..40u64 {
        let n = 1 + (seed % 4) as usize;
        let fx = ReplayFixture::generate(seed, 2 + (seed % 3) as usize, n);
        let want = fx.expected();
        for p in permutations(n) {
            let got = fx.deliver(&p);
            ensure(got == want, || format!("fixture {seed}, order {p:?}"))?;
            exhaustive += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..200u64 {
        let fx = ReplayFixture::generate(1000 + i, 4, rng.gen_range(6..=12));
        let mut p: Vec<usize> = (0..fx.events.len()).collect();
        p.shuffle(&mut rng);
        ensure(fx.deliver(&p) == fx.expected(), || format!("fixture {}, order {p:?}", 1000 + i))?;
    }
    Ok(format!("{exhaustive} exhaustive orders over 40 fixtures and 200 random orders of 6-12 events, all equal"))
}

/// 8. Post-switch requests are delegated; copies reclaimed exactly theta later.
fn switch_and_leases() -> Outcome {
    let (mut req, mut moves) = (0, 0);
    let mut cfgs: Vec<SimConfig> = (0..20).map(fuzz_cfg).collect();
    cfgs.extend((0..3).map(|s| scenario_cfg("quiescent-move", s)));
    cfgs.extend((0..2).map(|s| scenario_cfg("sorted-mixed", s)));
    for c in cfgs {
        let (seed, theta) = (c.seed, c.theta);
        let r = simulate(c).report();
        ensure(r.post_switch_delegated == r.post_switch_requests, || {
            format!("seed {seed}: {} of {} delegated", r.post_switch_delegated, r.post_switch_requests)
        })?;
        ensure(r.gen_trips == 0, || format!("seed {seed}: {} generation trips", r.gen_trips))?;
        for m in &r.moves {
            let (Some(s), Some(rc)) = (m.t_switch, m.t_reclaim) else {
                return Err(format!("seed {seed}: move of {} not reclaimed", m.sublist));
            };
            ensure(rc - s == theta, || format!("seed {seed}: reclaimed {} after switch", rc - s))?;
            moves += 1;
        }
        req += r.post_switch_requests;
    }
    ensure(req > 0, || "no post-switch requests".into())?;
    Ok(format!("{req} post-switch requests all delegated; {moves} copies reclaimed at exactly theta; 0 gen trips"))
}

/// 9. Two delink passes after quiescence remove every tombstone.
fn delinking() -> Outcome {
    let mut removed = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys: Vec<u64> = (0..30).map(|_| rng.gen_range(0..100)).collect();
        let list = List::from_keys(128, &keys);
        let victims: Vec<u64> = keys.iter().copied().filter(|_| rng.gen_bool(0.4)).collect();
        block_on(async {
            for k in victims {
                if let Some(r) = list.find(k) {
                    let _ = list.delete(r).await;
                }
            }
        });
        let live = list.keys();
        removed += list.dump().iter().filter(|e| e.1).count();
        let mut exec = Executor::new();
        let l = std::rc::Rc::new(list);
        let l2 = l.clone();
        exec.spawn(async move {
            for _ in 0..2 {
                l2.delink_pass().await.expect("not busy");
            }
        });
        assert!(exec.run(&mut rng, 1_000_000));
        ensure(l.dump().iter().all(|e| !e.1), || format!("list seed {seed}: tombstone left"))?;
        ensure(l.keys() == live, || format!("list seed {seed}: live nodes changed"))?;
    }
    let mut dist_removed = 0;
    for seed in 0..20u64 {
        let mut c = fuzz_cfg(seed);
        c.op_mix.delete = 4;
        let mut w = simulate(c);
        let live = |w: &World| -> Vec<_> { w.global().into_iter().filter(|n| !n.deleted).map(|n| n.id).collect() };
        let before = live(&w);
        let tombs = w.global().iter().filter(|n| n.deleted && matches!(n.key, Key::App(_))).count();
        let servers: Vec<_> = w.ctx.servers.borrow().clone();
        for s in servers {
            w.spawn(async move {
                for _ in 0..2 {
                    s.delink_all().await.expect("quiescent");
                }
            });
        }
        ensure(w.run(), || format!("sim seed {seed}: delink passes stalled"))?;
        let left = w.global().iter().filter(|n| n.deleted && matches!(n.key, Key::App(_))).count();
        ensure(left == 0, || format!("sim seed {seed}: {left} tombstones reachable"))?;
        ensure(live(&w) == before, || format!("sim seed {seed}: live reachability changed"))?;
        dist_removed += tombs;
    }
    ensure(removed > 0 && dist_removed > 0, || "no tombstones to remove".into())?;
    Ok(format!(
        "200 lists ({removed} tombstones) and 20 distributed runs ({dist_removed}) left with 0 tombstones, live nodes unchanged"
    ))
}

/// 10. Sorted variant: order, uniqueness, routing and search cost.
fn sorted() -> Outcome {
    let mut searches = 0;
    let mut cfgs: Vec<SimConfig> = (0..4).map(|s| scenario_cfg("sorted-mixed", s)).collect();
    for seed in 0..12u64 {
        let mut c = fuzz_cfg(seed);
        c.set("variant", "sorted").expect("variant");
        c.key_space = 64;
        c.initial_keys = 16;
        cfgs.push(c);
    }
    for c in cfgs {
        let seed = c.seed;
        let r = simulate(c).report();
        ensure(failing(&r).is_empty(), || format!("seed {seed}: {:?}", failing(&r)))?;
        for v in ["sorted_structure", "search_visits", "sorted_order_checkpoints"] {
            ensure(r.verdicts.contains_key(v), || format!("seed {seed}: {v} not checked"))?;
        }
        searches += r.ops.get("sorted_search").map_or(0, |o| o.completed);
    }
    ensure(searches > 0, || "no searches".into())?;
    Ok(format!("16 runs, {searches} searches within the visit bound; order, uniqueness and routing hold"))
}

/// 11. Same seed, same trace bytes.
fn determinism() -> Outcome {
    let mut names: BTreeSet<&str> = BTreeSet::new();
    for (name, _) in distlist_cli::SCENARIOS {
        let a = simulate(scenario_cfg(name, 7)).trace_text();
        let b = simulate(scenario_cfg(name, 7)).trace_text();
        ensure(a == b, || format!("{name}: traces differ"))?;
        let c = simulate(scenario_cfg(name, 8)).trace_text();
        ensure(a != c, || format!("{name}: seed has no effect"))?;
        names.insert(name);
    }
    Ok(format!("{} scenarios reproduce byte-identical traces", names.len()))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed())
}

fn main() {
    type Line = (&'static str, Outcome, Duration);
    let results: Vec<Line> = std::thread::scope(|s| {
        let h1 = s.spawn(|| timed(base_linearizability));
        let h2 = s.spawn(|| timed(lookup_property));
        let h3 = s.spawn(|| timed(am_move));
        let h4 = s.spawn(|| timed(counter_identity));
        let h57 = s.spawn(|| timed(tr_runs));
        let h6 = s.spawn(|| timed(replay_order));
        let h8 = s.spawn(|| timed(switch_and_leases));
        let h9 = s.spawn(|| timed(delinking));
        let h10 = s.spawn(|| timed(sorted));
        let h11 = s.spawn(|| timed(determinism));
        let panicked = || (Err("panicked".to_string()), Duration::ZERO);
        let join = |h: std::thread::ScopedJoinHandle<'_, (Outcome, Duration)>| h.join().unwrap_or_else(|_| panicked());
        let ((c5, c7), t57) = h57
            .join()
            .unwrap_or_else(|_| ((Err("panicked".into()), Err("panicked".into())), Duration::ZERO));
        let line = |name, (o, d): (Outcome, Duration)| (name, o, d);
        vec![
            line("base-list linearizability", join(h1)),
            line("lookup property", join(h2)),
            line("aborting move semantics", join(h3)),
            line("counter identity", join(h4)),
            ("replication reconstruction", c5, t57),
            line("replay order independence", join(h6)),
            ("replication never aborts or delays clients", c7, t57),
            line("switch liveness and lease safety", join(h8)),
            line("delinking", join(h9)),
            line("sorted list", join(h10)),
            line("determinism", join(h11)),
        ]
    });
    let mut ok = true;
    for (i, (name, r, d)) in results.iter().enumerate() {
        match r {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{d:.1?}]", i + 1),
            Err(e) => {
                ok = false;
                println!("FAIL {:>2} {name}: {e} [{d:.1?}]", i + 1);
            }
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
