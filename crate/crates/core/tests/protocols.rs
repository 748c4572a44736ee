use distlist::runtime::config::{Protocol, Variant};
use distlist::runtime::trace;
use distlist::runtime::{simulate, SimConfig};
use distlist::verify::history::History;

fn cfg(protocol: Protocol, seed: u64, script: &str) -> SimConfig {
    let mut c = SimConfig {
        protocol,
        servers: 2,
        clients: 3,
        seed,
        steps: 120,
        initial_keys: 12,
        key_space: 16,
        ..SimConfig::default()
    };
    c.set("script", script).unwrap();
    c
}

fn assert_clean(c: SimConfig) -> distlist::runtime::Report {
    let r = simulate(c).report();
    let bad: Vec<_> = r.verdicts.iter().filter(|(_, v)| !v.ok).collect();
    assert!(bad.is_empty() && r.faults.is_empty(), "{bad:?} {:?}", r.faults);
    r
}

#[test]
fn quiet_aborting_move_takes_one_attempt() {
    let mut c = cfg(Protocol::Am, 3, "5:move:0:1");
    c.start_at = 400;
    let r = assert_clean(c);
    assert_eq!(r.moves.len(), 1);
    let m = &r.moves[0];
    assert_eq!((m.attempts, m.aborts), (1, 0));
    assert!(m.t_cas.is_some() && m.t_reclaim.is_some());
    assert_eq!(r.moves[0].residues, Vec::<usize>::new());
}

#[test]
fn replicating_moves_never_abort() {
    for seed in 0..20 {
        let r = assert_clean(cfg(Protocol::Tr, seed, "3:move:0:1"));
        for m in &r.moves {
            assert_eq!(m.aborts, 0, "seed {seed}");
            assert_eq!(m.snapshots_equal, Some(true), "seed {seed}");
            assert_eq!(m.oracle_equal, Some(true), "seed {seed}");
        }
    }
}

#[test]
fn copies_are_reclaimed_theta_after_switch() {
    for p in [Protocol::Am, Protocol::Tr] {
        let mut c = cfg(p, 1, "5:move:0:1");
        c.theta = 300;
        let r = assert_clean(c);
        let m = &r.moves[0];
        assert_eq!(m.t_reclaim.unwrap() - m.t_switch.unwrap(), 300);
        assert_eq!(r.gen_trips, 0);
        assert_eq!(r.post_switch_delegated, r.post_switch_requests);
    }
}

#[test]
fn splits_keep_counter_offsets() {
    let mut c = cfg(Protocol::Am, 4, "10:split:0:4;40:move:1:1;80:split:0:2");
    c.servers = 3;
    c.delink_every = 30;
    let r = assert_clean(c);
    assert_eq!(r.splits.len(), 2);
    for s in &r.splits {
        assert_eq!(s.a1 + s.a2, s.old_offset);
    }
    assert!(r.checkpoint_violations.is_empty());
}

#[test]
fn sorted_variant_stays_sorted() {
    for seed in 0..6 {
        let mut c = cfg(if seed % 2 == 0 { Protocol::Am } else { Protocol::Tr }, seed, "20:move:0:1;50:split:0:3");
        c.variant = Variant::Sorted;
        c.key_space = 128;
        c.initial_keys = 20;
        assert_clean(c);
    }
}

#[test]
fn runs_are_deterministic() {
    let c = cfg(Protocol::Tr, 9, "4:move:0:1");
    let a = simulate(c.clone()).trace_text();
    let b = simulate(c.clone()).trace_text();
    assert_eq!(a, b);
    let other = simulate(SimConfig { seed: 10, ..c }).trace_text();
    assert_ne!(a, other);

    let parsed = trace::parse(&a).unwrap();
    let back: SimConfig = serde_json::from_str(&parsed.config_json).unwrap();
    assert_eq!(back.seed, 9);
}

#[test]
fn history_lines_roundtrip() {
    let w = simulate(cfg(Protocol::Am, 2, "5:move:0:1"));
    let h = &w.ctx.stats.borrow().history;
    let back = History::from_lines(&h.to_lines()).unwrap();
    assert_eq!(back.events(), h.events());
    assert_eq!(back.ops(), h.ops());
}

#[test]
fn invalid_configs_are_reported() {
    let mut c = SimConfig::default();
    assert!(c.set("servers", "x").is_err());
    assert!(c.set("nope", "1").is_err());
    assert!(c.set("script", "1:jump:0:0").is_err());
    c.servers = 0;
    assert!(c.validate().is_err());
}
