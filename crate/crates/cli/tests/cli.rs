use std::fs;
use std::process::{Command, Output};

fn distlist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distlist"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_a_replayable_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("q.trace");
    let t = trace.to_str().unwrap();
    let o = distlist(&["run", "-c", "quiescent-move", "--seed", "3", "--trace-out", t]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS linearizable"));
    assert!(dir.path().join("q.trace.history").exists());

    let o = distlist(&["replay-trace", t]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("trace reproduced"));

    let o = distlist(&["replay-trace", t, "--verify-only", "--verify", "lin,lookup"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS lookup_inclusion"));
    assert!(!stdout(&o).contains("moves"));
}

#[test]
fn edited_traces_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace");
    let t = trace.to_str().unwrap();
    assert!(distlist(&["run", "--steps", "40", "--trace-out", t]).status.success());
    let text = fs::read_to_string(&trace).unwrap();

    let mut lines: Vec<&str> = text.lines().collect();
    let edited = lines[2].replacen(' ', "  ", 1);
    lines[2] = &edited;
    fs::write(&trace, lines.join("\n") + "\n").unwrap();
    let o = distlist(&["replay-trace", t]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("digest"));

    fs::write(&trace, text.replacen("distlist-trace/1", "distlist-trace/0", 1)).unwrap();
    let o = distlist(&["replay-trace", t]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    fs::write(&conf, "protocol = am\nservers = 2\nsteps = 500\n").unwrap();
    let o = distlist(&[
        "run",
        "-c",
        conf.to_str().unwrap(),
        "--protocol",
        "tr",
        "--steps",
        "30",
        "--script",
        "5:move:0:1",
        "--set",
        "clients=1",
        "--json",
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    let json_end = out.rfind("\n}").unwrap() + 2;
    let v: serde_json::Value = serde_json::from_str(&out[..json_end]).unwrap();
    assert_eq!(v["protocol"], "tr");
    assert_eq!(v["moves"].as_array().unwrap().len(), 1);
    let issued: u64 = v["ops"].as_object().unwrap().values().map(|o| o["count"].as_u64().unwrap()).sum();
    assert_eq!(issued, 30);
}

#[test]
fn bad_input_exits_with_usage_errors() {
    assert_eq!(distlist(&["run", "--set", "nope=1"]).status.code(), Some(2));
    assert_eq!(distlist(&["run", "-c", "/no/such/file"]).status.code(), Some(2));
    assert_eq!(distlist(&["replay-trace", "/no/such/trace"]).status.code(), Some(2));
    assert!(!distlist(&["run", "--protocol", "xx"]).status.success());
}

#[test]
fn scenario_bank_is_listed() {
    let o = distlist(&["scenarios"]);
    let out = stdout(&o);
    for name in ["quiescent-move", "hot-move", "split-storm", "reorder-adversary", "sorted-mixed"] {
        assert!(out.contains(name));
    }
}
