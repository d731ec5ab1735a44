use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slack-dvfs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_schedule_reclaim_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.json");
    let sched = dir.path().join("s.csv");
    let assign = dir.path().join("a.csv");

    let out = bin(&["generate", "--kind", "lu", "--size", "50", "--out", p(&graph)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin(&["schedule", p(&graph), "--procs", "3", "--sched", "lpt", "--out", p(&sched)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&sched).unwrap();
    assert!(text.starts_with("task_id,processor,start,finish,T\n"));
    assert_eq!(text.lines().count(), 1 + 45);

    let out = bin(&["reclaim", p(&graph), p(&sched), "--alg", "mfs", "--out", p(&assign)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("MFS-DVFS") && stderr.contains("savings"), "{stderr}");
    assert!(fs::read_to_string(&assign)
        .unwrap()
        .starts_with("task_id,freq,duration,idle_tail,energy\n"));
}

#[test]
fn experiment_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = bin(&["experiment", "--print-config"]);
    assert!(out.status.success());
    let mut text = String::from_utf8(out.stdout).unwrap();
    text = text.replace("\"graphs\": 30", "\"graphs\": 2");
    fs::write(&cfg, text).unwrap();

    let res = dir.path().join("res");
    let out = bin(&["experiment", "--config", p(&cfg), "--procs", "2,4", "--sched", "fifo", "--out", p(&res)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("Mean energy savings (%) by graph family"));
    for f in ["results.csv", "results.json", "summary.txt"] {
        assert!(res.join(f).exists(), "{f}");
    }

    let out = bin(&["report", p(&res.join("results.json")), "--format", "csv"]);
    assert!(out.status.success());
    assert_eq!(out.stdout, fs::read(res.join("results.csv")).unwrap());

    let out = bin(&["report", p(&res.join("results.csv"))]);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        fs::read_to_string(res.join("summary.txt")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bin(&["experiment", "--profile", "huge"]).status.code(), Some(1));
    assert_eq!(bin(&["experiment", "--cpu", "pentium"]).status.code(), Some(1));
    assert_eq!(bin(&["schedule", "/no/such/graph.json"]).status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"families\": []}").unwrap();
    assert_eq!(bin(&["experiment", "--config", p(&bad)]).status.code(), Some(1));

    // writing into a directory that does not exist fails at run time
    let graph = dir.path().join("g.json");
    assert!(bin(&["generate", "--size", "10", "--out", p(&graph)]).status.success());
    let missing = dir.path().join("nope").join("s.csv");
    assert_eq!(bin(&["schedule", p(&graph), "--out", p(&missing)]).status.code(), Some(2));
}
