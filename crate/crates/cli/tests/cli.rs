use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rtxp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtxp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = rtxp(&[
        "run",
        "--protocol",
        "rtxp",
        "--channel",
        "free-space",
        "--alarm-period",
        "1",
        "--nodes",
        "100",
        "--replications",
        "2",
        "--seed",
        "7",
        "--out-dir",
        path(&out),
        "--set",
        "alarms=20",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "experiment.conf",
        "packets.csv",
        "runs.csv",
        "delay.dat",
        "delivery.dat",
        "energy.dat",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let packets = fs::read_to_string(out.join("packets.csv")).unwrap();
    let mut lines = packets.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("protocol,channel,alarm_period_s,nodes,replication,seed,packet_id"));
    assert_eq!(lines.count(), 40);
    assert!(packets.lines().skip(1).all(|l| l.ends_with(",delivered")));
    assert_eq!(
        fs::read_to_string(out.join("runs.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
    assert!(stdout(&o).contains("rtxp free-space alarm_period 1 s"));
    assert!(!out.join("trace.txt").exists());
}

#[test]
fn trace_flag_adds_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = rtxp(&[
        "run",
        "--nodes",
        "100",
        "--replications",
        "1",
        "--set",
        "alarms=5",
        "--trace",
        "--out-dir",
        path(dir.path()),
    ]);
    assert!(o.status.success());
    let trace = fs::read_to_string(dir.path().join("trace.txt")).unwrap();
    assert!(trace.contains("data"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("exp.conf");
    fs::write(
        &conf,
        "# campaign\n[experiment]\nprotocol = pedamacs\nnodes = 100\nreplications = 1\nalarms = 10\nseed = 3\n\n[pedamacs]\nt_slot_us = 2500\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = rtxp(&[
        "run",
        "--config",
        path(&conf),
        "--seed",
        "4",
        "--out-dir",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let written = fs::read_to_string(out.join("experiment.conf")).unwrap();
    assert!(written.contains("protocol = pedamacs"));
    assert!(written.contains("seed = 4"));
    assert!(written.contains("t_slot_us = 2500"));
}

#[test]
fn bad_config_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "[experiment]\nnodes = 100\nthis line is wrong\n").unwrap();
    let o = rtxp(&[
        "run",
        "--config",
        path(&conf),
        "--out-dir",
        path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn unknown_protocol_is_rejected() {
    let o = rtxp(&["run", "--protocol", "tdma", "--nodes", "100"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |d: &str| {
        vec![
            "run".to_string(),
            "--protocol".into(),
            "xmac-gradient".into(),
            "--channel".into(),
            "log-normal".into(),
            "--nodes".into(),
            "100".into(),
            "--replications".into(),
            "2".into(),
            "--set".into(),
            "alarms=30".into(),
            "--out-dir".into(),
            d.to_string(),
        ]
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let v = args(path(d));
        let refs: Vec<&str> = v.iter().map(String::as_str).collect();
        assert!(rtxp(&refs).status.success());
    }
    for f in ["packets.csv", "runs.csv", "energy.dat"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn analyze_prints_default_durations() {
    let o = rtxp(&["analyze"]);
    assert!(o.status.success());
    let s = stdout(&o);
    for kv in [
        "d_awake_us=23800",
        "d_sleep_us=2356200",
        "d_activity_us=66200",
        "wctt_rtxp_us=14534400",
        "c_rtxp=36",
    ] {
        assert!(s.contains(kv), "missing {kv} in\n{s}");
    }
}

#[test]
fn capacity_curve_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("curve.dat");
    let o = rtxp(&["capacity-curve", "--step-ppm", "10000", "--out", path(&f)]);
    assert!(o.status.success());
    let text = fs::read_to_string(&f).unwrap();
    let caps: Vec<u64> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(caps.len(), 100);
    assert!(caps.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn exported_topology_checks_clean() {
    let dir = tempfile::tempdir().unwrap();
    let topo = dir.path().join("t.txt");
    let coords = dir.path().join("c.txt");
    let dump = dir.path().join("s.txt");
    let o = rtxp(&[
        "export-topology",
        "--nodes",
        "200",
        "--seed",
        "9",
        "--out",
        path(&topo),
        "--coords",
        path(&coords),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::metadata(&coords).unwrap().len() > 0);

    let o = rtxp(&[
        "check-schedule",
        "--topology",
        path(&topo),
        "--dump",
        path(&dump),
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("nodes 200 "));
    assert!(stdout(&o).ends_with("violations 0\n"));

    // The dump read back audits the same way.
    let o = rtxp(&[
        "check-schedule",
        "--topology",
        path(&topo),
        "--schedule",
        path(&dump),
    ]);
    assert!(o.status.success());
}

#[test]
fn tampered_schedule_fails_the_audit() {
    let dir = tempfile::tempdir().unwrap();
    let topo = dir.path().join("t.txt");
    let dump = dir.path().join("s.txt");
    assert!(
        rtxp(&["export-topology", "--nodes", "100", "--out", path(&topo)])
            .status
            .success()
    );
    assert!(rtxp(&[
        "check-schedule",
        "--topology",
        path(&topo),
        "--dump",
        path(&dump)
    ])
    .status
    .success());
    // Collapse the frame: every link moves to slot 0.
    let text = fs::read_to_string(&dump).unwrap();
    let mut links = Vec::new();
    let mut header = String::new();
    for line in text.lines() {
        if line.starts_with('#') {
            header = line.to_string();
        } else if let Some((_, rest)) = line.split_once(' ') {
            links.push(rest.to_string());
        }
    }
    fs::write(&dump, format!("{header}\n0 {}\n", links.join(" "))).unwrap();
    let o = rtxp(&[
        "check-schedule",
        "--topology",
        path(&topo),
        "--schedule",
        path(&dump),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("Interference"));
}
