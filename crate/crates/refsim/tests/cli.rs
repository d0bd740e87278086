use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::process::{Command, Output};

use refsim::io::{read_command_trace, read_refresh_log, write_trace};
use refsim_core::audit::{retention_audit, AuditSpec};
use refsim_core::engine::{EngineConfig, RefreshCosts};
use refsim_core::oracle::oracle_check;
use refsim_core::system::SystemConfig;
use refsim_core::workload::{ReqKind, TraceRecord};
use refsim_core::PolicyKind;

fn simulate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simulate"))
        .args(args)
        .output()
        .expect("spawn simulate")
}

const SHORT: [&str; 6] = ["--warmup", "2000", "--cycles", "30000", "--cores", "2"];

fn short(extra: &[&str]) -> Output {
    let mut args = SHORT.to_vec();
    args.extend_from_slice(extra);
    simulate(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn bad_arguments_exit_1() {
    for args in [
        &["--policy", "banana"][..],
        &["--density", "12"],
        &["--config", "/nonexistent/refsim.cfg"],
        &["--no-such-flag"],
    ] {
        let o = simulate(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn bad_config_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.cfg");
    fs::write(&p, "[timing]\ntrcd_nss = 13.5\n").unwrap();
    let o = simulate(&["--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("trcd_nss"), "{}", stderr(&o));
}

#[test]
fn help_exits_0() {
    let o = simulate(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("--policy"));
}

#[test]
fn sweep_writes_results_and_solo_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = short(&[
        "--policy",
        "noref,ab,dsarp",
        "--density",
        "8,32",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(refsim::csv::RESULT_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    let ws = |policy: &str, density: &str| -> f64 {
        let r = rows.iter().find(|r| r[0] == policy && r[1] == density).unwrap();
        r[4].parse().unwrap()
    };
    for d in ["8", "32"] {
        assert!(ws("noref", d) >= ws("ab", d));
        assert!(ws("dsarp", d) >= ws("ab", d));
    }

    let solo = fs::read_to_string(dir.path().join("r.solo.csv")).unwrap();
    assert_eq!(solo.lines().next(), Some(refsim::csv::SOLO_HEADER));
    // One noref solo run per core and density.
    assert_eq!(solo.lines().count(), 1 + 2 * 2);
}

#[test]
fn stdout_when_no_out_and_config_file_runs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.cfg");
    fs::write(
        &p,
        "policy = pb, darp\ndensity = 16\ncores = 2\nwarmup_cycles = 1k\nmeasured_cycles = 20_000\n\
         [workload]\nkind = stream\nintensity = 10\n",
    )
    .unwrap();
    let o = simulate(&["--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().skip(1).all(|l| l.contains(",16,stream,")), "{text}");
}

#[test]
fn dumps_can_be_audited_and_oracle_checked() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("ref.csv");
    let cmds = dir.path().join("cmd.tsv");
    let lat = dir.path().join("lat.csv");
    let o = short(&[
        "--policy",
        "dsarp",
        "--density",
        "32",
        "--dump-refresh-log",
        log.to_str().unwrap(),
        "--dump-cmd-trace",
        cmds.to_str().unwrap(),
        "--dump-latency",
        lat.to_str().unwrap(),
        "--check-oracle",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let sys = SystemConfig::new(PolicyKind::Dsarp, 32).unwrap();
    let timing = sys.timing().unwrap();
    let g = sys.geometry;

    let logs = read_refresh_log(BufReader::new(fs::File::open(&log).unwrap()), g.channels as usize).unwrap();
    assert_eq!(logs.len(), 2);
    let costs = RefreshCosts::new(&g, &timing, 32.0);
    let spec = AuditSpec {
        ranks: g.ranks_per_channel as u8,
        banks: g.banks_per_rank as u8,
        rows_per_bank: g.rows_per_bank,
        retention_cycles: 21_333_333,
        slack: 8 * timing.trefi_ab,
        costs,
        nominal: vec![None; 16],
    };
    for ch in &logs {
        assert!(!ch.is_empty());
        let report = retention_audit(ch, &spec, 32_000);
        assert!(report.passed());
        assert_eq!(report.refreshes, ch.len() as u64);
    }

    let history = read_command_trace(BufReader::new(fs::File::open(&cmds).unwrap())).unwrap();
    assert!(history.windows(2).all(|w| w[0].1 <= w[1].1));
    for channel in 0..g.channels as u8 {
        let h: Vec<_> = history.iter().copied().filter(|(c, _)| c.channel == channel).collect();
        assert!(h.len() > 100);
        let cfg = EngineConfig {
            channel,
            geometry: g,
            timing: timing.clone(),
            sarp: true,
            retention_ms: 32.0,
        };
        assert_eq!(oracle_check(&cfg, &h), Vec::new());
    }

    let lat = fs::read_to_string(&lat).unwrap();
    assert_eq!(lat.lines().next(), Some("latency_cycles,count"));
    assert!(lat.lines().count() > 2);
}

fn trace_file(path: &Path, seed: u64) {
    let records: Vec<TraceRecord> = (0..5000u64)
        .map(|i| TraceRecord {
            bubble: (i % 7) as u32,
            addr: ((i * 2654435761 + seed) % (1 << 26)) & !63,
            kind: if i % 4 == 0 { ReqKind::Write } else { ReqKind::Read },
        })
        .collect();
    write_trace(path, &records).unwrap();
}

#[test]
fn gzip_trace_workload_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.trace.gz");
    let b = dir.path().join("b.trace");
    trace_file(&a, 1);
    trace_file(&b, 2);
    let o = short(&[
        "--policy",
        "darp",
        "--density",
        "8",
        "--trace",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("darp,8,trace,"), "{text}");

    let missing = dir.path().join("missing.trace");
    let o = short(&["--trace", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn serial_and_parallel_output_match() {
    let run = |jobs: &str| {
        let o = short(&[
            "--policy",
            "ab,pb,elastic",
            "--density",
            "16",
            "--synthetic",
            "random,stream",
            "--jobs",
            jobs,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        o.stdout
    };
    let serial = run("1");
    assert_eq!(String::from_utf8_lossy(&serial).lines().count(), 7);
    assert_eq!(serial, run("3"));
}

#[test]
fn refresh_interval_shorter_than_trfc_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("fast.cfg");
    fs::write(&p, "policy = ab\ndensity = 8\n[timing]\nretention_ms = 0.5\n").unwrap();
    let o = simulate(&["--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tREFIab"), "{}", stderr(&o));
}
