use std::path::Path;
use std::process::{Command, Output};

use mpx_core::bench::{write_results, BenchResult};

fn run(bin: &str, dir: &Path, args: &[&str]) -> Output {
    Command::new(bin).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const MPXRUN: &str = env!("CARGO_BIN_EXE_mpxrun");
const MPXPROF: &str = env!("CARGO_BIN_EXE_mpxprof");
const DEMO: &str = env!("CARGO_BIN_EXE_mpx-demo");

#[test]
fn demo_ring_prints_one_line_per_rank() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(MPXRUN, dir.path(), &["-np", "4", "--", DEMO]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for r in 0..4 {
        assert!(out.contains(&format!("rank {r}: value ")), "{out}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(MPXRUN, dir.path(), &["-np", "0", "--", DEMO]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(MPXRUN, dir.path(), &["-np", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(MPXPROF, dir.path(), &["report", "."]);
    assert_eq!(o.status.code(), Some(2), "empty dir must be an error");
    assert!(stderr(&o).contains("no profile files"), "{}", stderr(&o));
}

#[test]
fn missing_program_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(MPXRUN, dir.path(), &["-np", "2", "--", "/nonexistent/program"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/nonexistent/program"), "{}", stderr(&o));
}

#[test]
fn profile_report_validate_and_merge() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(MPXRUN, dir.path(), &["-np", "2", "-profile", "-trace", "--", DEMO]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = run(MPXPROF, dir.path(), &["validate", "."]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o), "2 profiles ok\n");

    let o = run(MPXPROF, dir.path(), &["report", ".", "--scope", "mean"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("mean over 2 profiles"));
    let header: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["excl(us)", "incl(us)", "calls", "subrs", "name"]);
    let names: Vec<&str> = lines.map(|l| l.split_whitespace().last().unwrap()).collect();
    for f in [
        ".application",
        "main",
        "compute",
        "setup",
        "MPX_Send",
        "MPX_Recv",
        "MPX_Barrier",
    ] {
        assert!(names.contains(&f), "{f} missing from {names:?}");
    }

    let o = run(
        MPXPROF,
        dir.path(),
        &["report", ".", "--format", "csv", "--units", "ms"],
    );
    assert!(
        stdout(&o).starts_with("scope,name,excl_ms,incl_ms,calls,subrs\n"),
        "{}",
        stdout(&o)
    );

    let o = run(MPXPROF, dir.path(), &["merge", ".", "-o", "merged.trace"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let merged = std::fs::read_to_string(dir.path().join("merged.trace")).unwrap();
    let stamps: Vec<(u64, u32, u32)> = merged
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split(' ').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert!(!stamps.is_empty());
    assert!(stamps.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn validate_flags_corrupt_profiles() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("profile.0.0.0"),
        "2 functions\n\"f\" 1 0 5 3\n\".application\" 1 1 0 5\n0 aggregates\n",
    )
    .unwrap();
    let o = run(MPXPROF, dir.path(), &["validate", "."]);
    assert_eq!(o.status.code(), Some(1), "{}{}", stdout(&o), stderr(&o));
    assert!(
        stdout(&o).contains("0.0.0 \"f\": inclusive 3 < exclusive 5"),
        "{}",
        stdout(&o)
    );

    std::fs::write(
        dir.path().join("profile.0.0.1"),
        "1 functions\n\"g\" x 0 1 1\n0 aggregates\n",
    )
    .unwrap();
    let o = run(MPXPROF, dir.path(), &["validate", "."]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("profile.0.0.1:2:"), "{}", stderr(&o));
}

#[test]
fn overhead_table_from_result_files() {
    let dir = tempfile::tempdir().unwrap();
    let row = |v: f64, profiled: bool| BenchResult {
        benchmark: "ep".into(),
        size: 20,
        reps: 1,
        np: 4,
        profiled,
        seed: Some(1),
        wall_s: Some(v),
        checksum: Some(99),
        ..BenchResult::default()
    };
    write_results(dir.path().join("base.csv"), &[row(10.0, false)]).unwrap();
    write_results(dir.path().join("prof.csv"), &[row(11.5, true)]).unwrap();
    let o = run(
        env!("CARGO_BIN_EXE_bench-overhead"),
        dir.path(),
        &["--base", "base.csv", "--profiled", "prof.csv"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        "benchmark,size,metric,base,profiled,overhead_pct\nep,20,wall_s,10,11.5,15.0\n"
    );

    write_results(
        dir.path().join("other.csv"),
        &[BenchResult {
            checksum: Some(1),
            ..row(11.5, true)
        }],
    )
    .unwrap();
    let o = run(
        env!("CARGO_BIN_EXE_bench-overhead"),
        dir.path(),
        &["--base", "base.csv", "--profiled", "other.csv"],
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("checksums differ"), "{}", stderr(&o));
}
