//! End-to-end checks of the installed binary: deterministic artifacts,
//! stdout/file parity, fixture statistics, corpus round trips, and the
//! documented exit-code classes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shiftbench"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "`{}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    bin()
        .args(args)
        .output()
        .expect("binary runs")
        .status
        .code()
        .expect("no signal")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("shiftbench-cli-{name}-{}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../shiftbench/tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn bench_artifacts_are_byte_identical_across_reruns() {
    let dir = scratch("rerun");
    let csv_path = dir.join("out.csv");
    let csv_serial = dir.join("serial.csv");
    let base = ["bench", "yeardisc", "--seeds", "0,1", "--output"];

    run_ok(&[&base[..], &[csv_path.to_str().unwrap()]].concat());
    let bytes_a = std::fs::read(&csv_path).unwrap();
    let meta_a = std::fs::read(dir.join("out.csv.meta.json")).unwrap();

    run_ok(&[&base[..], &[csv_path.to_str().unwrap()]].concat());
    assert_eq!(bytes_a, std::fs::read(&csv_path).unwrap(), "re-run CSV differs");
    let meta_b = std::fs::read(dir.join("out.csv.meta.json")).unwrap();
    assert_eq!(meta_a, meta_b, "re-run metadata differs");

    run_ok(&[&base[..], &[csv_serial.to_str().unwrap(), "--serial"]].concat());
    assert_eq!(
        bytes_a,
        std::fs::read(&csv_serial).unwrap(),
        "serial CSV differs from parallel"
    );
    let meta: serde_json::Value = serde_json::from_slice(&meta_a).unwrap();
    assert_eq!(meta["protocol"], "year_discrimination");
    assert_eq!(meta["seeds"], serde_json::json!([0, 1]));
    assert!(meta["csv_sha256"].as_str().unwrap().len() == 64);

    // Without --output the same table goes to stdout.
    let stdout = run_ok(&["bench", "yeardisc", "--seeds", "0,1"]).stdout;
    assert_eq!(stdout, bytes_a, "stdout CSV differs from written file");

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn stats_reports_the_fixture_yearly_table() {
    let out = run_ok(&["stats", "--records", &fixture("records_ok.jsonl")]);
    let expected = "year,instances,items,mean_likes,median_likes\n\
                    2013,3,13,23.333333,20\n\
                    2014,2,10,10.000000,5\n\
                    2015,1,4,7.000000,7\n";
    assert_eq!(String::from_utf8(out.stdout).unwrap(), expected);

    // Lenient mode surfaces soft invariant violations as warnings.
    let soft = run_ok(&["stats", "--records", &fixture("records_soft.jsonl")]);
    let stderr = String::from_utf8(soft.stderr).unwrap();
    assert_eq!(stderr.matches("warning:").count(), 3, "{stderr}");
}

#[test]
fn exit_codes_distinguish_usage_data_and_success() {
    assert_eq!(exit_code(&["--help"]), 0);
    assert_eq!(exit_code(&["bench", "--no-such-flag"]), 1);
    assert_eq!(exit_code(&["bench", "regression", "--methods", "wishful(2)"]), 1);
    assert_eq!(
        exit_code(&["stats", "--records", "/nonexistent/records.jsonl"]),
        2
    );
    assert_eq!(
        exit_code(&["stats", "--strict", "--records", &fixture("records_soft.jsonl")]),
        2
    );

    let dir = scratch("badconfig");
    let config = dir.join("bad.toml");
    std::fs::write(&config, "protocol = \"regression_target_shift\"\nnot_a_key = 1\n").unwrap();
    assert_eq!(
        exit_code(&["bench", "regression", "--config", config.to_str().unwrap()]),
        1
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn generated_corpus_feeds_stats_and_benchmarks() {
    let dir = scratch("gen");
    let dir_arg = dir.to_str().unwrap();
    run_ok(&[
        "gen-synthetic",
        "--output-dir",
        dir_arg,
        "--n-outfits",
        "240",
        "--years",
        "2011,2012,2013",
        "--seed",
        "5",
    ]);
    let records = dir.join("records.jsonl");
    for name in ["records.jsonl", "features.bin", "features.index.json"] {
        assert!(dir.join(name).exists(), "{name} missing");
    }

    let stats = run_ok(&["stats", "--records", records.to_str().unwrap()]);
    let table = String::from_utf8(stats.stdout).unwrap();
    assert!(table.starts_with("year,instances,items,mean_likes,median_likes\n"));
    assert_eq!(table.lines().count(), 4, "3 years of rows:\n{table}");

    let bench = run_ok(&[
        "bench",
        "yeardisc",
        "--records",
        records.to_str().unwrap(),
        "--features-bin",
        dir.join("features.bin").to_str().unwrap(),
        "--features-index",
        dir.join("features.index.json").to_str().unwrap(),
        "--seeds",
        "0",
        "--fit-size",
        "80",
        "--eval-size",
        "80",
    ]);
    let csv = String::from_utf8(bench.stdout).unwrap();
    assert!(csv.starts_with("anchor_year,other_year,gap,"), "{csv}");
    assert_eq!(csv.lines().count(), 1 + 3, "header plus one row per year:\n{csv}");

    std::fs::remove_dir_all(&dir).ok();
}
