use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_conformal-sampling"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> String {
    let path = dir.join(name).to_string_lossy().into_owned();
    let mut args = vec!["gen-synth", "--out", &path];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

/// (first-k_max risk, first-1 risk) read straight from the JSONL file.
fn band_from_file(path: &str, k_max: usize) -> (f64, f64) {
    let text = fs::read_to_string(path).unwrap();
    let (mut none, mut first_bad, mut n) = (0usize, 0usize, 0usize);
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let record: Value = serde_json::from_str(line).unwrap();
        let admissions: Vec<i64> = record["samples"]
            .as_array()
            .unwrap()
            .iter()
            .take(k_max)
            .map(|s| s["admission"].as_i64().unwrap())
            .collect();
        n += 1;
        none += usize::from(admissions.iter().all(|&a| a == 0));
        first_bad += usize::from(admissions[0] == 0);
    }
    (none as f64 / n as f64, first_bad as f64 / n as f64)
}

#[test]
fn gen_synth_then_band() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(
        dir.path(),
        "d.jsonl",
        &["--n", "100", "--k-max", "20", "--p", "0.5", "--seed", "1"],
    );
    let out = run(&["band", "--data", &data, "--k-max", "20"]);
    assert_eq!(code(&out), 0);
    let band: Value = serde_json::from_slice(&out.stdout).unwrap();
    let (lo, hi) = band_from_file(&data, 20);
    assert_eq!(band["lower"].as_f64().unwrap(), lo);
    assert_eq!(band["upper"].as_f64().unwrap(), hi);
    assert!(lo <= hi);
}

#[test]
fn abstention_exits_3_with_null_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(
        dir.path(),
        "d.jsonl",
        &["--n", "200", "--k-max", "5", "--p", "0.3", "--seed", "2"],
    );
    let report = dir.path().join("report.json");
    let out = run(&[
        "calibrate",
        "--data",
        &data,
        "--k-max",
        "5",
        "--epsilon",
        "0.0001",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    let value: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(value["result"]["selected"].is_null());
    assert!(value["result"]["valid_configs"]
        .as_array()
        .unwrap()
        .is_empty());
}

#[test]
fn calibrate_with_components() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(
        dir.path(),
        "c.jsonl",
        &[
            "--n",
            "400",
            "--k-max",
            "8",
            "--p",
            "0.6",
            "--components",
            "3",
            "--seed",
            "3",
        ],
    );
    let out = run(&[
        "calibrate",
        "--data",
        &data,
        "--k-max",
        "8",
        "--epsilon",
        "0.3",
        "--alpha",
        "0.3",
        "--scorer",
        "first-k",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let value: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        value["n_opt"].as_u64().unwrap() + value["n_cal"].as_u64().unwrap(),
        400
    );
    assert!(!value["result"]["selected"].is_null());
    assert!(!value["components"]["selected"].is_null());
}

#[test]
fn help_and_usage_errors() {
    let help = run(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("calibrate"));
    assert_eq!(code(&run(&["band", "--bogus"])), 1);
    assert_eq!(
        code(&run(&[
            "gen-synth",
            "--n",
            "5",
            "--p",
            "0.5",
            "--beta",
            "1,1",
            "--out",
            "x"
        ])),
        1
    );
    assert_eq!(
        code(&run(&["band", "--data", "/definitely/not/here.jsonl"])),
        2
    );
}

#[test]
fn epsilon_out_of_range_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(
        dir.path(),
        "d.jsonl",
        &["--n", "50", "--k-max", "5", "--p", "0.5"],
    );
    let out = run(&[
        "calibrate",
        "--data",
        &data,
        "--k-max",
        "5",
        "--epsilon",
        "1.5",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn malformed_input_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    fs::write(
        &path,
        "{\"id\": \"a\", \"samples\": [{\"quality\": 0.1, \"admission\": 2}]}\n",
    )
    .unwrap();
    let out = run(&["band", "--data", path.to_str().unwrap(), "--k-max", "1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn strict_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("extra.jsonl");
    fs::write(
        &path,
        "{\"id\": \"a\", \"note\": 1, \"samples\": [{\"text\": \"t\", \"quality\": 0.1, \"admission\": 1}]}\n",
    )
    .unwrap();
    let p = path.to_str().unwrap();
    assert_eq!(code(&run(&["band", "--data", p, "--k-max", "1"])), 0);
    assert_eq!(
        code(&run(&["band", "--data", p, "--k-max", "1", "--strict"])),
        2
    );
}

#[test]
fn sweep_is_reproducible_across_runs_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(
        dir.path(),
        "d.jsonl",
        &["--n", "300", "--k-max", "10", "--p", "0.4", "--seed", "4"],
    );
    let sweep = |jobs: &str| {
        let out = run(&[
            "sweep",
            "--data",
            &data,
            "--k-max",
            "10",
            "--epsilons",
            "0.2,0.3,0.4",
            "--trials",
            "6",
            "--seed",
            "11",
            "--scorer",
            "sum",
            "--jobs",
            jobs,
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    let first = sweep("4");
    assert_eq!(first, sweep("4"));
    assert_eq!(first, sweep("1"));
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 1 + 3 * 6);
}

#[test]
fn split_text_emits_one_line_per_sentence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    fs::write(
        &path,
        "{\"id\": \"p\", \"samples\": [{\"text\": \"One. Two.\\nThree\", \"quality\": 0.2, \"admission\": 1}]}\n",
    )
    .unwrap();
    let out = run(&["split-text", "--data", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let lines: Vec<Value> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let texts: Vec<&str> = lines.iter().map(|v| v["text"].as_str().unwrap()).collect();
    assert_eq!(texts, ["One.", "Two.", "Three"]);
    assert_eq!(lines[2]["component"], 2);
}
