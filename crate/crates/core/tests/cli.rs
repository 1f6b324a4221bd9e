mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fedsim::metrics::RunSummary;
use fedsim::output::{read_summary, NODES_HEADER, ROUNDS_HEADER};

fn fedsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsim"))
        .args(args)
        .output()
        .expect("spawn fedsim")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_into(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let data = dir.join("data");
    let config = dir.join("config.json");
    let out = dir.join(out);
    let mut args = vec![
        "run",
        "-q",
        "--config",
        s(&config),
        "--data",
        s(&data),
        "--out",
        s(&out),
    ];
    args.extend_from_slice(extra);
    fedsim(&args)
}

fn setup(rounds: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    common::write_dataset(dir.path());
    common::write_config(dir.path(), rounds);
    dir
}

#[test]
fn run_writes_all_artifacts() {
    let dir = setup(4);
    let out = run_into(
        dir.path(),
        "out",
        &["--drop-policy", "slowest", "--drop-after", "2"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("final_accuracy="), "{stdout}");

    let rounds = fs::read_to_string(dir.path().join("out/rounds.csv")).unwrap();
    let nodes = fs::read_to_string(dir.path().join("out/nodes.csv")).unwrap();
    assert_eq!(rounds.lines().next(), Some(ROUNDS_HEADER));
    assert_eq!(nodes.lines().next(), Some(NODES_HEADER));
    assert_eq!(rounds.lines().count(), 1 + 4);
    assert_eq!(nodes.lines().count(), 1 + 2 * 20 + 2 * 15);
    let active: Vec<&str> = rounds
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(active, ["20", "20", "15", "15"]);
    let svg = fs::read_to_string(dir.path().join("out/accuracy_vs_time.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = setup(3);
    for (name, extra) in [("a", vec![]), ("b", vec![]), ("c", vec!["--sequential"])] {
        let out = run_into(dir.path(), name, &extra);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for file in ["rounds.csv", "nodes.csv"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        assert_eq!(
            a,
            fs::read(dir.path().join("b").join(file)).unwrap(),
            "{file}"
        );
        assert_eq!(
            a,
            fs::read(dir.path().join("c").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn summary_reproduces_the_run() {
    let dir = setup(3);
    let out = run_into(
        dir.path(),
        "first",
        &["--seed", "9", "--strategy", "entropy"],
    );
    assert!(out.status.success());
    let summary_path = dir.path().join("first/summary.json");
    let first: RunSummary = read_summary(&summary_path).unwrap();
    assert_eq!(first.config.seed, 9);
    assert_eq!(first.records.len(), 3);

    let second = dir.path().join("second");
    let out = fedsim(&[
        "run",
        "-q",
        "--config",
        s(&summary_path),
        "--out",
        s(&second),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let again = read_summary(&second.join("summary.json")).unwrap();
    assert_eq!(again.records, first.records);
    assert_eq!(again.final_global_accuracy, first.final_global_accuracy);
    assert_eq!(
        fs::read(dir.path().join("first/nodes.csv")).unwrap(),
        fs::read(second.join("nodes.csv")).unwrap()
    );
}

#[test]
fn compare_and_chart() {
    let dir = setup(2);
    let data = dir.path().join("data");
    let config = dir.path().join("config.json");
    let cmp = dir.path().join("cmp");
    let out = fedsim(&[
        "compare",
        "-q",
        "--config",
        s(&config),
        "--data",
        s(&data),
        "--out",
        s(&cmp),
        "--strategies",
        "uniform,num_classes",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(1).unwrap().starts_with("uniform,"));
    assert!(table.lines().nth(1).unwrap().ends_with(",true"), "{table}");
    let svg = fs::read_to_string(cmp.join("accuracy_vs_time.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);

    let chart = dir.path().join("chart.svg");
    let out = fedsim(&[
        "chart",
        "--out",
        s(&chart),
        s(&cmp.join("uniform/rounds.csv")),
        s(&cmp.join("num_classes/rounds.csv")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let svg = fs::read_to_string(&chart).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.find(">uniform<").unwrap() < svg.find(">num_classes<").unwrap());
}

#[test]
fn exit_codes() {
    let dir = setup(1);
    let code = |o: Output| o.status.code().unwrap();

    assert_eq!(code(fedsim(&["--help"])), 0);
    assert_eq!(code(fedsim(&["--version"])), 0);
    assert_eq!(code(fedsim(&["frobnicate"])), 1);
    assert_eq!(
        code(run_into(dir.path(), "o", &["--strategy", "Entropy"])),
        1
    );
    assert_eq!(
        code(run_into(
            dir.path(),
            "o",
            &["--drop-policy", "slowest", "--drop-count", "20"]
        )),
        1
    );

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"timing": {"per_sample": 1.0}}"#).unwrap();
    let out = fedsim(&["run", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("per_sample"));

    let missing = dir.path().join("nowhere");
    let config = dir.path().join("config.json");
    assert_eq!(
        code(fedsim(&[
            "run",
            "--config",
            s(&config),
            "--data",
            s(&missing)
        ])),
        2
    );
    assert_eq!(
        code(fedsim(&[
            "chart",
            "--out",
            s(&dir.path().join("c.svg")),
            s(&missing)
        ])),
        2
    );
}
