use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_deformcert");

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn certify_args<'a>(model: &'a [&'a str], out: &'a str) -> Vec<&'a str> {
    let mut args = vec!["certify", "--data", "data"];
    args.extend_from_slice(model);
    args.extend_from_slice(&[
        "--kind",
        "rotz",
        "--scales",
        "10deg,0.4",
        "--n0",
        "20",
        "--n",
        "100",
        "--seed",
        "4",
        "--no-timing",
        "--out",
        out,
    ]);
    args
}

#[test]
fn end_to_end_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    run(
        dir,
        &[
            "gen",
            "--out",
            "data",
            "--per-class",
            "3",
            "--points",
            "32",
            "--seed",
            "2",
        ],
    );
    assert!(dir.join("data/labels.csv").exists());
    run(
        dir,
        &[
            "train",
            "--data",
            "data",
            "--out",
            "c.json",
            "--model-type",
            "centroid",
        ],
    );
    run(
        dir,
        &[
            "train",
            "--data",
            "data",
            "--out",
            "m.bin",
            "--epochs",
            "2",
            "--augment",
            "rotz:uniform:pi",
            "--log",
            "log.csv",
        ],
    );
    assert_eq!(
        fs::read_to_string(dir.join("log.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    run(dir, &certify_args(&["--model", "c.json"], "a.csv"));
    run(dir, &certify_args(&["--model", "c.json"], "b.csv"));
    let a = fs::read(dir.join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.join("b.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&a).lines().count(), 1 + 12 * 2);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("a.json")).unwrap()).unwrap();
    assert_eq!(summary["envelope_curve"].as_array().unwrap().len(), 64);

    run(dir, &certify_args(&["--model", "m.bin"], "mlp.csv"));

    let stdio = format!("stdio:{BIN} serve-oracle --model c.json");
    run(dir, &certify_args(&["--oracle", &stdio], "o.csv"));
    assert_eq!(a, fs::read(dir.join("o.csv")).unwrap());

    let env = run(
        dir,
        &[
            "envelope", "--table", "a.csv", "--dist", "uniform", "--points", "8",
        ],
    );
    assert_eq!(String::from_utf8_lossy(&env.stdout).lines().count(), 9);
    let rep = run(dir, &["report", "--table", "a.csv", "--dist", "uniform"]);
    let rep: serde_json::Value = serde_json::from_slice(&rep.stdout).unwrap();
    assert_eq!(rep["samples"], 12);

    run(
        dir,
        &[
            "bench",
            "--data",
            "data",
            "--model",
            "c.json",
            "--kind",
            "translation",
            "--scales",
            "0.01,0.2",
            "--n0",
            "10",
            "--n",
            "50",
            "--rounds",
            "1",
            "--out",
            "bench.json",
        ],
    );
    run(
        dir,
        &[
            "soundness",
            "--data",
            "data",
            "--model",
            "c.json",
            "--kind",
            "rotz",
            "--scales",
            "0.2",
            "--n0",
            "10",
            "--n",
            "100",
            "--votes",
            "50",
            "--offsets",
            "3",
            "--out",
            "sound.json",
        ],
    );
    let sound: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("sound.json")).unwrap()).unwrap();
    assert!(sound["checks"].as_u64().unwrap() > 0);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .current_dir(tmp.path())
        .args([
            "train",
            "--data",
            "nowhere",
            "--out",
            "x",
            "--augment",
            "rotz:uniform",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
