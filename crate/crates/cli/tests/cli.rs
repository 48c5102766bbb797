//! Drives the `rectikit` binary end to end on tiny configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rectikit::metrics::EvalReport;
use rectikit::DenoiserModel;
use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rectikit"));
    c.env("RUST_LOG", "warn").env_remove("RECTIKIT_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn rectikit")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn tiny_config(dir: &Path, kind: &str) -> Value {
    json!({
        "dataset": {"kind": kind, "n_samples": 256, "seed": 0},
        "model": {"data_dim": 2, "num_conditions": 8, "time_embed_dim": 8,
                  "cond_embed_dim": 4, "hidden_widths": [16, 16]},
        "teacher_train": {"iterations": 100, "batch_size": 32, "seed": 1},
        "pairgen": {"n_pairs": 64, "solver_steps": 10, "w": 1.0, "seed": 3},
        "student_train": {"iterations": 50, "batch_size": 32, "seed": 2},
        "eval": {"steps": [3], "guidance": [1.0], "n_samples": 64, "seed": 5,
                 "drift_trajectories": 8, "gap_noises": 8, "gap_reference_steps": 10},
        "output_dir": dir.join("out"),
        "deterministic": true
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_eval(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), EvalReport::CSV_HEADER);
    lines.map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn train_teacher_smoke_and_rerun_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &tiny_config(tmp.path(), "stdnormal"));
    let out_dir = tmp.path().join("out");
    assert!(!out_dir.exists());

    let o = run(&["train-teacher", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = out_dir.join("teacher.ckpt");
    let first = fs::read(&ckpt).unwrap();
    let model = DenoiserModel::load(&ckpt).unwrap();
    assert_eq!(model.num_conditions(), 8);
    let losses = fs::read_to_string(out_dir.join("teacher_loss.csv")).unwrap();
    assert_eq!(losses.lines().count(), 101);
    assert!(losses.starts_with("iteration,loss\n1,"));

    let o = run(&["train-teacher", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(&ckpt).unwrap(), first);
}

#[test]
fn unwritable_output_dir_exits_with_io_code() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let mut cfg = tiny_config(tmp.path(), "stdnormal");
    cfg["output_dir"] = json!(blocker.join("out"));
    let cfg = write_config(tmp.path(), "c.json", &cfg);
    let o = run(&["train-teacher", "--config", s(&cfg)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("output directory"));
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = tiny_config(tmp.path(), "gauss8");
    cfg["eval"]["stepz"] = json!([3]);
    let bad = write_config(tmp.path(), "bad.json", &cfg);
    assert_eq!(code(&run(&["train-teacher", "--config", s(&bad)])), 1);
    assert_eq!(code(&run(&["train-teacher"])), 1);
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);

    let good = write_config(tmp.path(), "good.json", &tiny_config(tmp.path(), "gauss8"));
    let o = bin()
        .args(["train-teacher", "--config", s(&good)])
        .env("RECTIKIT_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);

    // Evaluation scores mode fidelity, which only gauss8 defines.
    let std_cfg = write_config(tmp.path(), "std.json", &tiny_config(tmp.path(), "stdnormal"));
    assert_eq!(code(&run(&["train-teacher", "--config", s(&std_cfg)])), 0);
    let ckpt = tmp.path().join("out/teacher.ckpt");
    assert_eq!(code(&run(&["evaluate", "--config", s(&std_cfg), "--ckpt", s(&ckpt)])), 1);
}

#[test]
fn missing_and_corrupt_inputs_exit_with_io_code() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.json");
    assert_eq!(code(&run(&["train-teacher", "--config", s(&missing)])), 2);

    let junk = tmp.path().join("junk.ckpt");
    fs::write(&junk, b"RDIFCKPT but not really").unwrap();
    let out = tmp.path().join("x.csv");
    let o = run(&[
        "sample", "--ckpt", s(&junk), "--steps", "3", "--condition", "0", "--n", "4", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn sample_writes_n_rows_deterministically() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &tiny_config(tmp.path(), "gauss8"));
    assert_eq!(code(&run(&["train-teacher", "--config", s(&cfg)])), 0);
    let ckpt = tmp.path().join("out/teacher.ckpt");
    let draw = |seed: &str, name: &str| {
        let csv = tmp.path().join(format!("{name}.csv"));
        let svg = tmp.path().join(format!("{name}.svg"));
        let o = run(&[
            "sample", "--ckpt", s(&ckpt), "--steps", "5", "--guidance", "1.5", "--condition", "3",
            "--n", "300", "--seed", seed, "--out", s(&csv), "--svg", s(&svg),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        (fs::read_to_string(csv).unwrap(), fs::read_to_string(svg).unwrap())
    };
    let (a, svg) = draw("7", "a");
    let (b, _) = draw("7", "b");
    let (c, _) = draw("8", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let lines: Vec<_> = a.lines().collect();
    assert_eq!(lines[0], "x0,x1,c");
    assert_eq!(lines.len(), 301);
    assert!(lines[1..].iter().all(|l| l.ends_with(",3") && l.split(',').count() == 3));
    assert!(svg.starts_with("<svg ") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<circle").count(), 300);

    let o = run(&[
        "sample", "--ckpt", s(&ckpt), "--steps", "5", "--condition", "8", "--n", "3", "--out",
        s(&tmp.path().join("d.csv")),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn pairs_rectify_and_evaluate_chain() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = tiny_config(tmp.path(), "gauss8");
    cfg["student_train"]["iterations"] = json!(0);
    cfg["eval"]["guidance"] = json!([1.0, 1.5, 2.5, 5.0, 7.5]);
    cfg["eval"]["steps"] = json!([3, 5, 10, 25, 200]);
    let path = write_config(tmp.path(), "c.json", &cfg);
    let out = tmp.path().join("out");
    let o = run(&["pipeline", "--config", s(&path)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    // Zero student iterations leave an exact copy of the teacher.
    assert_eq!(
        fs::read(out.join("student.ckpt")).unwrap(),
        fs::read(out.join("teacher.ckpt")).unwrap()
    );
    let rows = read_eval(&out.join("eval.csv"));
    assert_eq!(rows.len(), 2 * 5 * 5);
    for model in ["teacher", "student"] {
        for steps in ["3", "5", "10", "25", "200"] {
            let n = rows.iter().filter(|r| r[0] == model && r[1] == steps).count();
            assert_eq!(n, 5, "{model} {steps}");
        }
    }
    // Identical models score identically.
    let (t, st): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r[0] == "teacher");
    for (a, b) in t.iter().zip(&st) {
        assert_eq!(a[1..], b[1..]);
    }
    let plots: Vec<_> = fs::read_dir(out.join("plots")).unwrap().collect();
    assert_eq!(plots.len(), 4 * (2 + 5));
    let timings = fs::read_to_string(out.join("timings.csv")).unwrap();
    assert_eq!(timings.lines().count(), 5);

    // Single-cell sweep over the standalone evaluate command.
    let mut one = cfg.clone();
    one["eval"]["steps"] = json!([3]);
    one["eval"]["guidance"] = json!([1.5]);
    one["output_dir"] = json!(tmp.path().join("one"));
    let one = write_config(tmp.path(), "one.json", &one);
    let ckpt = out.join("teacher.ckpt");
    assert_eq!(code(&run(&["evaluate", "--config", s(&one), "--ckpt", s(&ckpt)])), 0);
    let rows = read_eval(&tmp.path().join("one/eval.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][..3], ["teacher", "3", "1.5"]);

    // gen-pairs and rectify also run standalone against the same teacher.
    let o = run(&["gen-pairs", "--config", s(&one), "--teacher", s(&ckpt)]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(tmp.path().join("one/pairs.bin")).unwrap(),
        fs::read(out.join("pairs.bin")).unwrap()
    );
    let o = run(&[
        "rectify", "--config", s(&one), "--teacher", s(&ckpt), "--pairs", s(&out.join("pairs.bin")),
    ]);
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("one/student_loss.csv").exists());
}
