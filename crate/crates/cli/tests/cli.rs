//! End-to-end tests against the built binary.

use std::path::PathBuf;
use std::process::{Command, Output};

fn dujad() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dujad"))
}

fn run(args: &[&str]) -> Output {
    dujad().args(args).output().expect("spawn dujad")
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dujad_cli_{name}"));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const TINY_EVAL_CONFIG: &str = "\
scenario.n_ue = 8
scenario.n_ap = 2
scenario.ant_per_ap = 2
scenario.pilot_len = 6
scenario.data_len = 8
scenario.activity_prob = 0.3
objective.mu_h = 3.0
objective.mu_x = 0.5
solver.init_max_iter = 60
experiment.trials = 2
experiment.p_sweep = 2,3
experiment.methods = baseline1,baseline4_10it
experiment.seed = 11
";

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("gen"));
    assert!(text.contains("eval"));
    assert!(text.contains("verify"));
}

#[test]
fn unknown_flag_fails_with_usage() {
    let out = run(&["eval", "--definitely-not-a-flag"]);
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage") || text.contains("usage"), "{text}");
}

#[test]
fn eval_without_config_fails() {
    let out = run(&["eval", "--out", "/tmp/should_not_exist.csv"]);
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("config"), "{text}");
}

#[test]
fn eval_is_byte_deterministic() {
    let dir = temp_dir("eval");
    let cfg_path = dir.join("tiny.cfg");
    std::fs::write(&cfg_path, TINY_EVAL_CONFIG).unwrap();
    let out_a = dir.join("a.csv");
    let out_b = dir.join("b.csv");
    for (out, path) in [(&out_a, "a"), (&out_b, "b")] {
        let result = run(&[
            "eval",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(
            result.status.success(),
            "run {path}: {}",
            String::from_utf8_lossy(&result.stderr)
        );
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert_eq!(a, b, "two identical eval runs must write identical bytes");
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("method,p,trial,uder,aser,iterations,wall_time\n"));
    // 2 P values x 2 trials x 2 methods + header
    assert_eq!(text.lines().count(), 9);
}

#[test]
fn eval_rejects_missing_checkpoint_before_running() {
    let dir = temp_dir("ckpt");
    let cfg_path = dir.join("needs_ckpt.cfg");
    std::fs::write(
        &cfg_path,
        format!("{TINY_EVAL_CONFIG}experiment.methods = dujad\n"),
    )
    .unwrap();
    let out = run(&[
        "eval",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.join("x.csv").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("checkpoint"), "{text}");
}

#[test]
fn gen_writes_readable_dataset() {
    let dir = temp_dir("gen");
    let cfg_path = dir.join("gen.cfg");
    std::fs::write(&cfg_path, TINY_EVAL_CONFIG).unwrap();
    let data_path = dir.join("instances.bin");
    let out = run(&[
        "gen",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        data_path.to_str().unwrap(),
        "--count",
        "3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (dims, _, instances) = dujad_core::io::read_instances(&data_path).unwrap();
    assert_eq!(dims.count, 3);
    assert_eq!(instances.len(), 3);
    assert_eq!(instances[0].n_ue(), 8);
}

#[test]
fn bad_config_names_offending_field() {
    let dir = temp_dir("badcfg");
    let cfg_path = dir.join("bad.cfg");
    std::fs::write(&cfg_path, "scenario.n_ue = not_a_number\n").unwrap();
    let out = run(&[
        "eval",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.join("x.csv").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("scenario.n_ue"), "{text}");
}
