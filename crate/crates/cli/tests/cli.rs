//! Exit codes and outputs of the `vol` binary.

use std::process::{Command, Output};

fn vol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vol"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("spawn vol")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let o = vol(&[]);
    assert_eq!(code(&o), 1);
    let text = String::from_utf8_lossy(&o.stderr).to_string() + &stdout(&o);
    assert!(text.contains("Usage"), "{text}");
}

#[test]
fn unknown_flag_exits_1() {
    let o = vol(&["grad-check", "--no-such-flag"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn bad_config_value_exits_1() {
    let o = vol(&["solve", "--problem", "plasma"]);
    assert_eq!(code(&o), 1);
    let o = vol(&["oracle-check", "--strategy", "cg:x"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn help_exits_0() {
    assert_eq!(code(&vol(&["--help"])), 0);
}

#[test]
fn oracle_check_darcy_passes() {
    let o = vol(&["oracle-check", "--problem", "darcy", "--resolution", "9"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let line = stdout(&o);
    let line = line.lines().last().unwrap();
    assert!(line.starts_with("max relative discrepancy"));
    let v: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(v < 1e-10);
}

#[test]
fn grad_check_passes() {
    let o = vol(&["grad-check"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    let v: f64 = out.lines().last().unwrap().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(v < 1e-4);
    assert_eq!(out.lines().count(), 5);
}

#[test]
fn solve_writes_solution_and_iteration_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solve");
    let o = vol(&[
        "solve",
        "--problem",
        "heat",
        "--resolution",
        "8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("solution.volf").exists());
    let csv = std::fs::read_to_string(out.join("iterations.csv")).unwrap();
    assert!(csv.starts_with("step,alpha,beta,residual_norm"));
}

#[test]
fn solve_that_cannot_converge_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "label_tol = 1e-14\nlabel_maxiter = 2\n").unwrap();
    let o = vol(&["solve", "--resolution", "8", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gen_data_train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.txt");
    std::fs::write(
        &cfg,
        "# tiny run\nn_train = 6\nn_test = 3\nn_shift = 4\nmodel.hidden = 4\nmodel.layers = 1\ntrain.epochs = 2\ntrain.checkpoint_every = 1\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let d = data.to_str().unwrap();
    let r = run.to_str().unwrap();

    let o = vol(&[
        "gen-data",
        "--config",
        c,
        "--resolution",
        "6",
        "--seed",
        "3",
        "--out",
        d,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("metadata.txt").exists());

    let o = vol(&["train", "--config", c, "--data", d, "--strategy", "cg:2", "--out", r]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.txt", "metrics.csv", "eval.csv", "shift_stats.volf"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert!(run.join("checkpoints/epoch_0002").exists());
    let echoed = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(echoed.contains("train.strategy = cg:2"), "{echoed}");
    assert!(echoed.contains("resolution = 6"));

    let o = vol(&["evaluate", "--run", r, "--data", d]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("test mean rel L2"));
}

#[test]
fn missing_config_file_exits_1() {
    let o = vol(&["train", "--resolution", "4", "--config", "/nonexistent/cfg.txt"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn compare_cg_writes_both_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "n_train = 4\nn_test = 0\nn_shift = 4\ntrain.epochs = 3\n").unwrap();
    let out = dir.path().join("cmp");
    let o = vol(&[
        "compare-cg",
        "--resolution",
        "6",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = std::fs::read_to_string(out.join("cg_random.csv")).unwrap();
    assert_eq!(r.lines().count(), 1 + 4);
    assert!(out.join("cg_average.csv").exists());
}

#[test]
fn run_experiment_writes_tables_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    std::fs::write(
        &cfg,
        "n_train = 4\nn_test = 2\nn_shift = 4\nmodel.hidden = 4\nmodel.layers = 1\ntrain.epochs = 1\nexperiment.strategies = dm,cg:2\n",
    )
    .unwrap();
    let out = dir.path().join("exp");
    let o = vol(&[
        "run-experiment",
        "--kind",
        "strategy-compare",
        "--resolution",
        "6",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.txt", "residual_curves.csv", "summary.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
}
