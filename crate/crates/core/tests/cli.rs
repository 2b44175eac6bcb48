use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use packcool::checkpoint::Checkpoint;
use packcool::nn::{Activation, MlpParams};

fn packcool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_packcool")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, "n_x = 10\ndt = 0.1\nhorizon_time = 1.0\nhidden = [8, 8]\nhorizon = 64\n").unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_per_seed_logs_and_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    let r = packcool(&["train", "--algo", "hjbppo", "--seed", "3", "--seed", "4", "--steps", "128", "--config", &cfg, "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for seed in [3, 4] {
        let dir = out.join(format!("seed{seed}"));
        for f in ["metrics.csv", "rolling.csv", "updates.csv", "final.ckpt"] {
            assert!(dir.join(f).is_file(), "missing {f}");
        }
        let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
        // 128 steps of 10-step episodes
        assert_eq!(metrics.lines().count(), 1 + 12);
    }
}

#[test]
fn eval_prints_reward_and_dumps_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = tmp.path().join("run");
    let r = packcool(&["train", "--algo", "ppo", "--seed", "0", "--steps", "64", "--config", &cfg, "--out", s(&run)]);
    assert!(r.status.success());
    let out = tmp.path().join("eval");
    let r = packcool(&["eval", "--ckpt", s(&run.join("seed0/final.ckpt")), "--config", &cfg, "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8(r.stdout).unwrap();
    let value: f64 = stdout.trim().strip_prefix("cumulative_reward=").unwrap().parse().unwrap();
    assert!(value.is_finite() && value <= 0.0);
    for f in ["sigma.csv", "u.csv", "w.csv", "u.svg", "w.svg", "sigma.svg"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let u = fs::read_to_string(out.join("u.csv")).unwrap();
    assert_eq!(u.lines().next().unwrap().split(',').count(), 10);
}

#[test]
fn hjb_mode_with_flat_value_keeps_valve_closed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let policy = MlpParams::init(&[20, 8, 8, 1], Activation::Tanh, 1).unwrap();
    let value = MlpParams::zeros(&[20, 8, 8, 1], Activation::Identity).unwrap();
    let ckpt = tmp.path().join("flat.ckpt");
    Checkpoint { policy, value }.save(&ckpt).unwrap();
    let out = tmp.path().join("eval");
    let r = packcool(&["eval", "--ckpt", s(&ckpt), "--mode", "hjb", "--config", &cfg, "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let sigma = fs::read_to_string(out.join("sigma.csv")).unwrap();
    let mut lines = sigma.lines();
    assert_eq!(lines.next(), Some("t,sigma"));
    let values: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 10);
    assert!(values.iter().all(|v| *v == 0.0));
}

#[test]
fn plot_merges_seed_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = tmp.path().join("run");
    let r = packcool(&["train", "--algo", "ppo", "--seed", "0", "--seed", "1", "--steps", "128", "--config", &cfg, "--out", s(&run)]);
    assert!(r.status.success());
    let out = tmp.path().join("plots");
    let r = packcool(&["plot", &format!("ppo={}", s(&run)), "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let curve = fs::read_to_string(out.join("curve_ppo.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("episode,mean,std"));
    assert_eq!(curve.lines().count(), 1 + 12);
    assert!(fs::read_to_string(out.join("curves.svg")).unwrap().contains("<polygon"));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(packcool(&["train", "--algo", "sac", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(packcool(&["plot", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(packcool(&["plot", "nolabel", "--out", s(&out)]).status.code(), Some(2));
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "learning_rate = 0.1\n").unwrap();
    let r = packcool(&["train", "--algo", "ppo", "--steps", "8", "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("learning_rate"));
    let r = packcool(&["train", "--algo", "ppo", "--steps", "0", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let missing = tmp.path().join("nope.ckpt");
    assert_eq!(packcool(&["eval", "--ckpt", s(&missing), "--out", s(&out)]).status.code(), Some(1));
    let garbage = tmp.path().join("garbage.ckpt");
    fs::write(&garbage, "PACKCOOL-CKPT v9\n").unwrap();
    assert_eq!(packcool(&["eval", "--ckpt", s(&garbage), "--out", s(&out)]).status.code(), Some(1));
}
