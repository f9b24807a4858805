use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
width = 24
height = 24
encode_res = 8
net_pool = 2
hidden1 = 8
hidden2 = 8
trunk = 8
batch_size = 4
grid_dim = 16
max_iters = 3
n_scenes = 3
n_train = 2
nearby_views = 1
fill_episodes = 2
train_episodes = 2
checkpoint_every = 1
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenefill")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.txt");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "widht = 24\n");
    let out = tmp.path().join("d");
    let o = run(&["--config", &cfg, "gen-data", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("widht"));
}

#[test]
fn missing_data_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing");
    let o = run(&["train-planner", "--data", missing.to_str().unwrap(), "--out", tmp.path().join("p.dqn").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn bad_arguments_are_rejected() {
    assert_eq!(code(&run(&["complete"])), 2);
    assert_eq!(code(&run(&["no-such-command"])), 2);
}

#[test]
fn end_to_end_small_run() {
    let tmp = tempfile::tempdir().unwrap();
    let t = |p: &str| tmp.path().join(p).to_string_lossy().into_owned();
    let cfg = write_config(tmp.path(), SMALL);

    assert_eq!(code(&run(&["--config", &cfg, "gen-data", "--out", &t("data")])), 0);
    let o = run(&["--config", &cfg, "complete", "--data", &t("data"), "--policy", "dqn", "--out", &t("runs/dqn")]);
    assert_eq!(code(&o), 2, "dqn without a checkpoint");

    let o = run(&["--config", &cfg, "train-planner", "--data", &t("data"), "--out", &t("p.dqn")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("p.log.csv").exists());

    for (policy, dir) in [("dqn", "runs/dqn"), ("uniform5", "runs/uniform5")] {
        let o = run(&[
            "--config", &cfg, "complete", "--data", &t("data"), "--policy", policy, "--checkpoint", &t("p.dqn"), "--out", &t(dir),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(tmp.path().join(dir).join("scene_0002.ply").exists());
        assert!(tmp.path().join(dir).join("scene_0002.trace.jsonl").exists());
    }

    let o = run(&["--config", &cfg, "evaluate", "--runs", &t("runs"), "--data", &t("data"), "--out", &t("report.csv")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next().unwrap(), "method,scene,cd,c_0.002,c_0.004,c_0.006,c_0.008,c_0.010");
    assert_eq!(lines.filter(|l| l.contains(",mean,")).count(), 2);
}
