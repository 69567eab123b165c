use std::fs;
use std::path::Path;
use std::process::Command;

fn athrl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_athrl"))
}

fn smoke_config(dir: &Path) -> String {
    format!(
        r#"
method = "athrl"
map = "mini02"
n_traffic = 3
seeds = [0]
warmup_steps = 25
train_steps = 10
max_episode_steps = 20
eval_episodes = 1
buffer_capacity = 100
output_dir = "{}"

[ddpg]
batch = 8

[network]
feature = 8
mlp_in = 8
lstm = 6
mlp_out = 6
seq_len = 2
"#,
        dir.display()
    )
}

#[test]
fn full_cycle_train_eval_compare_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let config = tmp.path().join("exp.toml");
    fs::write(&config, smoke_config(&out)).unwrap();

    let status = athrl().args(["train", "--config"]).arg(&config).status().unwrap();
    assert_eq!(status.code(), Some(0));

    let run_dir = out.join("athrl/mini02/0");
    assert!(run_dir.join("manifest.toml").exists());

    let status = athrl()
        .args(["eval", "--checkpoint"])
        .arg(&run_dir)
        .args(["--map", "mini02", "--episodes", "1", "--seed", "3"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    // second seed so compare has two runs
    let status = athrl()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--seed", "1"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    let status = athrl()
        .arg("compare")
        .arg(&run_dir)
        .arg(out.join("athrl/mini02/1"))
        .args(["--out"])
        .arg(tmp.path().join("cmp"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(tmp.path().join("cmp/summary.csv").exists());

    let status = athrl()
        .args(["replay", "--trace"])
        .arg(run_dir.join("eval_trace.csv"))
        .args(["--out"])
        .arg(tmp.path().join("frames"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
}

#[test]
fn method_and_map_overrides_choose_the_output_tree() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let config = tmp.path().join("exp.toml");
    fs::write(&config, smoke_config(&out)).unwrap();

    let status = athrl()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--method", "ddpg_flat", "--map", "mini03", "--seed", "5"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("ddpg_flat/mini03/5/metrics.csv").exists());
}

#[test]
fn output_root_env_var_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.toml");
    fs::write(&config, smoke_config(&tmp.path().join("ignored"))).unwrap();
    let root = tmp.path().join("forced");

    let status = athrl()
        .env("ATHRL_OUTPUT_ROOT", &root)
        .args(["train", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(root.join("athrl/mini02/0/metrics.csv").exists());
    assert!(!tmp.path().join("ignored").exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();

    // missing config file
    let status = athrl()
        .args(["train", "--config"])
        .arg(tmp.path().join("nope.toml"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // unknown key
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "frobnicate = 1").unwrap();
    let status = athrl().args(["train", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(status.code(), Some(2));

    // unknown method override
    let config = tmp.path().join("exp.toml");
    fs::write(&config, smoke_config(&tmp.path().join("out"))).unwrap();
    let status = athrl()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--method", "nope"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // eval on a directory with no manifest
    let status = athrl()
        .args(["eval", "--checkpoint"])
        .arg(tmp.path())
        .args(["--map", "mini02"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // replay with a missing trace
    let status = athrl()
        .args(["replay", "--trace"])
        .arg(tmp.path().join("none.csv"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
