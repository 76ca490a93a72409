//! End-to-end tests of the `rebrac` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rebrac::checkpoint::{self, Checkpoint};
use rebrac::tables::{self, AblationRow, DepthRow, EvalRow, MetricsRow};
use rebrac_core::envs::EnvKind;
use rebrac_core::{AgentConfig, AgentState};

fn rebrac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rebrac"))
        .args(args)
        .env_remove("REBRAC_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rebrac(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: [&str; 4] = ["--set", "agent.hidden_width=8", "--set", "agent.batch_size=16"];

fn reach_data(dir: &Path) -> PathBuf {
    let path = dir.join("reach.rbd");
    ok(&["gen-data", "--env", "reach", "--policy", "medium", "--n", "500", "--seed", "1", "--out", s(&path)]);
    path
}

#[test]
fn gen_data_counts_and_repeats() {
    let tmp = tempfile::tempdir().unwrap();
    let a = reach_data(tmp.path());
    let b = tmp.path().join("again.rbd");
    let stdout = ok(&["gen-data", "--env", "reach", "--policy", "medium", "--n", "500", "--seed", "1", "--out", s(&b)]);
    assert!(stdout.contains("500 transitions"));
    assert_eq!(rebrac::datafile::load(&a).unwrap().len(), 500);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x.rbd");
    assert_eq!(rebrac(&["gen-data", "--env", "reach", "--policy", "oracle", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(rebrac(&["gen-data", "--env", "moon", "--policy", "expert", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(rebrac(&["train"]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn train_writes_per_seed_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = reach_data(tmp.path());
    let run = tmp.path().join("run");
    let mut args = vec![
        "train", "--env", "reach", "--dataset", s(&data), "--steps", "100", "--seeds", "3,4", "--eval-episodes", "1",
        "--out-dir", s(&run),
    ];
    args.extend(TINY);
    ok(&args);
    for seed in [3, 4] {
        let dir = run.join(format!("seed_{seed}"));
        let rows: Vec<MetricsRow> = tables::read_rows(&dir.join("metrics.csv")).unwrap();
        assert_eq!(rows.len(), 100);
        assert_eq!(rows.iter().filter(|r| r.actor_loss.is_some()).count(), 50);
        let ck = checkpoint::load(&dir.join("checkpoint.rbac")).unwrap();
        assert_eq!(ck.agent.actor_updates, 50);
        assert!(dir.join("eval.json").exists());
    }
    let scores: Vec<rebrac::tables::ScoreRow> = tables::read_rows(&run.join("scores.csv")).unwrap();
    assert_eq!(scores.len(), 2);
    assert!(run.join("config.json").exists());
}

#[test]
fn missing_dataset_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let out = rebrac(&["train", "--env", "reach", "--dataset", s(&tmp.path().join("nope.rbd")), "--out-dir", s(&run)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!run.join("seed_0").exists());
}

#[test]
fn config_file_then_set_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = reach_data(tmp.path());
    let cfg = tmp.path().join("cfg.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"env": "reach", "dataset": "{}", "train.steps": 7, "agent.gamma": 0.5, "agent.hidden_width": 8, "agent.batch_size": 16, "train.seeds": [1]}}"#,
            s(&data)
        ),
    )
    .unwrap();
    let run = tmp.path().join("run");
    ok(&["train", "--config", s(&cfg), "--set", "agent.gamma=0.9", "--steps", "4", "--eval-episodes", "1", "--out-dir", s(&run)]);
    let resolved: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["train.steps"], 4);
    assert_eq!(resolved["agent"]["gamma"], 0.9);
    assert_eq!(resolved["train.seeds"], serde_json::json!([1]));
}

#[test]
fn out_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let from_env = tmp.path().join("env_out");
    let status = Command::new(env!("CARGO_BIN_EXE_rebrac"))
        .args(["gen-data", "--env", "maze", "--policy", "random", "--n", "50"])
        .env("REBRAC_OUT", &from_env)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(from_env.join("data/maze-random.rbd").exists());

    let flag = tmp.path().join("flag_out");
    let status = Command::new(env!("CARGO_BIN_EXE_rebrac"))
        .args(["gen-data", "--env", "maze", "--policy", "random", "--n", "50", "--out-dir", s(&flag)])
        .env("REBRAC_OUT", &from_env)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(flag.join("data/maze-random.rbd").exists());
}

#[test]
fn eval_scripted_and_untrained_policies() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("eval.csv");
    ok(&["eval", "--policy", "expert", "--env", "reach", "--episodes", "20", "--out", s(&out)]);
    let rows: Vec<EvalRow> = tables::read_rows(&out).unwrap();
    assert!((rows[0].normalized_score - 100.0).abs() < 5.0, "{}", rows[0].normalized_score);

    ok(&["eval", "--policy", "random", "--env", "reach", "--episodes", "100", "--out", s(&out)]);
    let rows: Vec<EvalRow> = tables::read_rows(&out).unwrap();
    assert!(rows[0].normalized_score.abs() < 10.0, "{}", rows[0].normalized_score);

    let cfg = AgentConfig::new(4, 2, 1.0).with_width(32);
    let ck = Checkpoint {
        agent: AgentState::new(&cfg, 0).unwrap(),
        config: cfg,
        env: EnvKind::Reach,
        state_stats: None,
    };
    let path = tmp.path().join("untrained.rbac");
    checkpoint::save(&ck, &path).unwrap();
    ok(&["eval", "--checkpoint", s(&path), "--episodes", "20", "--out", s(&out)]);
    let rows: Vec<EvalRow> = tables::read_rows(&out).unwrap();
    assert!(rows[0].normalized_score.abs() < 30.0, "{}", rows[0].normalized_score);

    let zero = rebrac(&["eval", "--policy", "expert", "--env", "reach", "--episodes", "0", "--out", s(&out)]);
    assert_eq!(zero.status.code(), Some(2));
}

#[test]
fn ablate_reports_base_and_each_toggle() {
    let tmp = tempfile::tempdir().unwrap();
    let data = reach_data(tmp.path());
    let run = tmp.path().join("ablate");
    let mut args = vec![
        "ablate", "--env", "reach", "--dataset", s(&data), "--steps", "20", "--seeds", "0,1", "--eval-episodes", "1",
        "--toggles", "no_actor_penalty,large_batch", "--out-dir", s(&run),
    ];
    args.extend(TINY);
    ok(&args);
    let rows: Vec<AblationRow> = tables::read_rows(&run.join("ablation.csv")).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, ["base", "no_actor_penalty", "large_batch"]);
    assert_eq!(rows[0].delta_pct, 0.0);

    let none = tmp.path().join("none");
    let mut args = vec![
        "ablate", "--env", "reach", "--dataset", s(&data), "--steps", "20", "--seeds", "0", "--eval-episodes", "1",
        "--toggles", "none", "--out-dir", s(&none),
    ];
    args.extend(TINY);
    ok(&args);
    let rows: Vec<AblationRow> = tables::read_rows(&none.join("ablation.csv")).unwrap();
    assert_eq!(rows.len(), 1);
}

#[test]
fn eop_table_from_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let scores = tmp.path().join("scores.csv");
    fs::write(
        &scores,
        "algorithm,dataset,run,score\nrebrac,maze,a,0\nrebrac,maze,b,1\nrebrac,maze,c,2\nrebrac,maze,d,3\n",
    )
    .unwrap();
    let stdout = ok(&["eop", "--scores", s(&scores), "--budgets", "1,2,5"]);
    assert!(stdout.contains("1 policy") && stdout.contains("5 policies"));
    let rows = tables::read_eop(&tmp.path().join("eop.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].value.unwrap().0, 1.5);
    assert!((rows[1].value.unwrap().0 - 14.0 / 6.0).abs() < 1e-12);
    assert_eq!(rows[2].value, None);
}

#[test]
fn depth_scan_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = reach_data(tmp.path());
    let run = tmp.path().join("depth");
    let mut args = vec![
        "depth-scan", "--env", "reach", "--dataset", s(&data), "--steps", "10", "--seeds", "0,1", "--eval-episodes", "1",
        "--depths", "3,4", "--networks", "actor", "--jobs", "2", "--out-dir", s(&run),
    ];
    args.extend(TINY);
    ok(&args);
    let rows: Vec<DepthRow> = tables::read_rows(&run.join("depth.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.network == "actor"));
    let ck = checkpoint::load(&run.join("actor_depth_4/seed_1/checkpoint.rbac")).unwrap();
    assert_eq!(ck.config.actor.depth(), 4);
    assert_eq!(ck.config.critic.depth(), 3);
}

#[test]
fn sweep_feeds_eop() {
    let tmp = tempfile::tempdir().unwrap();
    let data = reach_data(tmp.path());
    let run = tmp.path().join("sweep");
    let mut args = vec![
        "train", "--env", "reach", "--algo", "td3bc", "--dataset", s(&data), "--steps", "4", "--seeds", "0",
        "--eval-episodes", "1", "--sweep", "--out-dir", s(&run),
    ];
    args.extend(TINY);
    ok(&args);
    let scores: Vec<rebrac::tables::ScoreRow> = tables::read_rows(&run.join("scores.csv")).unwrap();
    assert_eq!(scores.len(), 5);
    ok(&["eop", "--scores", s(&run.join("scores.csv"))]);
    let rows = tables::read_eop(&run.join("eop.csv")).unwrap();
    assert_eq!(rows.iter().filter(|r| r.value.is_none()).count(), 3);
}
