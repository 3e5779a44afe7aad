use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lsnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsnet"))
        .args(args)
        .current_dir(dir)
        .env_remove("LSNET_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn committed_ckpt() -> String {
    repo_root()
        .join("checkpoints/synthetic.ckpt")
        .to_string_lossy()
        .into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

/// Small generated dataset under `dir/ds`.
fn dataset(dir: &Path) -> PathBuf {
    let o = lsnet(
        dir,
        &["synth", "--out", "ds", "--counts", "4", "2", "3", "--size", "32"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("ds")
}

#[test]
fn profile_canonical_reports_backbone_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let o = lsnet(dir.path(), &["profile"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).to_lowercase().contains("backbone"), "{}", stdout(&o));
    assert!(stderr(&o).contains("# resolved config"));
}

#[test]
fn profile_compare_diff_is_cheaper() {
    let dir = tempfile::tempdir().unwrap();
    let o = lsnet(dir.path(), &["profile", "--compare", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&o);
    let macs = |k: &str| r[k]["total"]["macs"].as_u64().unwrap();
    assert!(macs("diff") < macs("dense"), "{r}");
}

#[test]
fn profile_missing_model_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = lsnet(dir.path(), &["profile", "--model", "nope.toml"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).starts_with("error:") || stderr(&o).contains("\nerror:"));
}

#[test]
fn unknown_subcommand_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lsnet(dir.path(), &["frobnicate"])), 2);
}

#[test]
fn train_synthetic_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_root().join("configs/synthetic.toml");
    let cfg = cfg.to_str().unwrap();
    let mut histories = Vec::new();
    for name in ["a.ckpt", "b.ckpt"] {
        let o = lsnet(
            dir.path(),
            &[
                "train",
                "--synthetic",
                "--config",
                cfg,
                "--out",
                name,
                "--steps",
                "4",
                "--seed",
                "3",
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(dir.path().join(name).is_file());
        let hist = std::fs::read_to_string(dir.path().join(name).with_extension("history.jsonl")).unwrap();
        assert!(!hist.trim().is_empty());
        for line in hist.lines() {
            let rec: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(rec["loss"].as_f64().unwrap().is_finite());
        }
        histories.push(hist);
    }
    assert_eq!(histories[0], histories[1]);
}

#[test]
fn train_requires_a_source() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lsnet(dir.path(), &["train", "--out", "x.ckpt"])), 2);
}

#[test]
fn train_on_malformed_root_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("bad/train")).unwrap();
    let o = lsnet(
        dir.path(),
        &["train", "--data", "bad", "--out", "x.ckpt", "--steps", "2"],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn train_divergence_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_root().join("configs/synthetic.toml");
    let o = lsnet(
        dir.path(),
        &[
            "train",
            "--synthetic",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "x.ckpt",
            "--steps",
            "50",
            "--lr",
            "1e30",
        ],
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("step"), "{}", stderr(&o));
}

#[test]
fn infer_identical_pair_reports_little_change() {
    let dir = tempfile::tempdir().unwrap();
    let o = lsnet(dir.path(), &["synth", "--out", "ds", "--counts", "1", "1", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = committed_ckpt();
    let a = "ds/test/A/00000.png";
    let o = lsnet(
        dir.path(),
        &[
            "infer", "--ckpt", &ckpt, "--a", a, "--b", a, "--out", "s.png", "--format", "json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = json(&o);
    assert!(report["positive_fraction"].as_f64().unwrap() < 0.02, "{report}");
    let (w, h) = image::image_dimensions(dir.path().join(a)).unwrap();
    assert_eq!(image::image_dimensions(dir.path().join("s.png")).unwrap(), (w, h));
    assert_eq!(image::image_dimensions(dir.path().join("s.mask.png")).unwrap(), (w, h));
}

#[test]
fn infer_threshold_above_one_gives_empty_mask() {
    let dir = tempfile::tempdir().unwrap();
    lsnet(dir.path(), &["synth", "--out", "ds", "--counts", "1", "1", "1"]);
    let ckpt = committed_ckpt();
    let o = lsnet(
        dir.path(),
        &[
            "infer",
            "--ckpt",
            &ckpt,
            "--a",
            "ds/test/A/00000.png",
            "--b",
            "ds/test/B/00000.png",
            "--out",
            "s.png",
            "--mask",
            "m.png",
            "--threshold",
            "1.1",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mask = image::open(dir.path().join("m.png")).unwrap().to_luma8();
    assert!(mask.pixels().all(|p| p.0[0] == 0));
}

#[test]
fn infer_mismatched_inputs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    lsnet(dir.path(), &["synth", "--out", "ds", "--counts", "1", "1", "1"]);
    lsnet(
        dir.path(),
        &["synth", "--out", "small", "--counts", "1", "1", "1", "--size", "32"],
    );
    let ckpt = committed_ckpt();
    let o = lsnet(
        dir.path(),
        &[
            "infer",
            "--ckpt",
            &ckpt,
            "--a",
            "ds/test/A/00000.png",
            "--b",
            "small/test/B/00000.png",
            "--out",
            "s.png",
        ],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    std::fs::write(dir.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    let o = lsnet(
        dir.path(),
        &[
            "infer",
            "--ckpt",
            "junk.ckpt",
            "--a",
            "ds/test/A/00000.png",
            "--b",
            "ds/test/B/00000.png",
            "--out",
            "s.png",
        ],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn eval_baselines() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let o = lsnet(
        dir.path(),
        &["eval", "--data", "ds", "--baseline", "oracle", "--format", "json"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&o);
    for k in ["p", "r", "f1", "oa"] {
        assert_eq!(r[k].as_f64().unwrap(), 100.0, "{k}: {r}");
    }
    let o = lsnet(
        dir.path(),
        &["eval", "--data", "ds", "--baseline", "zeros", "--format", "json"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&o)["r"].as_f64().unwrap(), 0.0);
}

#[test]
fn eval_checkpoint_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    lsnet(dir.path(), &["synth", "--out", "ds", "--counts", "1", "1", "3"]);
    let ckpt = committed_ckpt();
    let args = ["eval", "--data", "ds", "--ckpt", &ckpt, "--format", "json"];
    let first = lsnet(dir.path(), &args);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert_eq!(stdout(&first), stdout(&lsnet(dir.path(), &args)));
}

#[test]
fn eval_missing_split_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let o = lsnet(
        dir.path(),
        &["eval", "--data", "ds", "--split", "holdout", "--baseline", "oracle"],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn efficiency_single_entry_and_malformed_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("one.csv"), "only, 91.5, 1.2, 3.4\n").unwrap();
    let o = lsnet(dir.path(), &["efficiency", "--table", "one.csv", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let row = &json(&o)["rows"][0];
    assert_eq!(row["f1_eff"].as_f64().unwrap(), row["f1"].as_f64().unwrap());

    std::fs::write(dir.path().join("bad.csv"), "a, 90, 1, 2\nb, x, 1\n").unwrap();
    let o = lsnet(dir.path(), &["efficiency", "--table", "bad.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.csv:2"), "{}", stderr(&o));
}

#[test]
fn efficiency_committed_table_ranks_diff_first() {
    let dir = tempfile::tempdir().unwrap();
    let table = repo_root().join("configs/efficiency.csv");
    let o = lsnet(
        dir.path(),
        &["efficiency", "--table", table.to_str().unwrap(), "--format", "json"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = json(&o)["rows"].as_array().unwrap().clone();
    let first = rows.iter().find(|r| r["rank"] == 1).unwrap();
    assert_eq!(first["name"], "LSNet-diffFPN");
}

#[test]
fn config_precedence_flag_over_env_over_local_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    // local file sets seed 11, env file 22, flag file 33; `synth` echoes the seed
    let body = |seed: u64| format!("[synth]\nseed = {seed}\n");
    std::fs::write(p.join("lsnet.toml"), body(11)).unwrap();
    std::fs::write(p.join("env.toml"), body(22)).unwrap();
    std::fs::write(p.join("flag.toml"), body(33)).unwrap();
    let run = |env: bool, flag: bool| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_lsnet"));
        cmd.current_dir(p).env_remove("LSNET_CONFIG");
        if env {
            cmd.env("LSNET_CONFIG", "env.toml");
        }
        if flag {
            cmd.args(["--config", "flag.toml"]);
        }
        let o = cmd
            .args(["synth", "--out", "ds", "--counts", "1", "0", "0", "--size", "32"])
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        stderr(&o)
    };
    assert!(run(false, false).contains("seed = 11"));
    assert!(run(true, false).contains("seed = 22"));
    let both = run(true, true);
    assert!(
        both.contains("seed = 33") && both.contains("--config flag.toml"),
        "{both}"
    );
}

#[test]
fn missing_config_file_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = lsnet(dir.path(), &["--config", "absent.toml", "calibrate"]);
    assert_eq!(code(&o), 2);
}
