//! The `basis` binary end to end on the smoke configuration, its exit codes,
//! and the shipped configuration files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use basis::config::{RunConfig, RESOLVED_NAME};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn basis(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_basis"))
        .arg("--config")
        .arg(configs().join("smoke.toml"))
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn shipped_configs_parse() {
    let desk = RunConfig::load(&configs().join("desk.toml")).unwrap();
    assert_eq!(desk, RunConfig::desk());
    let smoke = RunConfig::load(&configs().join("smoke.toml")).unwrap();
    assert_eq!(smoke.env.fruitgrid.grid_size, 3);
}

#[test]
fn full_pipeline_on_the_smoke_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let s = |p: &str| out.join(p).to_str().unwrap().to_owned();

    ok(&basis(out, &["pretrain"]));
    assert!(out.join("basis.ckpt").exists() && out.join("pretrain_log.csv").exists());
    let resolved = RunConfig::load(&out.join(RESOLVED_NAME)).unwrap();
    assert_eq!(resolved, RunConfig::load(&configs().join("smoke.toml")).unwrap());

    ok(&basis(out, &["expert"]));
    let expert = std::fs::read_to_string(out.join("expert.toml")).unwrap();
    assert!(expert.contains("reference_return"));

    ok(&basis(out, &["gen-demos", "--n", "4"]));
    let demos = basis::expert::read_demos(&out.join("demos.txt")).unwrap();
    assert_eq!(demos.len(), 4);
    assert!(demos.has_rewards());

    ok(&basis(out, &["irl", "--checkpoint", &s("basis.ckpt"), "--demos", &s("demos.txt"), "--n", "3"]));
    let info = std::fs::read_to_string(out.join("irl.toml")).unwrap();
    assert!(info.contains("n_demos = 3") && info.contains("variant = \"basis\""), "{info}");

    ok(&basis(out, &["eval", "--irl", &s("irl.ckpt"), "--heldout", &s("heldout.txt")]));
    let report = basis::eval::MetricsReport::read_dir(out).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].n_demos, 3);
    assert!(report.rows[0].reward_mse.is_some());

    let grid = out.join("grid");
    let g = grid.to_str().unwrap();
    let stdout = ok(&basis(&grid, &["eval"]));
    assert!(stdout.contains("no_sf_dqn"));
    assert!(grid.join("value_difference.svg").exists());
    let figures = out.join("figures");
    ok(&basis(&figures, &["report", "--input", g]));
    assert!(figures.join("distribution.svg").exists());
}

#[test]
fn irl_without_pretraining_is_labelled() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&basis(out, &["gen-demos", "--n", "2"]));
    let demos = out.join("demos.txt");
    ok(&basis(out, &["irl", "--no-pretraining", "--demos", demos.to_str().unwrap()]));
    let info = std::fs::read_to_string(out.join("irl.toml")).unwrap();
    assert!(info.contains("no_pretraining"), "{info}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    let bad_cfg = out.join("bad.toml");
    std::fs::write(&bad_cfg, "[irl]\nlearning_rate = 1\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_basis"))
        .args(["--quiet", "--out"])
        .arg(out.join("x"))
        .arg("--config")
        .arg(&bad_cfg)
        .arg("pretrain")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));

    let missing = out.join("nope.txt");
    let o = basis(out, &["irl", "--no-pretraining", "--demos", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let garbage = out.join("garbage.txt");
    std::fs::write(&garbage, "not a demonstration file\n").unwrap();
    let o = basis(out, &["irl", "--no-pretraining", "--demos", garbage.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    ok(&basis(out, &["pretrain"]));
    ok(&basis(out, &["gen-demos", "--n", "2"]));
    let ckpt = out.join("basis.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let last = bytes.len() - 9;
    bytes[last] ^= 0x80;
    let bad = out.join("bad.ckpt");
    std::fs::write(&bad, &bytes).unwrap();
    let demos = out.join("demos.txt");
    let o = basis(out, &["irl", "--checkpoint", bad.to_str().unwrap(), "--demos", demos.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));

    // demonstrations recorded in a different grid are rejected as input errors
    let other = out.join("other");
    std::fs::create_dir_all(&other).unwrap();
    let cfg = other.join("cfg.toml");
    let text = std::fs::read_to_string(configs().join("smoke.toml")).unwrap().replace("horizon = 10", "horizon = 12");
    std::fs::write(&cfg, text).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_basis"))
        .arg("--quiet")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&other)
        .args(["gen-demos", "--n", "2"])
        .output()
        .unwrap();
    ok(&o);
    let foreign = other.join("demos.txt");
    let o = basis(out, &["irl", "--checkpoint", ckpt.to_str().unwrap(), "--demos", foreign.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}
