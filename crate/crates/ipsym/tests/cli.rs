use std::fs;
use std::path::Path;
use std::process::{Command, Output};

mod common;

use common::scene_path;

fn ipsym(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipsym")).args(args).output().expect("spawn ipsym")
}

fn run_scene_file(scene: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--scene", scene.to_str().unwrap(), "--output-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ipsym(&args)
}

#[test]
fn run_writes_frames_log_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run_scene_file(&scene_path("twist_cube_linear"), &out, &["--steps", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(out.join("log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some(ipsym::scene::LOG_HEADER));
    assert_eq!(lines.count(), 2);
    for k in 0..=2 {
        assert!(out.join(format!("frame_{k:05}.obj")).is_file());
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"].as_array().unwrap().len(), 2);
    assert!(out.join("kernel_cache").is_dir());
}

#[test]
fn dump_hessian_writes_the_requested_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run_scene_file(&scene_path("twist_cube_linear"), &out, &["--steps", "2", "--dump-hessian", "1", "--no-cache"]);
    assert!(o.status.success());
    assert!(out.join("hessian_00001.txt").is_file());
    assert!(!out.join("hessian_00002.txt").exists());
    assert!(!out.join("kernel_cache").exists());
}

#[test]
fn missing_mesh_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(scene_path("armadillo_mini")).unwrap()).unwrap();
    cfg["systems"][0]["mesh"] = serde_json::json!({ "tet_file": "/nonexistent/mesh.tet" });
    let scene = dir.path().join("bad.json");
    fs::write(&scene, cfg.to_string()).unwrap();
    let o = run_scene_file(&scene, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(scene_path("twist_cube_linear")).unwrap()).unwrap();
    cfg["no_such_option"] = serde_json::json!(1);
    let scene = dir.path().join("bad.json");
    fs::write(&scene, cfg.to_string()).unwrap();
    let o = run_scene_file(&scene, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_arguments_exit_with_one() {
    assert_eq!(ipsym(&["run", "--scene"]).status.code(), Some(1));
    assert_eq!(ipsym(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ipsym(&["--help"]).status.code(), Some(0));
}
