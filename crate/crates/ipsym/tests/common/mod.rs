#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use ipsym::scene::{run_config, RunOptions, RunSummary, SceneConfig};

pub fn scene_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes").join(format!("{name}.json"))
}

pub fn load_scene(name: &str) -> SceneConfig {
    SceneConfig::load(&scene_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub const SHIPPED_SCENES: [&str; 7] = [
    "twist_cube_linear",
    "twist_cube_quadratic",
    "stretch_cube_materials",
    "cloth_drop",
    "box_incline_friction",
    "attach_two_systems",
    "armadillo_mini",
];

pub fn run(cfg: SceneConfig, out: &Path, opts: RunOptions) -> RunSummary {
    let opts = RunOptions { output_dir: Some(out.to_path_buf()), ..opts };
    run_config(cfg, &opts).unwrap_or_else(|e| panic!("run into {}: {e}", out.display()))
}

/// `log.csv` without the timing columns.
pub fn log_without_timings(dir: &Path) -> Vec<String> {
    let text = fs::read_to_string(dir.join("log.csv")).expect("log.csv");
    let header: Vec<&str> = text.lines().next().expect("header").split(',').collect();
    let keep: Vec<usize> = (0..header.len()).filter(|&i| !header[i].starts_with("t_")).collect();
    text.lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            keep.iter().map(|&i| f[i]).collect::<Vec<_>>().join(",")
        })
        .collect()
}

/// Relative paths and contents of every `.obj` file under `dir`.
pub fn obj_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let mut entries: Vec<_> = fs::read_dir(dir).expect("read_dir").map(|e| e.expect("entry").path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                if p.file_name().is_some_and(|n| n != "kernel_cache") {
                    walk(root, &p, out);
                }
            } else if p.extension().is_some_and(|e| e == "obj") {
                out.push((p.strip_prefix(root).expect("prefix").to_path_buf(), fs::read(&p).expect("read")));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}

/// Non-timing outputs of a run directory, for bitwise comparisons.
pub fn outputs(dir: &Path) -> (Vec<String>, Vec<(PathBuf, Vec<u8>)>) {
    (log_without_timings(dir), obj_files(dir))
}

/// Distance in units in the last place; 0 for identical bits.
pub fn ulps(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    if a.is_nan() || b.is_nan() {
        return u64::MAX;
    }
    let key = |x: f64| {
        let i = x.to_bits() as i64;
        if i < 0 { i64::MIN - i } else { i }
    };
    key(a).abs_diff(key(b))
}

pub fn centroid(x: &[f64]) -> [f64; 3] {
    let n = (x.len() / 3) as f64;
    let mut c = [0.0; 3];
    for p in x.chunks(3) {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    c
}
