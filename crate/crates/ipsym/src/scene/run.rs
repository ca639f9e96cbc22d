//! Scene driver: time loop, frame and log output, run summary.
//!
//! Output directory layout:
//! - `frame_%05d.obj`: all systems, one `o` group each; frame 0 is the
//!   initial state, frame `k` the state after step `k`
//! - `<system>/frame_%05d.obj`: per-system copies when `split_outputs` is set
//! - `log.csv`: one row per step, columns [`LOG_HEADER`]
//! - `hessian_%05d.txt`: global Hessian after the requested step
//! - `summary.json`: kernel counters and per-step records

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ipsym_core::solver::StepReport;
use serde::Serialize;

use super::{BuildOptions, Scene, SceneConfig, SceneError, SystemKind};
use crate::cache::BackendKind;
use crate::obj::{write_obj, ObjGroup};

pub const LOG_HEADER: &str = "step,newton_iters,E,grad_inf,t_eval_ms,t_assemble_ms,t_solve_ms,active_contacts";

/// Command-line overrides of scene settings.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub output_dir: Option<PathBuf>,
    pub steps: Option<usize>,
    pub dt: Option<f64>,
    pub backend: Option<BackendKind>,
    pub threads: Option<usize>,
    pub lanes: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    /// Keep kernels in memory only.
    pub no_cache: bool,
    pub dump_hessian: Option<usize>,
    /// Skip the per-step OBJ files.
    pub no_frames: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub newton_iters: usize,
    pub energy: f64,
    pub grad_inf: f64,
    pub converged: bool,
    pub line_search_failed: bool,
    /// Newton stopped at the rounding level of the energy.
    pub stalled: bool,
    pub min_distance: Option<f64>,
    pub active_contacts: usize,
    pub t_eval_ms: f64,
    pub t_assemble_ms: f64,
    pub t_solve_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub differentiations: usize,
    pub kernel_builds: usize,
    pub cache_hits: usize,
    pub steps: Vec<StepLog>,
    /// Final positions per system, flat `x y z`.
    #[serde(skip)]
    pub final_positions: Vec<(String, Vec<f64>)>,
}

impl RunSummary {
    /// Smallest contact distance seen over the run.
    pub fn min_distance(&self) -> Option<f64> {
        self.steps.iter().filter_map(|s| s.min_distance).fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))))
    }

    pub fn positions(&self, system: &str) -> Option<&[f64]> {
        self.final_positions.iter().find(|(n, _)| n == system).map(|(_, p)| p.as_slice())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SceneError + '_ {
    move |e| SceneError::Runtime(format!("{}: {e}", path.display()))
}

fn log_row(step: usize, r: &StepReport, active: usize) -> String {
    format!("{step},{},{active}", r.csv_fields())
}

/// Loads the scene file and runs it.
pub fn run_scene(scene: &Path, opts: &RunOptions) -> Result<RunSummary, SceneError> {
    let cfg = SceneConfig::load(scene)?;
    run_config(cfg, opts)
}

/// Runs a parsed scene (relative paths already resolved).
pub fn run_config(mut cfg: SceneConfig, opts: &RunOptions) -> Result<RunSummary, SceneError> {
    if let Some(s) = opts.steps {
        cfg.steps = s;
    }
    if let Some(dt) = opts.dt {
        cfg.dt = dt;
    }
    if let Some(b) = opts.backend {
        cfg.backend = b;
    }
    if let Some(t) = opts.threads {
        cfg.threads = t;
    }
    if opts.lanes.is_some() {
        cfg.lanes = opts.lanes;
    }
    cfg.validate()?;
    let output = opts
        .output_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| SceneError::Config("no output directory (use --output-dir)".into()))?;
    let cache_dir = if opts.no_cache { None } else { opts.cache_dir.clone().or_else(|| cfg.cache_dir.clone()).or_else(|| Some(output.join("kernel_cache"))) };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| SceneError::Runtime(format!("thread pool: {e}")))?;
    let build = BuildOptions { cache_dir: cache_dir.clone(), ..BuildOptions::from_config(&cfg) };
    pool.install(|| drive(cfg, &build, &output, opts))
}

fn write_frames(scene: &Scene, output: &Path, frame: usize) -> Result<(), SceneError> {
    let groups: Vec<ObjGroup> = scene
        .systems
        .iter()
        .enumerate()
        .map(|(i, s)| ObjGroup {
            name: &s.name,
            positions: scene.positions(i),
            faces: &s.surface,
            points: matches!(s.kind, SystemKind::Points),
        })
        .collect();
    let file = format!("frame_{frame:05}.obj");
    let path = output.join(&file);
    fs::write(&path, write_obj(&groups)).map_err(io_err(&path))?;
    if scene.config.split_outputs {
        for g in &groups {
            let dir = output.join(g.name);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let path = dir.join(&file);
            fs::write(&path, write_obj(std::slice::from_ref(g))).map_err(io_err(&path))?;
        }
    }
    Ok(())
}

fn drive(cfg: SceneConfig, build: &BuildOptions, output: &Path, opts: &RunOptions) -> Result<RunSummary, SceneError> {
    let steps = cfg.steps;
    let mut scene = Scene::build(cfg, build)?;
    let counters = scene.problem.counters();
    log::info!(
        "kernels: {} built, {} loaded from cache; {} differentiations",
        counters.kernel_builds,
        counters.cache_hits,
        counters.differentiations
    );
    fs::create_dir_all(output).map_err(io_err(output))?;
    if !opts.no_frames {
        write_frames(&scene, output, 0)?;
    }
    let mut csv = String::new();
    let _ = writeln!(csv, "{LOG_HEADER}");
    let mut logs = Vec::with_capacity(steps);
    let log_path = output.join("log.csv");
    for k in 1..=steps {
        let out = scene.step()?;
        let r = &out.report;
        if r.stalled {
            log::info!("step {k}: Newton reached the energy rounding level at |g| = {:e}", r.final_grad_inf);
        } else if !r.converged {
            log::warn!("step {k}: Newton stopped at |g| = {:e} after {} iterations", r.final_grad_inf, r.newton_iters());
        }
        let _ = writeln!(csv, "{}", log_row(k, r, out.active_contacts));
        logs.push(StepLog {
            step: k,
            newton_iters: r.newton_iters(),
            energy: r.final_energy,
            grad_inf: r.final_grad_inf,
            converged: r.converged,
            line_search_failed: r.line_search_failed,
            stalled: r.stalled,
            min_distance: out.min_distance,
            active_contacts: out.active_contacts,
            t_eval_ms: r.t_eval * 1e3,
            t_assemble_ms: r.t_assemble * 1e3,
            t_solve_ms: r.t_solve * 1e3,
        });
        if !opts.no_frames {
            write_frames(&scene, output, k)?;
        }
        if opts.dump_hessian == Some(k) {
            let u = scene.problem.gather_dofs();
            let eval = scene.problem.evaluate_global(&u).map_err(|e| SceneError::Runtime(e.to_string()))?;
            let mut text = String::new();
            let _ = eval.hessian.write_text(&mut text);
            let path = output.join(format!("hessian_{k:05}.txt"));
            fs::write(&path, text).map_err(io_err(&path))?;
        }
        fs::write(&log_path, &csv).map_err(io_err(&log_path))?;
    }
    fs::write(&log_path, &csv).map_err(io_err(&log_path))?;
    let counters = scene.problem.counters();
    let summary = RunSummary {
        output_dir: output.to_path_buf(),
        cache_dir: build.cache_dir.clone(),
        differentiations: counters.differentiations,
        kernel_builds: counters.kernel_builds,
        cache_hits: counters.cache_hits,
        steps: logs,
        final_positions: scene.systems.iter().enumerate().map(|(i, s)| (s.name.clone(), scene.positions(i).to_vec())).collect(),
    };
    let path = output.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).map_err(|e| SceneError::Runtime(e.to_string()))?;
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(summary)
}
