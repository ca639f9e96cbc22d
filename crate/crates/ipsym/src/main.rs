use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ipsym::cache::BackendKind;
use ipsym::scene::{run_scene, RunOptions};

#[derive(Parser)]
#[command(name = "ipsym", version, about = "Run simulation scenes built from symbolic energies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scene and write frames, log.csv and summary.json.
    Run {
        /// Scene description (JSON).
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        /// Override the scene's step count.
        #[arg(long)]
        steps: Option<usize>,
        /// Override the scene's time step.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
        /// Worker threads for evaluation and assembly.
        #[arg(long)]
        threads: Option<usize>,
        /// Elements per batched kernel call.
        #[arg(long)]
        lanes: Option<usize>,
        /// Kernel cache directory (default: <output-dir>/kernel_cache).
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Keep compiled kernels in memory only.
        #[arg(long, conflicts_with = "cache_dir")]
        no_cache: bool,
        /// Write the global Hessian after this step.
        #[arg(long, value_name = "STEP")]
        dump_hessian: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Command::Run { scene, output_dir, steps, dt, backend, threads, lanes, cache_dir, no_cache, dump_hessian } = cli.command;
    let opts = RunOptions {
        output_dir: Some(output_dir),
        steps,
        dt,
        backend,
        threads,
        lanes,
        cache_dir,
        no_cache,
        dump_hessian,
        no_frames: false,
    };
    match run_scene(&scene, &opts) {
        Ok(s) => {
            let worst = s.steps.iter().map(|l| l.grad_inf).fold(0.0, f64::max);
            println!("{} steps written to {}", s.steps.len(), s.output_dir.display());
            println!(
                "kernels: {} built, {} reused from cache; differentiations: {}",
                s.kernel_builds, s.cache_hits, s.differentiations
            );
            println!("largest final |grad|: {worst:e}");
            if let Some(d) = s.min_distance() {
                println!("smallest contact distance: {d:e}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
