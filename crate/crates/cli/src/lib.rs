//! Command implementations behind the `boundaryforge` binary.
//!
//! Each subcommand has an argument struct and a `cmd_*` function returning
//! its result, so runs can be driven from code as well as from the shell.
//! Settings resolve as flags over an optional `--config` file over
//! defaults, and every run writes `<command>.resolved.cfg` next to its
//! outputs.

pub mod dataset;
pub mod eval;
pub mod gen;
pub mod predict;
pub mod refine;
pub mod settings;
pub mod train;

use boundaryforge::Error;
use clap::{Parser, Subcommand};

pub use eval::{cmd_eval, EvalArgs};
pub use gen::{cmd_gen, GenArgs};
pub use predict::{cmd_calibrate, cmd_predict, CalibrateArgs, PredictArgs};
pub use refine::{cmd_refine, cmd_segment, RefineArgs, SegmentArgs};
pub use train::{cmd_train, TrainArgs};

/// Process exit status for an error: 2 for usage, input and parse problems,
/// 3 for numeric failures and violated invariants.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Parse { .. } | Error::Io(_) => 2,
        Error::Numeric(_) | Error::State(_) => 3,
    }
}

/// Keeps freed memory in the heap instead of returning it to the kernel.
/// Training allocates and frees the same large buffers every step, and
/// fresh pages from the kernel cost a fault each.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator parameters.
    unsafe {
        libc::mallopt(libc::M_MMAP_MAX, 0);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}

/// Sizes the global thread pool; `None` keeps the available parallelism.
pub fn init_workers(workers: Option<usize>) -> Result<(), Error> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::InvalidArgument("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::State(format!("thread pool: {e}")))?;
    }
    Ok(())
}

#[derive(Parser, Debug)]
#[command(name = "boundaryforge", version, about = "Part-boundary detection for point clouds")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labeled synthetic dataset.
    Gen(GenArgs),
    /// Train a boundary or part network.
    Train(TrainArgs),
    /// Predict boundary probabilities or part distributions.
    Predict(PredictArgs),
    /// Choose the boundary threshold on predicted shapes.
    Calibrate(CalibrateArgs),
    /// Score boundary predictions.
    Eval(EvalArgs),
    /// Flood-fill decomposition from boundary flags.
    Segment(SegmentArgs),
    /// Graph-cut refinement of part labels.
    Refine(RefineArgs),
}

/// Runs one parsed command and prints a short result line.
pub fn run(command: &Command) -> Result<(), Error> {
    match command {
        Command::Gen(a) => {
            let m = cmd_gen(a)?;
            println!("wrote {} shapes to {}", m.entries.len(), a.out.display());
        }
        Command::Train(a) => {
            let r = cmd_train(a)?;
            println!("best epoch {}, threshold {} ({})", r.best_epoch, r.threshold.value, r.threshold.metric);
        }
        Command::Predict(a) => {
            let n = cmd_predict(a)?;
            println!("predicted {n} shapes into {}", a.out.display());
        }
        Command::Calibrate(a) => {
            let c = cmd_calibrate(a)?;
            println!("threshold {}", c.threshold.value);
        }
        Command::Eval(a) => print!("{}", cmd_eval(a)?.summary()),
        Command::Segment(a) => {
            let rows = cmd_segment(a)?;
            let mean = rows.iter().map(|r| r.rand_index).sum::<f64>() / rows.len().max(1) as f64;
            println!("segmented {} shapes, mean Rand index {mean:.4}", rows.len());
        }
        Command::Refine(a) => {
            let r = cmd_refine(a)?;
            println!(
                "lambda {} lambda_normal {}: shape IoU {:.4} -> {:.4}",
                r.lambda,
                r.lambda_normal,
                r.mean_unrefined(),
                r.mean_refined()
            );
        }
    }
    Ok(())
}
