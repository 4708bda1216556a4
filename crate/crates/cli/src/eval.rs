use std::path::PathBuf;

use boundaryforge::metrics::{evaluate, EvalReport, ShapeInput};
use boundaryforge::trainer::Threshold;
use boundaryforge::{textio, Error, Result};
use clap::Args;
use rayon::prelude::*;

use crate::dataset::{load_curves, load_labeled, load_probabilities, Manifest, Split};
use crate::settings::{flag, layered, take_or, write_snapshot};

pub const REPORT: &str = "report.csv";
pub const SWEEP: &str = "sweep.csv";
pub const SUMMARY: &str = "summary.txt";

#[derive(Args, Debug, Clone, Default)]
pub struct EvalArgs {
    /// Prediction directory written by `predict`.
    #[arg(long, required_unless_present = "from_gt")]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Split to score (default test).
    #[arg(long)]
    pub split: Option<String>,
    /// Threshold file written by `train` or `calibrate`.
    #[arg(long)]
    pub threshold: Option<PathBuf>,
    /// Explicit threshold; overrides `--threshold`.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Comma-separated tolerance multiples of epsilon.
    #[arg(long)]
    pub multiples: Option<String>,
    /// Score the ground-truth flags instead of predictions.
    #[arg(long)]
    pub from_gt: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Threshold from an explicit value, else a threshold file, else 0.5.
pub(crate) fn resolve_tau(tau: Option<f64>, file: Option<&std::path::Path>) -> Result<f64> {
    match (tau, file) {
        (Some(t), _) => Ok(t),
        (None, Some(p)) => Ok(Threshold::parse(&textio::source_name(p), &textio::read_file(p)?)?.value),
        (None, None) => Ok(crate::train::DEFAULT_THRESHOLD),
    }
}

/// Scores boundary predictions against ground-truth curves at each tolerance.
pub fn cmd_eval(a: &EvalArgs) -> Result<EvalReport> {
    let mut kv = layered(a.config.as_deref())?;
    flag(&mut kv, "split", a.split.as_ref());
    flag(&mut kv, "tau", a.tau);
    flag(&mut kv, "multiples", a.multiples.as_ref());
    let split: Split = take_or(&mut kv, "split", Split::Test)?;
    let tau = resolve_tau(kv.take("tau")?, a.threshold.as_deref())?;
    let multiples: Vec<f64> = kv.take_list("multiples")?.unwrap_or_else(|| vec![0.5, 1.0, 2.0, 4.0]);
    kv.finish()?;

    let manifest = Manifest::read(&a.data)?;
    let shapes: Vec<ShapeInput> = manifest
        .split(split)
        .par_iter()
        .map(|e| {
            let (positions, probabilities) = if a.from_gt {
                let lc = load_labeled(&a.data, e)?;
                (lc.cloud.positions().to_vec(), lc.boundary.iter().map(|&b| b as f64).collect())
            } else {
                let pred = a.pred.as_ref().ok_or_else(|| Error::InvalidArgument("--pred is required".into()))?;
                let (rec, p) = load_probabilities(pred, e)?;
                (rec.cloud.positions().to_vec(), p)
            };
            Ok(ShapeInput {
                name: e.name(),
                positions,
                probabilities,
                curves: load_curves(&a.data, e)?,
                epsilon: e.epsilon,
            })
        })
        .collect::<Result<_>>()?;
    let report = evaluate(&shapes, tau, &multiples)?;

    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join(REPORT), report.to_csv())?;
    std::fs::write(a.out.join(SWEEP), report.sweep_csv())?;
    std::fs::write(a.out.join(SUMMARY), report.summary())?;
    let source = if a.from_gt { "ground_truth".to_string() } else { a.pred.as_ref().unwrap().display().to_string() };
    write_snapshot(
        &a.out,
        "eval",
        vec![
            ("predictions", source),
            ("split", split.to_string()),
            ("tau", tau.to_string()),
            ("multiples", textio::join_list(&multiples)),
        ],
    )?;
    Ok(report)
}
