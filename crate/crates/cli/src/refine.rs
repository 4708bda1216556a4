use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use boundaryforge::refine::{
    flood_fill_segments, labeling_iou, rand_index, read_unary, refine_shape, tune_lambda, write_labels, LabelFile,
    LambdaChoice, MrfProblem, PairwiseMode, RefineInput, REFINE_K,
};
use boundaryforge::synthgen::LabeledCloud;
use boundaryforge::textio::fmt9;
use boundaryforge::{Error, Result};
use clap::Args;
use rayon::prelude::*;

use crate::dataset::{create_dirs, load_labeled, load_probabilities, Entry, Manifest, Split};
use crate::eval::resolve_tau;
use crate::gen::annotate;
use crate::settings::{flag, layered, take_or, write_snapshot};

pub const IOU_REPORT: &str = "iou.csv";
pub const SEGMENT_REPORT: &str = "segments.csv";

#[derive(Args, Debug, Clone, Default)]
pub struct RefineArgs {
    /// Part predictions (UNR1) written by `predict` with a part model.
    #[arg(long)]
    pub unary: PathBuf,
    /// Boundary predictions (PCB1 with probabilities); needed when lambda > 0.
    #[arg(long)]
    pub boundary: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Split to refine (default test).
    #[arg(long)]
    pub split: Option<String>,
    /// Boundary term weight; overrides tuning.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Normal term weight; overrides tuning.
    #[arg(long)]
    pub lambda_normal: Option<f64>,
    /// Split to tune the weights on (needs predictions for it too).
    #[arg(long)]
    pub tune_split: Option<String>,
    /// Pairwise terms searched when tuning: boundary, normal or both.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineRow {
    pub name: String,
    pub unrefined_iou: f64,
    pub refined_iou: f64,
    pub initial_energy: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineReport {
    pub lambda: f64,
    pub lambda_normal: f64,
    pub tuning: Option<LambdaChoice>,
    pub rows: Vec<RefineRow>,
}

impl RefineReport {
    pub fn mean_unrefined(&self) -> f64 {
        self.rows.iter().map(|r| r.unrefined_iou).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_refined(&self) -> f64 {
        self.rows.iter().map(|r| r.refined_iou).sum::<f64>() / self.rows.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("shape,unrefined_iou,refined_iou,initial_energy,energy\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.name,
                fmt9(r.unrefined_iou),
                fmt9(r.refined_iou),
                fmt9(r.initial_energy),
                fmt9(r.energy)
            );
        }
        let _ = writeln!(s, "mean,{},{},,", fmt9(self.mean_unrefined()), fmt9(self.mean_refined()));
        s
    }
}

/// Everything needed to refine one shape.
struct Loaded {
    entry: Entry,
    gt: LabeledCloud,
    probabilities: Vec<f64>,
    n_labels: usize,
    boundary: Option<Vec<f64>>,
}

impl Loaded {
    fn input(&self) -> RefineInput<'_> {
        RefineInput {
            cloud: &self.gt.cloud,
            probabilities: &self.probabilities,
            n_labels: self.n_labels,
            boundary: self.boundary.as_deref(),
        }
    }

    fn gt_labels(&self) -> Result<Vec<usize>> {
        LabelFile { ids: self.gt.labels.clone() }.labels(self.n_labels).map_err(|e| annotate(e, &self.entry.name()))
    }
}

fn load_split(a: &RefineArgs, manifest: &Manifest, split: Split) -> Result<Vec<Loaded>> {
    manifest
        .split(split)
        .par_iter()
        .map(|e| {
            let gt = load_labeled(&a.data, e)?;
            let u = read_unary(&e.sibling(&a.unary, "unr"))?;
            if u.len() != gt.cloud.len() {
                return Err(Error::InvalidArgument(format!(
                    "{}: {} unary rows for {} points",
                    e.name(),
                    u.len(),
                    gt.cloud.len()
                )));
            }
            let boundary = match &a.boundary {
                Some(dir) => Some(load_probabilities(dir, e)?.1),
                None => None,
            };
            Ok(Loaded { entry: (*e).clone(), gt, n_labels: u.n_labels, probabilities: u.probabilities, boundary })
        })
        .collect()
}

/// Graph-cut refinement of predicted part labels. Writes refined LBL1 files
/// and a per-shape IoU report.
pub fn cmd_refine(a: &RefineArgs) -> Result<RefineReport> {
    let mut kv = layered(a.config.as_deref())?;
    flag(&mut kv, "split", a.split.as_ref());
    flag(&mut kv, "lambda", a.lambda);
    flag(&mut kv, "lambda_normal", a.lambda_normal);
    flag(&mut kv, "tune_split", a.tune_split.as_ref());
    flag(&mut kv, "mode", a.mode.as_ref());
    let split: Split = take_or(&mut kv, "split", Split::Test)?;
    let lambda: Option<f64> = kv.take("lambda")?;
    let lambda_normal: Option<f64> = kv.take("lambda_normal")?;
    let tune_split: Option<Split> = kv.take("tune_split")?;
    let mode: PairwiseMode =
        take_or(&mut kv, "mode", if a.boundary.is_some() { PairwiseMode::Boundary } else { PairwiseMode::Normal })?;
    kv.finish()?;

    let manifest = Manifest::read(&a.data)?;
    let tuning = match tune_split {
        Some(s) => {
            let shapes = load_split(a, &manifest, s)?;
            let gts = shapes.iter().map(Loaded::gt_labels).collect::<Result<Vec<_>>>()?;
            let pairs: Vec<(RefineInput<'_>, &[usize])> =
                shapes.iter().zip(&gts).map(|(l, g)| (l.input(), g.as_slice())).collect();
            Some(tune_lambda(&pairs, mode)?)
        }
        None => None,
    };
    let lambda = lambda.or(tuning.as_ref().map(|t| t.lambda)).unwrap_or(0.0);
    let lambda_normal = lambda_normal.or(tuning.as_ref().map(|t| t.lambda_normal)).unwrap_or(0.0);

    let shapes = load_split(a, &manifest, split)?;
    let entries: Vec<&Entry> = shapes.iter().map(|l| &l.entry).collect();
    create_dirs(&a.out, &entries)?;
    let rows: Vec<RefineRow> = shapes
        .par_iter()
        .map(|l| {
            let sol = refine_shape(&l.input(), lambda, lambda_normal).map_err(|e| annotate(e, &l.entry.name()))?;
            let gt = l.gt_labels()?;
            let argmax =
                MrfProblem::from_probabilities(&l.probabilities, l.n_labels, Vec::new(), Vec::new())?.unary_argmax();
            write_labels(
                &l.entry.sibling(&a.out, "lbl"),
                &LabelFile { ids: sol.labels.iter().map(|&c| c as i64).collect() },
            )?;
            Ok(RefineRow {
                name: l.entry.name(),
                unrefined_iou: labeling_iou(&argmax, &gt, l.n_labels)?.shape_iou,
                refined_iou: labeling_iou(&sol.labels, &gt, l.n_labels)?.shape_iou,
                initial_energy: sol.initial_energy,
                energy: sol.energy,
            })
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!("split {split} has no shapes")));
    }
    let report = RefineReport { lambda, lambda_normal, tuning, rows };
    std::fs::write(a.out.join(IOU_REPORT), report.to_csv())?;
    write_snapshot(
        &a.out,
        "refine",
        vec![
            ("split", split.to_string()),
            ("lambda", lambda.to_string()),
            ("lambda_normal", lambda_normal.to_string()),
            ("tune_split", tune_split.map_or(String::new(), |s| s.to_string())),
            ("mode", mode.to_string()),
        ],
    )?;
    log::info!(
        "lambda {lambda}, lambda_normal {lambda_normal}: shape IoU {:.4} -> {:.4}",
        report.mean_unrefined(),
        report.mean_refined()
    );
    Ok(report)
}

#[derive(Args, Debug, Clone, Default)]
pub struct SegmentArgs {
    /// Boundary predictions written by `predict`.
    #[arg(long, required_unless_present = "from_gt")]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Split to segment (default test).
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub threshold: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Neighbors in the flood-fill graph.
    #[arg(long)]
    pub k: Option<usize>,
    /// Flood from the ground-truth boundary flags.
    #[arg(long)]
    pub from_gt: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRow {
    pub name: String,
    pub segments: usize,
    /// Distinct ground-truth labels among non-boundary points.
    pub gt_parts: usize,
    /// Agreement with the ground-truth labels over non-boundary points.
    pub rand_index: f64,
}

pub fn segment_csv(rows: &[SegmentRow]) -> String {
    let mut s = String::from("shape,segments,gt_parts,rand_index\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.name, r.segments, r.gt_parts, fmt9(r.rand_index));
    }
    s
}

/// Segments one shape and scores it against its labels.
pub fn segment_shape(gt: &LabeledCloud, flags: &[bool], k: usize) -> Result<(Vec<i64>, usize, usize, f64)> {
    let seg = flood_fill_segments(&gt.cloud, flags, k)?;
    let keep: Vec<usize> = (0..flags.len()).filter(|&i| !flags[i]).collect();
    let a: Vec<i64> = keep.iter().map(|&i| seg.ids[i]).collect();
    let b: Vec<i64> = keep.iter().map(|&i| gt.labels[i]).collect();
    let parts = b.iter().collect::<BTreeSet<_>>().len();
    Ok((seg.ids, seg.count, parts, rand_index(&a, &b)?))
}

/// Flood-fill decomposition from thresholded boundary probabilities (or the
/// ground-truth flags). Writes LBL1 segment ids with -1 on boundary points.
pub fn cmd_segment(a: &SegmentArgs) -> Result<Vec<SegmentRow>> {
    let mut kv = layered(a.config.as_deref())?;
    flag(&mut kv, "split", a.split.as_ref());
    flag(&mut kv, "tau", a.tau);
    flag(&mut kv, "k", a.k);
    let split: Split = take_or(&mut kv, "split", Split::Test)?;
    let tau = resolve_tau(kv.take("tau")?, a.threshold.as_deref())?;
    let k: usize = take_or(&mut kv, "k", REFINE_K)?;
    kv.finish()?;

    let manifest = Manifest::read(&a.data)?;
    let entries = manifest.split(split);
    create_dirs(&a.out, &entries)?;
    let rows: Vec<SegmentRow> = entries
        .par_iter()
        .map(|e| {
            let gt = load_labeled(&a.data, e)?;
            let flags: Vec<bool> = if a.from_gt {
                gt.boundary.iter().map(|&b| b == 1).collect()
            } else {
                let pred: &Path =
                    a.pred.as_deref().ok_or_else(|| Error::InvalidArgument("--pred is required".into()))?;
                load_probabilities(pred, e)?.1.iter().map(|&p| p >= tau).collect()
            };
            let (ids, segments, gt_parts, ri) =
                segment_shape(&gt, &flags, k).map_err(|err| annotate(err, &e.name()))?;
            write_labels(&e.sibling(&a.out, "lbl"), &LabelFile { ids })?;
            Ok(SegmentRow { name: e.name(), segments, gt_parts, rand_index: ri })
        })
        .collect::<Result<_>>()?;
    std::fs::write(a.out.join(SEGMENT_REPORT), segment_csv(&rows))?;
    let source = if a.from_gt { "ground_truth".to_string() } else { a.pred.as_ref().unwrap().display().to_string() };
    write_snapshot(
        &a.out,
        "segment",
        vec![("predictions", source), ("split", split.to_string()), ("tau", tau.to_string()), ("k", k.to_string())],
    )?;
    Ok(rows)
}
