//! Tolerance-based boundary metrics between predicted boundary points and
//! dense ground-truth curve samples.
//!
//! A point is "near" a set when its distance to the closest member is at most
//! the tolerance (compared in squared distance). All queries use the exact
//! k-d tree, so results equal an exhaustive scan.
//!
//! Empty-set conventions, each flagged in [`ShapeMetrics::flags`]:
//! precision of an empty prediction is 1; recall against empty ground truth
//! is 1; precision against empty ground truth is 0; boundary IoU of two empty
//! sets is 1; Chamfer distance with either set empty is [`CHAMFER_SENTINEL`].

use std::fmt::Write as _;

use log::warn;
use rayon::prelude::*;

use crate::cloud::kdtree::KdTree;
use crate::cloud::vec3::Vec3;
use crate::error::{Error, Result};

/// Chamfer distance reported when a set is empty: the unit-sphere diameter, x100.
pub const CHAMFER_SENTINEL: f64 = 200.0;

/// Scale applied to Chamfer distances on unit-sphere-normalized clouds.
pub const CHAMFER_SCALE: f64 = 100.0;

fn flat(points: &[Vec3]) -> Vec<f64> {
    points.iter().flatten().copied().collect()
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Number of points of `a` within `tol` of some point of `b`.
pub fn count_near(a: &[Vec3], b: &[Vec3], tol: f64) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let data = flat(b);
    let tree = KdTree::new(&data, 3);
    let r2 = tol * tol;
    a.iter().filter(|p| tree.any_within(&p[..], r2, None, |_| true)).count()
}

/// Mean distance from each point of `a` to its nearest point of `b`.
fn mean_nearest(a: &[Vec3], b: &[Vec3]) -> f64 {
    let data = flat(b);
    let tree = KdTree::new(&data, 3);
    let sum: f64 = a.iter().map(|p| tree.nearest(&p[..]).map_or(f64::INFINITY, |(d2, _)| d2.sqrt())).sum();
    sum / a.len() as f64
}

/// Fraction of predicted points near the ground truth.
pub fn precision(predicted: &[Vec3], gt: &[Vec3], tol: f64) -> Result<f64> {
    check_tol(tol)?;
    if predicted.is_empty() {
        return Ok(1.0);
    }
    if gt.is_empty() {
        warn!("precision against an empty ground-truth set is reported as 0");
        return Ok(0.0);
    }
    Ok(count_near(predicted, gt, tol) as f64 / predicted.len() as f64)
}

/// Fraction of ground-truth samples near a predicted point.
pub fn recall(predicted: &[Vec3], gt: &[Vec3], tol: f64) -> Result<f64> {
    check_tol(tol)?;
    if gt.is_empty() {
        warn!("recall against an empty ground-truth set is reported as 1");
        return Ok(1.0);
    }
    Ok(count_near(gt, predicted, tol) as f64 / gt.len() as f64)
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// `(matched predicted + matched gt) / (|predicted| + |gt|)`.
pub fn boundary_iou(predicted: &[Vec3], gt: &[Vec3], tol: f64) -> Result<f64> {
    check_tol(tol)?;
    let total = predicted.len() + gt.len();
    if total == 0 {
        return Ok(1.0);
    }
    let matched = count_near(predicted, gt, tol) + count_near(gt, predicted, tol);
    Ok(matched as f64 / total as f64)
}

/// Symmetric Chamfer distance x100; [`CHAMFER_SENTINEL`] when a set is empty.
pub fn chamfer(predicted: &[Vec3], gt: &[Vec3]) -> f64 {
    if predicted.is_empty() || gt.is_empty() {
        return CHAMFER_SENTINEL;
    }
    0.5 * (mean_nearest(gt, predicted) + mean_nearest(predicted, gt)) * CHAMFER_SCALE
}

/// Points whose probability is at least `tau`.
pub fn binarize(points: &[Vec3], probabilities: &[f64], tau: f64) -> Vec<Vec3> {
    points.iter().zip(probabilities).filter(|(_, &b)| b >= tau).map(|(p, _)| *p).collect()
}

/// One shape to evaluate.
#[derive(Debug, Clone)]
pub struct ShapeInput {
    pub name: String,
    pub positions: Vec<Vec3>,
    pub probabilities: Vec<f64>,
    pub curves: Vec<Vec3>,
    pub epsilon: f64,
}

/// Vacuous-result markers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Flags {
    pub empty_prediction: bool,
    pub empty_gt: bool,
}

impl Flags {
    pub fn tag(&self) -> &'static str {
        match (self.empty_prediction, self.empty_gt) {
            (false, false) => "",
            (true, false) => "empty_prediction",
            (false, true) => "empty_gt",
            (true, true) => "empty_prediction;empty_gt",
        }
    }
}

/// All five metrics for one shape at one tolerance multiple.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMetrics {
    pub name: String,
    pub multiple: f64,
    pub epsilon: f64,
    pub chamfer: f64,
    pub biou: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_predicted: usize,
    pub n_gt: usize,
    pub flags: Flags,
}

/// Means over shapes at one tolerance multiple.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanMetrics {
    pub multiple: f64,
    pub chamfer: f64,
    pub biou: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub vacuous_shapes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub threshold: f64,
    /// Per-shape rows, ordered by multiple then by input order.
    pub shapes: Vec<ShapeMetrics>,
    pub means: Vec<MeanMetrics>,
}

pub fn shape_metrics(name: &str, predicted: &[Vec3], gt: &[Vec3], epsilon: f64, multiple: f64) -> Result<ShapeMetrics> {
    let tol = epsilon * multiple;
    let p = precision(predicted, gt, tol)?;
    let r = recall(predicted, gt, tol)?;
    Ok(ShapeMetrics {
        name: name.to_string(),
        multiple,
        epsilon,
        chamfer: chamfer(predicted, gt),
        biou: boundary_iou(predicted, gt, tol)?,
        f1: f1(p, r),
        precision: p,
        recall: r,
        n_predicted: predicted.len(),
        n_gt: gt.len(),
        flags: Flags { empty_prediction: predicted.is_empty(), empty_gt: gt.is_empty() },
    })
}

/// Binarizes each shape at `tau` and scores it at every tolerance `m * epsilon`.
pub fn evaluate(shapes: &[ShapeInput], tau: f64, multiples: &[f64]) -> Result<EvalReport> {
    if shapes.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    if multiples.is_empty() {
        return Err(Error::invalid("at least one tolerance multiple is required"));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("threshold {tau} outside [0, 1]")));
    }
    for s in shapes {
        if s.positions.len() != s.probabilities.len() {
            return Err(Error::invalid(format!(
                "{}: {} points but {} probabilities",
                s.name,
                s.positions.len(),
                s.probabilities.len()
            )));
        }
        if !(s.epsilon > 0.0) {
            return Err(Error::invalid(format!("{}: sampling tolerance must be positive", s.name)));
        }
    }
    let predicted: Vec<Vec<Vec3>> = shapes.iter().map(|s| binarize(&s.positions, &s.probabilities, tau)).collect();
    let mut rows = Vec::with_capacity(shapes.len() * multiples.len());
    let mut means = Vec::with_capacity(multiples.len());
    for &m in multiples {
        let per: Vec<ShapeMetrics> = shapes
            .par_iter()
            .zip(&predicted)
            .map(|(s, p)| shape_metrics(&s.name, p, &s.curves, s.epsilon, m).map_err(|e| with_shape(&s.name, e)))
            .collect::<Result<_>>()?;
        means.push(mean_of(m, &per));
        rows.extend(per);
    }
    Ok(EvalReport { threshold: tau, shapes: rows, means })
}

fn with_shape(name: &str, e: Error) -> Error {
    match e {
        Error::InvalidArgument(msg) => Error::InvalidArgument(format!("{name}: {msg}")),
        other => other,
    }
}

fn mean_of(multiple: f64, rows: &[ShapeMetrics]) -> MeanMetrics {
    let n = rows.len() as f64;
    let avg = |f: fn(&ShapeMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    MeanMetrics {
        multiple,
        chamfer: avg(|r| r.chamfer),
        biou: avg(|r| r.biou),
        f1: avg(|r| r.f1),
        precision: avg(|r| r.precision),
        recall: avg(|r| r.recall),
        vacuous_shapes: rows.iter().filter(|r| r.flags != Flags::default()).count(),
    }
}

fn num(v: f64) -> String {
    crate::textio::fmt_sig(v, 9)
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "shape,tolerance,epsilon,cd,biou,f1,precision,recall,n_pred,n_gt,flags";

    /// Per-shape rows followed by one `mean` row per tolerance multiple.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.shapes {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.name,
                r.multiple,
                num(r.epsilon),
                num(r.chamfer),
                num(r.biou),
                num(r.f1),
                num(r.precision),
                num(r.recall),
                r.n_predicted,
                r.n_gt,
                r.flags.tag()
            );
        }
        for m in &self.means {
            let _ = writeln!(
                s,
                "mean,{},,{},{},{},{},{},,,vacuous={}",
                m.multiple,
                num(m.chamfer),
                num(m.biou),
                num(m.f1),
                num(m.precision),
                num(m.recall),
                m.vacuous_shapes
            );
        }
        s
    }

    /// Mean precision/recall/F1/bIoU per tolerance multiple, for plotting.
    pub fn sweep_csv(&self) -> String {
        let mut s = String::from("tolerance,precision,recall,f1,biou,cd\n");
        for m in &self.means {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                m.multiple,
                num(m.precision),
                num(m.recall),
                num(m.f1),
                num(m.biou),
                num(m.chamfer)
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let shapes = self.shapes.len() / self.means.len().max(1);
        let mut s = format!("threshold {:.2}, {shapes} shapes\n", self.threshold);
        let _ = writeln!(s, "{:>9} {:>8} {:>7} {:>7} {:>7} {:>7}", "tolerance", "CD(x100)", "bIoU", "F1", "P", "R");
        for m in &self.means {
            let _ = writeln!(
                s,
                "{:>8}e {:>8.3} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
                m.multiple, m.chamfer, m.biou, m.f1, m.precision, m.recall
            );
            if m.vacuous_shapes > 0 {
                let _ = writeln!(s, "  {} shape(s) scored under an empty-set convention", m.vacuous_shapes);
            }
        }
        s
    }

    /// Mean row at `multiple`, if evaluated.
    pub fn mean_at(&self, multiple: f64) -> Option<&MeanMetrics> {
        self.means.iter().find(|m| m.multiple == multiple)
    }
}
