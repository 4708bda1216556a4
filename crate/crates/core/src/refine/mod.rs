//! Graph-cut label refinement and flood-fill decomposition.
//!
//! The refinement minimizes
//! `E(c) = sum_i -log P_i(c_i) + sum_{(i,j)} w_ij [c_i != c_j]`
//! over the union-symmetrized 4-NN graph, where `w_ij` combines a boundary
//! term and a normal-angle term. Two labels are solved by a single min cut;
//! more labels by alpha-expansion.

mod io;
pub mod maxflow;
mod segments;

pub use io::{read_labels, read_unary, write_labels, write_unary, LabelFile, UnaryFile};
pub use segments::{flood_fill_segments, labeling_iou, mean_iou, rand_index, LabelingIou, Segmentation};

use rayon::prelude::*;

use crate::cloud::{knn, vec3, PointCloud};
use crate::{Error, Result};
use maxflow::FlowNetwork;

/// Added to probabilities before the log so costs stay finite.
pub const EPS_LOG: f64 = 1e-3;
/// Neighbors per point for the refinement and flood-fill graphs.
pub const REFINE_K: usize = 4;
/// Probabilities are floored here before the unary log.
pub const UNARY_FLOOR: f64 = 1e-12;
/// Candidate weights for the validation grid search.
pub const LAMBDA_GRID: [f64; 8] = [0.0, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0];

/// Cost of separating two points with boundary probabilities `bi`, `bj`.
pub fn pairwise_boundary(bi: f64, bj: f64, lambda: f64) -> f64 {
    let c = -lambda * (bi.max(bj) + EPS_LOG).min(1.0).ln();
    // -0.0 for lambda = 0 or a certain boundary
    c.max(0.0)
}

/// Cost of separating two points whose normals meet at `omega_deg` degrees.
pub fn pairwise_normal(omega_deg: f64, lambda: f64) -> f64 {
    let c = -lambda * (omega_deg / 90.0).clamp(EPS_LOG, 1.0).ln();
    c.max(0.0)
}

/// Angle between two unit normals in degrees, from the clamped dot product.
pub fn normal_angle_deg(a: vec3::Vec3, b: vec3::Vec3) -> f64 {
    vec3::dot(a, b).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Per-edge log terms of one shape, independent of the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseTerms {
    pub edges: Vec<(u32, u32)>,
    /// `-log(min(max(b_i, b_j) + eps, 1))` per edge, when boundary
    /// probabilities are available.
    pub boundary: Option<Vec<f64>>,
    /// `-log(min(max(omega / 90, eps), 1))` per edge.
    pub normal: Vec<f64>,
}

impl PairwiseTerms {
    /// Builds the symmetrized K-NN graph of `cloud` and its edge terms.
    pub fn new(cloud: &PointCloud, boundary: Option<&[f64]>) -> Result<Self> {
        let n = cloud.len();
        if let Some(b) = boundary {
            if b.len() != n {
                return Err(Error::invalid(format!("{} boundary probabilities for {n} points", b.len())));
            }
            if b.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid("boundary probabilities must lie in [0, 1]"));
            }
        }
        let edges = if n < 2 { Vec::new() } else { knn(cloud, REFINE_K.min(n - 1))?.symmetric_edges() };
        let boundary = boundary
            .map(|b| edges.iter().map(|&(i, j)| pairwise_boundary(b[i as usize], b[j as usize], 1.0)).collect());
        let nor = cloud.normals();
        let normal = edges
            .iter()
            .map(|&(i, j)| pairwise_normal(normal_angle_deg(nor[i as usize], nor[j as usize]), 1.0))
            .collect();
        Ok(PairwiseTerms { edges, boundary, normal })
    }

    /// `lambda * boundary + lambda_normal * normal` per edge.
    pub fn weights(&self, lambda: f64, lambda_normal: f64) -> Result<Vec<f64>> {
        if !(lambda >= 0.0 && lambda_normal >= 0.0) || !lambda.is_finite() || !lambda_normal.is_finite() {
            return Err(Error::invalid(format!(
                "weights must be finite and nonnegative, got {lambda}, {lambda_normal}"
            )));
        }
        let b = match (&self.boundary, lambda > 0.0) {
            (Some(b), _) => b.clone(),
            (None, false) => vec![0.0; self.edges.len()],
            (None, true) => return Err(Error::invalid("boundary weight set but no boundary probabilities given")),
        };
        Ok(b.iter().zip(&self.normal).map(|(&bt, &nt)| lambda * bt + lambda_normal * nt).collect())
    }
}

/// Potts-model labeling problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MrfProblem {
    pub n_labels: usize,
    /// Row-major `N x L` unary costs `-log P`.
    pub unary: Vec<f64>,
    pub edges: Vec<(u32, u32)>,
    /// Cost paid when the endpoints of an edge take different labels.
    pub weights: Vec<f64>,
}

impl MrfProblem {
    /// Unary costs from an `N x L` probability matrix.
    pub fn from_probabilities(
        probs: &[f64],
        n_labels: usize,
        edges: Vec<(u32, u32)>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if n_labels == 0 || probs.len() % n_labels != 0 {
            return Err(Error::invalid(format!("{} probabilities do not form rows of {n_labels}", probs.len())));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("probabilities must be finite and nonnegative"));
        }
        let unary = probs.iter().map(|p| -p.max(UNARY_FLOOR).min(1.0).ln()).collect();
        Self::new(n_labels, unary, edges, weights)
    }

    pub fn new(n_labels: usize, unary: Vec<f64>, edges: Vec<(u32, u32)>, weights: Vec<f64>) -> Result<Self> {
        if n_labels == 0 || unary.len() % n_labels != 0 {
            return Err(Error::invalid("unary table is not N x L"));
        }
        if unary.iter().any(|u| !u.is_finite() || *u < 0.0) {
            return Err(Error::invalid("unary costs must be finite and nonnegative"));
        }
        if weights.len() != edges.len() {
            return Err(Error::invalid(format!("{} weights for {} edges", weights.len(), edges.len())));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("pairwise costs must be finite and nonnegative"));
        }
        let n = unary.len() / n_labels;
        if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i as usize >= n || j as usize >= n || i == j) {
            return Err(Error::invalid(format!("edge ({i}, {j}) is out of range or a self loop")));
        }
        Ok(MrfProblem { n_labels, unary, edges, weights })
    }

    pub fn len(&self) -> usize {
        self.unary.len() / self.n_labels
    }

    pub fn is_empty(&self) -> bool {
        self.unary.is_empty()
    }

    pub fn energy(&self, labels: &[usize]) -> f64 {
        let l = self.n_labels;
        let un: f64 = labels.iter().enumerate().map(|(i, &c)| self.unary[i * l + c]).sum();
        let pw: f64 = self
            .edges
            .iter()
            .zip(&self.weights)
            .filter(|(&(i, j), _)| labels[i as usize] != labels[j as usize])
            .map(|(_, w)| w)
            .sum();
        un + pw
    }

    /// Per-point label of lowest unary cost (lowest index on ties).
    pub fn unary_argmax(&self) -> Vec<usize> {
        self.unary
            .chunks_exact(self.n_labels)
            .map(|row| {
                let mut best = 0;
                for (c, &u) in row.iter().enumerate() {
                    if u < row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::invalid(format!("{} labels for {} points", labels.len(), self.len())));
        }
        if let Some(c) = labels.iter().find(|&&c| c >= self.n_labels) {
            return Err(Error::invalid(format!("label {c} out of range for {} labels", self.n_labels)));
        }
        Ok(())
    }

    /// Minimizes over moves where every point either keeps its label or
    /// switches to `alpha`. Exact for the Potts model.
    fn expansion(&self, labels: &[usize], alpha: usize) -> Vec<usize> {
        let n = self.len();
        let l = self.n_labels;
        let (s, t) = (n, n + 1);
        let mut net = FlowNetwork::new(n + 2);
        // x_i = 1 (sink side) means "switch to alpha"; cost0/cost1 hold the
        // unary parts of both choices
        let cost0: Vec<f64> = (0..n).map(|i| self.unary[i * l + labels[i]]).collect();
        let mut cost1: Vec<f64> = (0..n).map(|i| self.unary[i * l + alpha]).collect();
        for (&(i, j), &w) in self.edges.iter().zip(&self.weights) {
            let (i, j) = (i as usize, j as usize);
            let e00 = if labels[i] != labels[j] { w } else { 0.0 };
            let e01 = if labels[i] != alpha { w } else { 0.0 };
            let e10 = if alpha != labels[j] { w } else { 0.0 };
            // with e11 = 0: E = e00 + (e10 - e00) x_i - e10 x_j + (e01 + e10 - e00) (1 - x_i) x_j
            cost1[i] += e10 - e00;
            cost1[j] -= e10;
            let cross = e01 + e10 - e00;
            assert!(cross >= -1e-12, "expansion move is not submodular on edge ({i}, {j})");
            if cross > 0.0 {
                net.add_edge(i, j, cross, 0.0);
            }
        }
        for i in 0..n {
            let d = cost1[i] - cost0[i];
            if d > 0.0 {
                net.add_edge(s, i, d, 0.0);
            } else if d < 0.0 {
                net.add_edge(i, t, -d, 0.0);
            }
        }
        net.max_flow(s, t);
        let src = net.source_side(s);
        (0..n).map(|i| if src[i] { labels[i] } else { alpha }).collect()
    }

    /// Alpha-expansion from `init` (unary argmax when `None`).
    ///
    /// Cycles over labels until a full cycle brings no decrease. Two labels
    /// take one expansion from the all-zero labeling, which is an exact
    /// binary min cut. The returned energy never exceeds that of `init`.
    pub fn solve(&self, init: Option<&[usize]>) -> Result<Solution> {
        let init: Vec<usize> = match init {
            Some(l) => {
                self.check_labels(l)?;
                l.to_vec()
            }
            None => self.unary_argmax(),
        };
        let e_init = self.energy(&init);
        let mut labels = init.clone();
        let mut energy = e_init;
        let mut sweeps = 0;
        if self.n_labels == 2 && !self.is_empty() {
            let exact = self.expansion(&vec![0; self.len()], 1);
            let e = self.energy(&exact);
            if e < energy {
                labels = exact;
                energy = e;
            }
            sweeps = 1;
        } else if self.n_labels > 2 {
            loop {
                sweeps += 1;
                let mut improved = false;
                for alpha in 0..self.n_labels {
                    let cand = self.expansion(&labels, alpha);
                    let e = self.energy(&cand);
                    // strict decrease beyond round-off keeps the loop finite
                    if e < energy - 1e-12 * energy.abs().max(1.0) {
                        labels = cand;
                        energy = e;
                        improved = true;
                    }
                }
                if !improved {
                    break;
                }
            }
        }
        assert!(energy <= e_init, "refinement increased the energy from {e_init} to {energy}");
        Ok(Solution { labels, energy, initial_energy: e_init, sweeps })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub labels: Vec<usize>,
    pub energy: f64,
    pub initial_energy: f64,
    /// Full passes over the labels.
    pub sweeps: usize,
}

/// Which pairwise terms a refinement uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairwiseMode {
    Boundary,
    Normal,
    Both,
}

impl PairwiseMode {
    pub const ALL: [PairwiseMode; 3] = [PairwiseMode::Boundary, PairwiseMode::Normal, PairwiseMode::Both];

    pub fn name(self) -> &'static str {
        match self {
            PairwiseMode::Boundary => "boundary",
            PairwiseMode::Normal => "normal",
            PairwiseMode::Both => "both",
        }
    }

    /// Candidate `(lambda, lambda_normal)` pairs in tie-break order.
    pub fn grid(self) -> Vec<(f64, f64)> {
        match self {
            PairwiseMode::Boundary => LAMBDA_GRID.iter().map(|&l| (l, 0.0)).collect(),
            PairwiseMode::Normal => LAMBDA_GRID.iter().map(|&l| (0.0, l)).collect(),
            PairwiseMode::Both => LAMBDA_GRID.iter().flat_map(|&a| LAMBDA_GRID.iter().map(move |&b| (a, b))).collect(),
        }
    }

    pub fn needs_boundary(self) -> bool {
        self != PairwiseMode::Normal
    }
}

impl std::str::FromStr for PairwiseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PairwiseMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown pairwise mode {s:?} (boundary, normal, both)")))
    }
}

impl std::fmt::Display for PairwiseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One shape to refine: its cloud, `N x L` part probabilities and, for the
/// boundary term, per-point boundary probabilities.
#[derive(Debug, Clone)]
pub struct RefineInput<'a> {
    pub cloud: &'a PointCloud,
    pub probabilities: &'a [f64],
    pub n_labels: usize,
    pub boundary: Option<&'a [f64]>,
}

/// Shape prepared for repeated solves with different weights.
#[derive(Debug, Clone)]
pub struct PreparedShape {
    pub terms: PairwiseTerms,
    pub unary: MrfProblem,
}

impl PreparedShape {
    pub fn new(input: &RefineInput<'_>) -> Result<Self> {
        if input.probabilities.len() != input.cloud.len() * input.n_labels {
            return Err(Error::invalid(format!(
                "{} probabilities for {} points and {} labels",
                input.probabilities.len(),
                input.cloud.len(),
                input.n_labels
            )));
        }
        let terms = PairwiseTerms::new(input.cloud, input.boundary)?;
        let unary = MrfProblem::from_probabilities(input.probabilities, input.n_labels, Vec::new(), Vec::new())?;
        Ok(PreparedShape { terms, unary })
    }

    pub fn problem(&self, lambda: f64, lambda_normal: f64) -> Result<MrfProblem> {
        let w = self.terms.weights(lambda, lambda_normal)?;
        MrfProblem::new(self.unary.n_labels, self.unary.unary.clone(), self.terms.edges.clone(), w)
    }

    pub fn solve(&self, lambda: f64, lambda_normal: f64) -> Result<Solution> {
        self.problem(lambda, lambda_normal)?.solve(None)
    }
}

/// Refines one shape with fixed weights.
pub fn refine_shape(input: &RefineInput<'_>, lambda: f64, lambda_normal: f64) -> Result<Solution> {
    PreparedShape::new(input)?.solve(lambda, lambda_normal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaChoice {
    pub lambda: f64,
    pub lambda_normal: f64,
    pub mean_shape_iou: f64,
    /// Every grid point with its mean validation shape IoU, in grid order.
    pub scores: Vec<((f64, f64), f64)>,
    pub solves: usize,
}

/// Grid search for the weights maximizing mean validation shape IoU. Ties
/// go to the earliest grid point, i.e. the smallest weights.
pub fn tune_lambda(shapes: &[(RefineInput<'_>, &[usize])], mode: PairwiseMode) -> Result<LambdaChoice> {
    if shapes.is_empty() {
        return Err(Error::invalid("lambda search needs at least one validation shape"));
    }
    if mode.needs_boundary() && shapes.iter().any(|(s, _)| s.boundary.is_none()) {
        return Err(Error::invalid(format!("mode {mode} needs boundary probabilities for every shape")));
    }
    let prepared: Vec<PreparedShape> = shapes.par_iter().map(|(s, _)| PreparedShape::new(s)).collect::<Result<_>>()?;
    let grid = mode.grid();
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    for (gi, &(l, ln)) in grid.iter().enumerate() {
        let ious: Vec<f64> = prepared
            .par_iter()
            .zip(shapes)
            .map(|(p, (s, gt))| {
                let sol = p.solve(l, ln)?;
                Ok(labeling_iou(&sol.labels, gt, s.n_labels)?.shape_iou)
            })
            .collect::<Result<_>>()?;
        let mean = ious.iter().sum::<f64>() / ious.len() as f64;
        scores.push(((l, ln), mean));
        if best.is_none_or(|(_, b)| mean > b) {
            best = Some((gi, mean));
        }
    }
    let (gi, mean) = best.expect("grid is nonempty");
    Ok(LambdaChoice {
        lambda: grid[gi].0,
        lambda_normal: grid[gi].1,
        mean_shape_iou: mean,
        scores,
        solves: grid.len() * shapes.len(),
    })
}

#[cfg(test)]
mod tests;
