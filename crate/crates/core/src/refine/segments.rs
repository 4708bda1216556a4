//! Flood-fill decomposition and labeling comparisons.

use std::collections::{HashMap, VecDeque};

use crate::cloud::{knn, PointCloud};
use crate::{Error, Result};

/// Segment id per point; boundary points carry `-1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub ids: Vec<i64>,
    pub count: usize,
}

/// Connected components of the symmetrized `k`-NN graph after removing
/// flagged points. Seeds are taken in increasing point index, so ids are
/// numbered by each component's lowest point.
pub fn flood_fill_segments(cloud: &PointCloud, boundary: &[bool], k: usize) -> Result<Segmentation> {
    let n = cloud.len();
    if boundary.len() != n {
        return Err(Error::invalid(format!("{} boundary flags for {n} points", boundary.len())));
    }
    let adj = if n < 2 { vec![Vec::new(); n] } else { knn(cloud, k.min(n - 1))?.symmetric_adjacency() };
    let mut ids = vec![-1i64; n];
    let mut count = 0usize;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if boundary[seed] || ids[seed] >= 0 {
            continue;
        }
        let id = count as i64;
        count += 1;
        ids[seed] = id;
        queue.push_back(seed);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                let v = v as usize;
                if !boundary[v] && ids[v] < 0 {
                    ids[v] = id;
                    queue.push_back(v);
                }
            }
        }
    }
    if count == 0 {
        log::warn!("every point is flagged as boundary; no segments");
    }
    Ok(Segmentation { ids, count })
}

fn pairs(m: u64) -> f64 {
    (m * m.saturating_sub(1) / 2) as f64
}

/// Fraction of point pairs on which two labelings agree about being in the
/// same group. Computed from the contingency table.
pub fn rand_index(a: &[i64], b: &[i64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("labelings of length {} and {}", a.len(), b.len())));
    }
    let n = a.len() as u64;
    if n < 2 {
        return Ok(1.0);
    }
    let mut joint: HashMap<(i64, i64), u64> = HashMap::new();
    let mut ra: HashMap<i64, u64> = HashMap::new();
    let mut rb: HashMap<i64, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let total = pairs(n);
    let same_both: f64 = joint.values().map(|&m| pairs(m)).sum();
    let same_a: f64 = ra.values().map(|&m| pairs(m)).sum();
    let same_b: f64 = rb.values().map(|&m| pairs(m)).sum();
    // agreements = pairs together in both + pairs apart in both
    Ok((total + 2.0 * same_both - same_a - same_b) / total)
}

/// IoU of one labeled shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelingIou {
    /// Mean IoU over labels present in the prediction or the ground truth.
    pub shape_iou: f64,
    /// Per-label IoU; `None` for labels absent from both.
    pub per_label: Vec<Option<f64>>,
}

pub fn labeling_iou(pred: &[usize], gt: &[usize], n_labels: usize) -> Result<LabelingIou> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::invalid(format!("labelings of length {} and {}", pred.len(), gt.len())));
    }
    if let Some(c) = pred.iter().chain(gt).find(|&&c| c >= n_labels) {
        return Err(Error::invalid(format!("label {c} out of range for {n_labels} labels")));
    }
    let mut inter = vec![0usize; n_labels];
    let mut union = vec![0usize; n_labels];
    for (&p, &g) in pred.iter().zip(gt) {
        if p == g {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[g] += 1;
        }
    }
    let per_label: Vec<Option<f64>> =
        inter.iter().zip(&union).map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64)).collect();
    let present: Vec<f64> = per_label.iter().flatten().copied().collect();
    let shape_iou = present.iter().sum::<f64>() / present.len() as f64;
    Ok(LabelingIou { shape_iou, per_label })
}

/// `(mean shape IoU, part IoU)` over a dataset. Part IoU averages each
/// label over the shapes where it is present, then averages the labels.
pub fn mean_iou(shapes: &[LabelingIou]) -> Result<(f64, f64)> {
    if shapes.is_empty() {
        return Err(Error::invalid("no shapes to average"));
    }
    let shape = shapes.iter().map(|s| s.shape_iou).sum::<f64>() / shapes.len() as f64;
    let l = shapes.iter().map(|s| s.per_label.len()).max().unwrap_or(0);
    let mut per = Vec::new();
    for c in 0..l {
        let vals: Vec<f64> = shapes.iter().filter_map(|s| s.per_label.get(c).copied().flatten()).collect();
        if !vals.is_empty() {
            per.push(vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    let part = per.iter().sum::<f64>() / per.len() as f64;
    Ok((shape, part))
}
