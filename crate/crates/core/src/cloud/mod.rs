//! Point-cloud container, exact spatial search, local frames, curvature
//! estimation and noise augmentation.

mod curvature;
mod frames;
mod io;
pub mod kdtree;
mod perturb;
pub mod vec3;

pub use curvature::{estimate_principal_directions, PrincipalFrame};
pub use frames::{build_local_frames, frames_from_draws, tangent_draws, LocalFrame};
pub use io::{read_pcb, write_pcb, PcbRecord};
pub use perturb::perturb;

use rayon::prelude::*;

use crate::{Error, Real, Result};
use kdtree::KdTree;
use vec3::Vec3;

/// Positions with unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vec3>,
    normals: Vec<Vec3>,
    normalized: bool,
}

/// `p' = (p - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub center: Vec3,
    pub scale: f64,
}

impl Similarity {
    pub fn apply(&self, p: Vec3) -> Vec3 {
        vec3::scale(vec3::sub(p, self.center), self.scale)
    }
}

impl PointCloud {
    /// Validates finiteness and renormalizes normals.
    pub fn new(positions: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("point cloud needs at least one point"));
        }
        if positions.len() != normals.len() {
            return Err(Error::invalid(format!("{} positions but {} normals", positions.len(), normals.len())));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid(format!("non-finite position at point {i}")));
        }
        let mut unit = Vec::with_capacity(normals.len());
        for (i, n) in normals.into_iter().enumerate() {
            if n.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("non-finite normal at point {i}")));
            }
            let l = vec3::norm(n);
            if (l - 1.0).abs() <= 1e-12 {
                unit.push(n);
            } else {
                unit.push(
                    vec3::normalize(n).ok_or_else(|| Error::invalid(format!("zero-length normal at point {i}")))?,
                );
            }
        }
        Ok(PointCloud { positions, normals: unit, normalized: false })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn flat_positions(&self) -> Vec<f64> {
        self.positions.iter().flatten().copied().collect()
    }

    /// The transform that centers the cloud at its centroid and scales it into
    /// the unit sphere.
    pub fn unit_sphere_transform(&self) -> Similarity {
        let n = self.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.positions {
            c = vec3::add(c, *p);
        }
        let center = vec3::scale(c, 1.0 / n);
        let r = self.positions.iter().map(|p| vec3::dist(*p, center)).fold(0.0, f64::max);
        let scale = if r > 0.0 { 1.0 / r } else { 1.0 };
        Similarity { center, scale }
    }

    /// Applies a similarity transform; normals are unaffected by
    /// translation and positive scaling.
    pub fn transformed(&self, t: &Similarity) -> PointCloud {
        PointCloud {
            positions: self.positions.iter().map(|p| t.apply(*p)).collect(),
            normals: self.normals.clone(),
            normalized: false,
        }
    }

    /// Centers at the centroid and scales into the unit sphere.
    pub fn normalize(&mut self) -> Similarity {
        let t = self.unit_sphere_transform();
        for p in &mut self.positions {
            *p = t.apply(*p);
        }
        // rescale away floating-point overshoot of the max norm
        let r = self.positions.iter().map(|p| vec3::norm(*p)).fold(0.0, f64::max);
        if r > 1.0 {
            for p in &mut self.positions {
                *p = vec3::scale(*p, 1.0 / r);
            }
        }
        self.normalized = true;
        t
    }

    /// Subset of points by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
            normals: idx.iter().map(|&i| self.normals[i]).collect(),
            normalized: false,
        }
    }

    /// Builds a cloud from parts whose normals are known to be unit length.
    pub(crate) fn from_unit_parts(positions: Vec<Vec3>, normals: Vec<Vec3>) -> PointCloud {
        debug_assert_eq!(positions.len(), normals.len());
        PointCloud { positions, normals, normalized: false }
    }

    pub(crate) fn set_normalized(&mut self, v: bool) {
        self.normalized = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    Feature,
}

/// `N x k` neighbor indices, each row sorted by `(distance, index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub k: usize,
    pub indices: Vec<u32>,
    pub metric: Metric,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// Undirected edge list `(i, j)` with `i < j`, the union of both
    /// directions, sorted.
    pub fn symmetric_edges(&self) -> Vec<(u32, u32)> {
        let mut e: Vec<(u32, u32)> = (0..self.len())
            .flat_map(|i| self.row(i).iter().map(move |&j| if (i as u32) < j { (i as u32, j) } else { (j, i as u32) }))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Undirected adjacency lists from [`Self::symmetric_edges`].
    pub fn symmetric_adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.len()];
        for (a, b) in self.symmetric_edges() {
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        adj
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if k >= n {
        return Err(Error::invalid(format!("k = {k} must be smaller than the point count {n}")));
    }
    Ok(())
}

/// Exact Euclidean k-nearest-neighbor graph (self excluded).
pub fn knn(cloud: &PointCloud, k: usize) -> Result<NeighborGraph> {
    knn_points(cloud.positions(), k)
}

pub fn knn_points(points: &[Vec3], k: usize) -> Result<NeighborGraph> {
    check_k(points.len(), k)?;
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite position"));
    }
    let indices = tree_knn(&flat, 3, k);
    Ok(NeighborGraph { k, indices, metric: Metric::Euclidean })
}

fn tree_knn(flat: &[f64], dim: usize, k: usize) -> Vec<u32> {
    let tree = KdTree::new(flat, dim);
    let n = flat.len() / dim;
    let rows: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|i| tree.knn(&flat[i * dim..(i + 1) * dim], k, Some(i as u32)).into_iter().map(|(_, j)| j).collect())
        .collect();
    rows.concat()
}

/// Feature dimensions above which the dense path is used.
const TREE_MAX_DIM: usize = 8;

/// Exact k-nearest-neighbor graph in a `D`-dimensional feature space.
///
/// `features` is row-major `n x d`. Distances are evaluated in `f64`. Low
/// dimensions go through the k-d tree; higher ones through a dense
/// Gram-matrix scan, where tree pruning stops paying off.
pub fn knn_feature<T: Real>(features: &[T], n: usize, d: usize, k: usize) -> Result<NeighborGraph> {
    if d == 0 || features.len() != n * d {
        return Err(Error::invalid(format!("feature buffer of {} values is not {n} x {d}", features.len())));
    }
    check_k(n, k)?;
    let flat: Vec<f64> = features.iter().map(|v| v.f64()).collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite feature entry"));
    }
    let indices = if d <= TREE_MAX_DIM { tree_knn(&flat, d, k) } else { dense_knn(&flat, n, d, k) };
    Ok(NeighborGraph { k, indices, metric: Metric::Feature })
}

fn dense_knn(flat: &[f64], n: usize, d: usize, k: usize) -> Vec<u32> {
    let sq: Vec<f64> = flat.chunks_exact(d).map(|r| r.iter().map(|v| v * v).sum()).collect();
    let mut out = vec![0u32; n * k];
    // process rows in blocks to bound the Gram buffer
    const BLOCK: usize = 256;
    let mut gram = vec![0.0f64; BLOCK * n];
    let mut cand: Vec<(f64, u32)> = Vec::with_capacity(n);
    for b0 in (0..n).step_by(BLOCK) {
        let rows = BLOCK.min(n - b0);
        f64::gemm(rows, d, n, 1.0, &flat[b0 * d..], d, 1, flat, 1, d, 0.0, &mut gram[..rows * n], n, 1);
        for r in 0..rows {
            let i = b0 + r;
            let g = &gram[r * n..(r + 1) * n];
            cand.clear();
            cand.extend((0..n).filter(|&j| j != i).map(|j| ((sq[i] + sq[j] - 2.0 * g[j]).max(0.0), j as u32)));
            let cmp = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if cand.len() > k {
                cand.select_nth_unstable_by(k - 1, cmp);
                cand.truncate(k);
            }
            cand.sort_unstable_by(cmp);
            for (m, &(_, j)) in cand.iter().enumerate() {
                out[i * k + m] = j;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: Vec<Vec3>) -> PointCloud {
        let n = points.len();
        PointCloud::new(points, vec![[0.0, 0.0, 1.0]; n]).unwrap()
    }

    fn oracle(flat: &[f64], dim: usize, k: usize) -> Vec<u32> {
        let n = flat.len() / dim;
        let mut out = Vec::new();
        for i in 0..n {
            let mut all: Vec<(f64, u32)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = (0..dim).map(|a| (flat[i * dim + a] - flat[j * dim + a]).powi(2)).sum();
                    (d, j as u32)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            out.extend(all[..k].iter().map(|e| e.1));
        }
        out
    }

    #[test]
    fn collinear_points() {
        let g = knn(&cloud(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]), 1).unwrap();
        assert_eq!(g.indices, vec![1, 0, 1]);
    }

    #[test]
    fn square_corners_exclude_diagonal() {
        let c = cloud(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]]);
        let g = knn(&c, 2).unwrap();
        assert_eq!(g.row(0), &[1, 3]);
        assert_eq!(g.row(1), &[0, 2]);
        assert_eq!(g.row(2), &[1, 3]);
        assert_eq!(g.row(3), &[0, 2]);
    }

    #[test]
    fn k_too_large_is_rejected() {
        let c = cloud(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(matches!(knn(&c, 2), Err(Error::InvalidArgument(_))));
        assert!(matches!(knn(&c, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn random_cloud_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..256).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let c = cloud(pts);
        let g = knn(&c, 8).unwrap();
        assert_eq!(g.indices, oracle(&c.flat_positions(), 3, 8));
        for i in 0..256 {
            assert!(!g.row(i).contains(&(i as u32)));
        }
    }

    #[test]
    fn feature_knn_equals_euclidean_on_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..100).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let c = cloud(pts);
        let f = c.flat_positions();
        assert_eq!(knn_feature(&f, 100, 3, 6).unwrap().indices, knn(&c, 6).unwrap().indices);
    }

    #[test]
    fn feature_knn_small_cases() {
        let g = knn_feature(&[0.0f64, 10.0, 11.0], 3, 1, 1).unwrap();
        assert_eq!(g.indices, vec![1, 2, 1]);
        assert!(knn_feature(&[0.0f64, f64::NAN, 1.0], 3, 1, 1).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f: Vec<f64> = (0..64 * 16).map(|_| rng.random()).collect();
        assert_eq!(knn_feature(&f, 64, 16, 4).unwrap().indices, oracle(&f, 16, 4));
        let f32s: Vec<f32> = f.iter().map(|&v| v as f32).collect();
        let back: Vec<f64> = f32s.iter().map(|&v| v as f64).collect();
        assert_eq!(knn_feature(&f32s, 64, 16, 4).unwrap().indices, oracle(&back, 16, 4));
    }

    #[test]
    fn normalize_puts_cloud_in_unit_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> =
            (0..50).map(|_| [rng.random::<f64>() * 7.0 + 3.0, rng.random(), -rng.random::<f64>()]).collect();
        let mut c = cloud(pts);
        c.normalize();
        assert!(c.is_normalized());
        let mut cen = [0.0; 3];
        for p in c.positions() {
            cen = vec3::add(cen, *p);
        }
        assert!(vec3::norm(cen) / 50.0 <= 1e-6);
        assert!(c.positions().iter().all(|p| vec3::norm(*p) <= 1.0 + 1e-6));
    }

    #[test]
    fn normals_are_unit_after_construction() {
        let c = PointCloud::new(vec![[0.0; 3]; 2], vec![[3.0, 0.0, 4.0], [0.0, 0.0, -2.0]]).unwrap();
        for n in c.normals() {
            assert!((vec3::norm(*n) - 1.0).abs() <= 1e-6);
        }
        assert!(PointCloud::new(vec![[0.0; 3]], vec![[0.0; 3]]).is_err());
        assert!(PointCloud::new(vec![[f64::INFINITY, 0.0, 0.0]], vec![[0.0, 0.0, 1.0]]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn knn_equals_oracle(seed in any::<u64>(), n in 2usize..512, k in 1usize..16, grid in any::<bool>()) {
            let k = k.min(n - 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // grid-snapped coordinates produce many exact ties
            let pts: Vec<Vec3> = (0..n).map(|_| {
                let mut p = [rng.random::<f64>(), rng.random(), rng.random()];
                if grid { for c in &mut p { *c = (*c * 4.0).floor(); } }
                p
            }).collect();
            let c = cloud(pts);
            prop_assert_eq!(knn(&c, k).unwrap().indices, oracle(&c.flat_positions(), 3, k));
        }
    }
}
