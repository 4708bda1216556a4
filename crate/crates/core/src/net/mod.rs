//! Boundary network: a first graph layer (EdgeConv or a local-frame
//! variant), two dynamic EdgeConv layers, a global descriptor and a per-point
//! head producing boundary probabilities or part distributions.

mod config;

pub use config::{FirstLayer, NetConfig};

use std::sync::Arc;

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{batch_norm_if_present, Graph, Mode, ParamSet, Tensor, Var};
use crate::cloud::{build_local_frames, estimate_principal_directions, knn, knn_feature, LocalFrame, PointCloud};
use crate::error::{Error, Result};
use crate::Real;

const STN_EDGE_WIDTH: usize = 64;
const STN_FC_WIDTH: usize = 128;

/// Output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// One sigmoid probability per point.
    Boundary,
    /// Softmax over this many labels per point.
    Parts(usize),
}

impl Head {
    fn width(self) -> usize {
        match self {
            Head::Boundary => 1,
            Head::Parts(l) => l,
        }
    }
}

fn insert_layer(
    ps: &mut ParamSet<f64>,
    name: &str,
    din: usize,
    dout: usize,
    bn: bool,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    ps.insert_uniform(&format!("{name}.w"), din, dout, rng)?;
    ps.insert(&format!("{name}.b"), Tensor::zeros(1, dout))?;
    if bn {
        ps.insert_batch_norm(&format!("{name}.bn"), dout)?;
    }
    Ok(())
}

/// First layer split into centre and difference weights, as used by
/// [`edgeconv`]; further layers are plain.
fn insert_edgeconv(
    ps: &mut ParamSet<f64>,
    prefix: &str,
    din: usize,
    widths: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    use rand::Rng;
    let bound = 1.0 / ((2 * din) as f64).sqrt();
    for part in ["wc", "wd"] {
        let data = (0..din * widths[0]).map(|_| rng.random_range(-bound..bound)).collect();
        ps.insert(&format!("{prefix}.l0.{part}"), Tensor::new(din, widths[0], data)?)?;
    }
    ps.insert(&format!("{prefix}.l0.b"), Tensor::zeros(1, widths[0]))?;
    ps.insert_batch_norm(&format!("{prefix}.l0.bn"), widths[0])?;
    for i in 1..widths.len() {
        insert_layer(ps, &format!("{prefix}.l{i}"), widths[i - 1], widths[i], true, rng)?;
    }
    Ok(())
}

/// Deterministic initialization; identical values for every precision.
pub fn init_params<T: Real>(config: &NetConfig, head: Head, seed: u64) -> Result<ParamSet<T>> {
    config.validate()?;
    if let Head::Parts(l) = head {
        if l < 2 {
            return Err(Error::invalid("a part head needs at least 2 labels"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::<f64>::new();
    if config.spatial_transform {
        insert_edgeconv(&mut ps, "stn.ec", 3, &[STN_EDGE_WIDTH], &mut rng)?;
        insert_layer(&mut ps, "stn.fc.l0", STN_EDGE_WIDTH, STN_FC_WIDTH, true, &mut rng)?;
        ps.insert("stn.out.w", Tensor::zeros(STN_FC_WIDTH, 9))?;
        ps.insert("stn.out.b", Tensor::from_f64(1, 9, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])?)?;
    }
    let c = config.input_dim();
    match config.first_layer {
        FirstLayer::EdgeConv => insert_edgeconv(&mut ps, "first", c, &config.first_widths, &mut rng)?,
        FirstLayer::LocalEdgeConv | FirstLayer::LocalEdgeConvCurv => {
            let mut d = 2 * c;
            for (i, &w) in config.first_widths.iter().enumerate() {
                insert_layer(&mut ps, &format!("first.l{i}"), d, w, true, &mut rng)?;
                d = w;
            }
        }
    }
    insert_edgeconv(&mut ps, "ec2", *config.first_widths.last().unwrap(), &config.ec2_widths, &mut rng)?;
    insert_edgeconv(&mut ps, "ec3", *config.ec2_widths.last().unwrap(), &config.ec3_widths, &mut rng)?;
    let pd = config.point_dim();
    insert_layer(&mut ps, "global.l0", pd, config.global_width, true, &mut rng)?;
    let h0 = config.head_widths[0];
    ps.insert_uniform("head.l0.wp", pd, h0, &mut rng)?;
    ps.insert_uniform("head.l0.wg", config.global_width, h0, &mut rng)?;
    ps.insert("head.l0.b", Tensor::zeros(1, h0))?;
    ps.insert_batch_norm("head.l0.bn", h0)?;
    for i in 1..config.head_widths.len() {
        insert_layer(&mut ps, &format!("head.l{i}"), config.head_widths[i - 1], config.head_widths[i], true, &mut rng)?;
    }
    insert_layer(&mut ps, "head.out", *config.head_widths.last().unwrap(), head.width(), false, &mut rng)?;
    Ok(ps.cast())
}

/// Linear, batch norm and leaky rectifier for `prefix.l{start..}`.
fn dense_layers<T: Real>(
    g: &mut Graph<T>,
    mut h: Var,
    params: &ParamSet<T>,
    prefix: &str,
    start: usize,
) -> Result<Var> {
    let mut i = start;
    while params.contains(&format!("{prefix}.l{i}.w")) {
        let w = g.param(params, &format!("{prefix}.l{i}.w"))?;
        let b = g.param(params, &format!("{prefix}.l{i}.b"))?;
        h = g.linear(h, w, b)?;
        h = batch_norm_if_present(g, h, params, &format!("{prefix}.l{i}.bn"))?;
        h = g.leaky_relu(h);
        i += 1;
    }
    Ok(h)
}

/// `y_i = max_j MLP(x_i, x_j - x_i)` over the `k` neighbors in `idx` (row
/// `i` occupies `idx[i k..(i + 1) k]`).
pub fn edgeconv<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    idx: Arc<Vec<u32>>,
    k: usize,
    params: &ParamSet<T>,
    prefix: &str,
) -> Result<Var> {
    let wc = g.param(params, &format!("{prefix}.l0.wc"))?;
    let wd = g.param(params, &format!("{prefix}.l0.wd"))?;
    let b = g.param(params, &format!("{prefix}.l0.b"))?;
    if g.value(x).cols() != g.value(wc).rows() {
        return Err(Error::invalid(format!("{prefix}: feature width {} does not match parameters", g.value(x).cols())));
    }
    // (x_i, x_j - x_i) W = x_i (Wc - Wd) + x_j Wd
    let centre = g.sub(wc, wd)?;
    let a = g.matmul(x, centre)?;
    let a = g.add_row(a, b)?;
    let nb = g.matmul(x, wd)?;
    let e = g.gather_add(a, nb, idx, k)?;
    let e = batch_norm_if_present(g, e, params, &format!("{prefix}.l0.bn"))?;
    let e = g.leaky_relu(e);
    let e = dense_layers(g, e, params, prefix, 1)?;
    g.group_max(e, k)
}

/// `y_i = max_{s, j} MLP(x_i, R_{i,s}^T (x_j - x_i))` with the rotation
/// applied per 3-column block; `frames` holds `s` row-major `R^T` per point.
#[allow(clippy::too_many_arguments)]
pub fn local_edgeconv<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    frames: Arc<Vec<T>>,
    s: usize,
    idx: Arc<Vec<u32>>,
    k: usize,
    params: &ParamSet<T>,
    prefix: &str,
) -> Result<Var> {
    let e = g.edge_features(x, idx, frames, s, k)?;
    let e = dense_layers(g, e, params, prefix, 0)?;
    g.group_max(e, s * k)
}

/// Row-major `R^T` (rows `u, v, n`) per frame.
pub fn frame_rows<T: Real>(frames: &[LocalFrame]) -> Vec<T> {
    frames.iter().flat_map(|f| [f.u, f.v, f.n]).flatten().map(T::c).collect()
}

/// Frames for the first layer: `s` per point, concatenated per point.
pub fn first_layer_frames<T: Real>(cloud: &PointCloud, config: &NetConfig, seed: u64) -> Result<Vec<T>> {
    match config.first_layer {
        FirstLayer::EdgeConv => Ok(Vec::new()),
        FirstLayer::LocalEdgeConv => Ok(frame_rows(&build_local_frames(cloud, seed)?)),
        FirstLayer::LocalEdgeConvCurv => {
            let pf = estimate_principal_directions(cloud, config.curvature_k.min(cloud.len() - 1), seed)?;
            let frames: Vec<LocalFrame> = pf
                .iter()
                .zip(cloud.normals())
                .flat_map(|(p, &n)| {
                    let f = p.frame(n);
                    [f, f.flipped()]
                })
                .collect();
            Ok(frame_rows(&frames))
        }
    }
}

fn offsets_of(clouds: &[&PointCloud]) -> Arc<Vec<usize>> {
    let mut off = vec![0];
    for c in clouds {
        off.push(off.last().unwrap() + c.len());
    }
    Arc::new(off)
}

fn euclidean_indices(clouds: &[&PointCloud], offsets: &[usize], k: usize) -> Result<Arc<Vec<u32>>> {
    let mut idx = Vec::with_capacity(offsets.last().unwrap() * k);
    for (c, &off) in clouds.iter().zip(offsets) {
        idx.extend(knn(c, k)?.indices.iter().map(|&j| j + off as u32));
    }
    Ok(Arc::new(idx))
}

/// Per-cloud k-nearest neighbors in the feature space of `x`.
pub fn feature_indices<T: Real>(g: &Graph<T>, x: Var, offsets: &[usize], k: usize) -> Result<Arc<Vec<u32>>> {
    let t = g.value(x);
    let d = t.cols();
    let mut idx = Vec::with_capacity(t.rows() * k);
    for w in offsets.windows(2) {
        let graph = knn_feature(&t.data()[w[0] * d..w[1] * d], w[1] - w[0], d, k)?;
        idx.extend(graph.indices.iter().map(|&j| j + w[0] as u32));
    }
    Ok(Arc::new(idx))
}

fn stack<T: Real>(rows: usize, cols: usize, it: impl Iterator<Item = f64>) -> Result<Tensor<T>> {
    Tensor::new(rows, cols, it.map(T::c).collect())
}

/// Predicted 3x3 matrices (row-major, one row per cloud).
fn stn_matrices<T: Real>(
    g: &mut Graph<T>,
    p: Var,
    idx: Arc<Vec<u32>>,
    k: usize,
    offsets: &[usize],
    params: &ParamSet<T>,
) -> Result<Var> {
    let h = edgeconv(g, p, idx, k, params, "stn.ec")?;
    let h = dense_layers(g, h, params, "stn.fc", 0)?;
    let h = g.segment_max(h, offsets)?;
    let w = g.param(params, "stn.out.w")?;
    let b = g.param(params, "stn.out.b")?;
    g.linear(h, w, b)
}

/// Applies `m` to positions and normals (renormalized). The network learns
/// `m` as an alignment, so normals follow it like directions rather than
/// through the inverse transpose; this keeps the normal features on the tape.
/// Positions map through `M`, normals through `M^{-T}` (renormalized by
/// the cloud constructor).
fn apply_matrix(cloud: &PointCloud, m: &[f64]) -> Result<PointCloud> {
    let mat = Matrix3::from_row_slice(m);
    let normal_map = mat.try_inverse().ok_or_else(|| Error::numeric("predicted transform is singular"))?.transpose();
    let pos = cloud.positions().iter().map(|p| {
        let v = mat * nalgebra::Vector3::new(p[0], p[1], p[2]);
        [v[0], v[1], v[2]]
    });
    let nor = cloud.normals().iter().map(|n| {
        let v = normal_map * nalgebra::Vector3::new(n[0], n[1], n[2]);
        [v[0], v[1], v[2]]
    });
    PointCloud::new(pos.collect(), nor.collect())
}

struct Backbone {
    points: Var,
    global: Var,
    offsets: Arc<Vec<usize>>,
}

fn backbone<T: Real>(
    g: &mut Graph<T>,
    clouds: &[&PointCloud],
    frame_seeds: &[u64],
    config: &NetConfig,
    params: &ParamSet<T>,
) -> Result<Backbone> {
    config.validate()?;
    if clouds.is_empty() || clouds.len() != frame_seeds.len() {
        return Err(Error::invalid("need one frame seed per cloud and at least one cloud"));
    }
    let k = config.k;
    if let Some(c) = clouds.iter().find(|c| c.len() <= k) {
        return Err(Error::invalid(format!("cloud of {} points is too small for k = {k}", c.len())));
    }
    let offsets = offsets_of(clouds);
    let total = *offsets.last().unwrap();
    let raw_pos = stack::<T>(total, 3, clouds.iter().flat_map(|c| c.positions().iter().flatten().copied()))?;
    let mut pos = g.constant(raw_pos);

    let mut nor = if config.use_normals {
        Some(g.constant(stack::<T>(total, 3, clouds.iter().flat_map(|c| c.normals().iter().flatten().copied()))?))
    } else {
        None
    };

    // Neighbor search and frames see the transformed cloud but are treated
    // as constants of the step, like the neighbor indices themselves.
    let transformed: Vec<PointCloud>;
    let clouds: Vec<&PointCloud> = if config.spatial_transform {
        let idx = euclidean_indices(clouds, &offsets, k)?;
        let m = stn_matrices(g, pos, idx, k, &offsets, params)?;
        pos = g.transform3(pos, m, offsets.clone())?;
        if let Some(n) = nor {
            let mit = g.inverse_transpose3(m)?;
            let tn = g.transform3(n, mit, offsets.clone())?;
            nor = Some(g.normalize_rows(tn)?);
        }
        let mv = g.value(m).to_f64();
        transformed =
            clouds.iter().enumerate().map(|(s, c)| apply_matrix(c, &mv[s * 9..(s + 1) * 9])).collect::<Result<_>>()?;
        transformed.iter().collect()
    } else {
        clouds.to_vec()
    };

    let x = match nor {
        Some(n) => g.concat(&[pos, n])?,
        None => pos,
    };
    let idx = euclidean_indices(&clouds, &offsets, k)?;
    let f1 = match config.first_layer {
        FirstLayer::EdgeConv => edgeconv(g, x, idx, k, params, "first")?,
        kind => {
            let mut frames = Vec::with_capacity(total * 9 * kind.frame_count());
            for (c, &seed) in clouds.iter().zip(frame_seeds) {
                frames.extend(first_layer_frames::<T>(c, config, seed)?);
            }
            local_edgeconv(g, x, Arc::new(frames), kind.frame_count(), idx, k, params, "first")?
        }
    };
    let idx2 = feature_indices(g, f1, &offsets, k)?;
    let f2 = edgeconv(g, f1, idx2, k, params, "ec2")?;
    let idx3 = feature_indices(g, f2, &offsets, k)?;
    let f3 = edgeconv(g, f2, idx3, k, params, "ec3")?;
    let points = g.concat(&[f1, f2, f3])?;
    let h = dense_layers(g, points, params, "global", 0)?;
    let global = g.segment_max(h, &offsets)?;
    Ok(Backbone { points, global, offsets })
}

fn head_logits<T: Real>(g: &mut Graph<T>, bb: &Backbone, params: &ParamSet<T>) -> Result<Var> {
    let wp = g.param(params, "head.l0.wp")?;
    let wg = g.param(params, "head.l0.wg")?;
    let b = g.param(params, "head.l0.b")?;
    // [points, tiled global] W = points Wp + tile(global Wg)
    let local = g.matmul(bb.points, wp)?;
    let glob = g.matmul(bb.global, wg)?;
    let glob = g.segment_broadcast(glob, bb.offsets.clone())?;
    let h = g.add(local, glob)?;
    let h = g.add_row(h, b)?;
    let h = batch_norm_if_present(g, h, params, "head.l0.bn")?;
    let h = g.leaky_relu(h);
    let h = dense_layers(g, h, params, "head", 1)?;
    let w = g.param(params, "head.out.w")?;
    let b = g.param(params, "head.out.b")?;
    g.linear(h, w, b)
}

/// Boundary probabilities (`N_total x 1`) for a batch of clouds stacked in order.
pub fn forward_boundary<T: Real>(
    g: &mut Graph<T>,
    clouds: &[&PointCloud],
    frame_seeds: &[u64],
    config: &NetConfig,
    params: &ParamSet<T>,
) -> Result<Var> {
    let bb = backbone(g, clouds, frame_seeds, config, params)?;
    let z = head_logits(g, &bb, params)?;
    if g.value(z).cols() != 1 {
        return Err(Error::invalid("parameters carry a part head, not a boundary head"));
    }
    Ok(g.sigmoid(z))
}

/// Per-point label distributions (`N_total x n_labels`).
pub fn forward_parts<T: Real>(
    g: &mut Graph<T>,
    clouds: &[&PointCloud],
    frame_seeds: &[u64],
    config: &NetConfig,
    params: &ParamSet<T>,
    n_labels: usize,
) -> Result<Var> {
    let bb = backbone(g, clouds, frame_seeds, config, params)?;
    let z = head_logits(g, &bb, params)?;
    if n_labels < 2 || g.value(z).cols() != n_labels {
        return Err(Error::invalid(format!("parameters do not carry a {n_labels}-label head")));
    }
    Ok(g.softmax(z))
}

/// Eval-mode boundary probabilities for one cloud.
pub fn predict_boundary<T: Real>(
    cloud: &PointCloud,
    config: &NetConfig,
    params: &ParamSet<T>,
    frame_seed: u64,
) -> Result<Vec<f64>> {
    let mut g = Graph::new(Mode::Eval);
    let p = forward_boundary(&mut g, &[cloud], &[frame_seed], config, params)?;
    Ok(g.value(p).to_f64())
}

/// Eval-mode label distributions for one cloud, row-major `N x n_labels`.
pub fn predict_parts<T: Real>(
    cloud: &PointCloud,
    config: &NetConfig,
    params: &ParamSet<T>,
    n_labels: usize,
    frame_seed: u64,
) -> Result<Vec<f64>> {
    let mut g = Graph::new(Mode::Eval);
    let p = forward_parts(&mut g, &[cloud], &[frame_seed], config, params, n_labels)?;
    Ok(g.value(p).to_f64())
}

/// Eval-mode output of the spatial transformer block.
pub fn spatial_transform<T: Real>(cloud: &PointCloud, config: &NetConfig, params: &ParamSet<T>) -> Result<PointCloud> {
    if !config.spatial_transform {
        return Err(Error::invalid("spatial transformer is disabled in this configuration"));
    }
    let m = predicted_matrix(cloud, config, params)?;
    apply_matrix(cloud, &m)
}

/// The 3x3 matrix (row-major) the spatial transformer predicts for `cloud`.
pub fn predicted_matrix<T: Real>(cloud: &PointCloud, config: &NetConfig, params: &ParamSet<T>) -> Result<Vec<f64>> {
    let mut g = Graph::new(Mode::Eval);
    let offsets = offsets_of(&[cloud]);
    let pos = g.constant(stack::<T>(cloud.len(), 3, cloud.positions().iter().flatten().copied())?);
    let idx = euclidean_indices(&[cloud], &offsets, config.k)?;
    let m = stn_matrices(&mut g, pos, idx, config.k, &offsets, params)?;
    Ok(g.value(m).to_f64())
}
