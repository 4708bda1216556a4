use std::sync::Arc;

use super::params::ParamSet;
use super::tensor::{matmul, Tensor};
use crate::error::{Error, Result};
use crate::Real;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.5;
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    GatherAdd { a: Var, b: Var, idx: Arc<Vec<u32>>, k: usize },
    EdgeFeatures { x: Var, idx: Arc<Vec<u32>>, frames: Arc<Vec<T>>, s: usize, k: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T>, train: bool },
    LeakyRelu(Var),
    GroupMax { x: Var, arg: Vec<u32> },
    SegmentMax { x: Var, arg: Vec<u32> },
    SegmentBroadcast { x: Var, offsets: Arc<Vec<usize>> },
    Concat(Vec<Var>),
    Sigmoid(Var),
    Softmax(Var),
    WeightedBce { p: Var, targets: Vec<u8>, wpos: Vec<T>, wneg: Vec<T> },
    CrossEntropy { p: Var, labels: Vec<usize>, weights: Vec<T> },
    Sum(Var),
    Transform3 { p: Var, m: Var, offsets: Arc<Vec<usize>> },
    InverseTranspose3(Var),
    NormalizeRows(Var),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b) | Op::AddRow(a, b) | Op::Add(a, b) | Op::Sub(a, b) => vec![*a, *b],
            Op::GatherAdd { a, b, .. } => vec![*a, *b],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Scale(x, _)
            | Op::LeakyRelu(x)
            | Op::Sigmoid(x)
            | Op::Softmax(x)
            | Op::Sum(x)
            | Op::EdgeFeatures { x, .. }
            | Op::GroupMax { x, .. }
            | Op::SegmentMax { x, .. }
            | Op::SegmentBroadcast { x, .. }
            | Op::InverseTranspose3(x)
            | Op::NormalizeRows(x) => vec![*x],
            Op::WeightedBce { p, .. } | Op::CrossEntropy { p, .. } => vec![*p],
            Op::Concat(parts) => parts.clone(),
            Op::Transform3 { p, m, .. } => vec![*p, *m],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    /// False when no parameter or differentiable input reaches this node;
    /// backward skips such nodes.
    grad: bool,
}

/// Batch statistics observed by a train-mode batch-norm node.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningUpdate<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Reverse-mode tape. Nodes are appended in topological order.
pub struct Graph<T: Real> {
    mode: Mode,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    updates: Vec<RunningUpdate<T>>,
    backward_done: bool,
}

fn clamp_prob<T: Real>(p: T) -> (T, bool) {
    let (lo, hi) = (T::c(PROB_CLAMP), T::c(1.0 - PROB_CLAMP));
    if p < lo {
        (lo, false)
    } else if p > hi {
        (hi, false)
    } else {
        (p, true)
    }
}

fn check_offsets(offsets: &[usize], rows: usize) -> Result<()> {
    if offsets.len() < 2 || offsets[0] != 0 || *offsets.last().unwrap() != rows {
        return Err(Error::invalid(format!("segment offsets must run from 0 to {rows}")));
    }
    if offsets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("segments must be nonempty"));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Graph { mode, nodes: Vec::new(), grads: Vec::new(), updates: Vec::new(), backward_done: false }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let grad = match &op {
            Op::Leaf | Op::Param(_) => true,
            op => op.inputs().iter().any(|v| self.nodes[v.0].grad),
        };
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the loss with respect to an input or parameter `v`, after
    /// [`Self::backward`]. Intermediate gradients are released during the pass.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn running_updates(&self) -> &[RunningUpdate<T>] {
        &self.updates
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Input that receives no gradient; operations depending only on
    /// constants are skipped during backward.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let v = self.push(t, Op::Leaf);
        self.nodes[v.0].grad = false;
        v
    }

    /// Records a parameter; its gradient is merged by [`Self::accumulate_into`].
    pub fn param(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        let value = params.value(name)?.clone();
        Ok(self.push(value, Op::Param(name.to_string())))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ([m, k], [k2, n]) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::invalid(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(m, n, out)?, Op::MatMul(a, b)))
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let ([m, n], bs) = (self.shape(x), self.shape(b));
        if bs != [1, n] {
            return Err(Error::invalid(format!("row bias {bs:?} for {m}x{n}")));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(n) {
            for (o, &c) in row.iter_mut().zip(&bias) {
                *o += c;
            }
        }
        Ok(self.push(Tensor::new(m, n, out)?, Op::AddRow(x, b)))
    }

    /// `x @ w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    fn zip_same(&mut self, a: Var, b: Var, sign: T) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::invalid(format!("elementwise shapes {sa:?} and {sb:?}")));
        }
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + sign * y).collect();
        Tensor::new(sa[0], sa[1], out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, T::one())?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, -T::one())?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let [m, n] = self.shape(x);
        let out = self.value(x).data().iter().map(|&v| v * c).collect();
        self.push(Tensor::new(m, n, out).expect("same shape"), Op::Scale(x, c))
    }

    /// `out[r] = a[r / k] + b[idx[r]]`: the affine map of an edge input
    /// `(x_i, x_j - x_i)` split into per-point terms.
    pub fn gather_add(&mut self, a: Var, b: Var, idx: Arc<Vec<u32>>, k: usize) -> Result<Var> {
        let ([n, m], [nb, mb]) = (self.shape(a), self.shape(b));
        if m != mb || k == 0 || idx.len() != n * k {
            return Err(Error::invalid(format!("gather_add: a {n}x{m}, b {nb}x{mb}, {} indices, k={k}", idx.len())));
        }
        if idx.iter().any(|&j| j as usize >= nb) {
            return Err(Error::invalid("gather_add: neighbor index out of range"));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * k * m);
        for (r, &j) in idx.iter().enumerate() {
            let (ai, bj) = (&av[(r / k) * m..(r / k + 1) * m], &bv[j as usize * m..(j as usize + 1) * m]);
            out.extend(ai.iter().zip(bj).map(|(&x, &y)| x + y));
        }
        Ok(self.push(Tensor::new(n * k, m, out)?, Op::GatherAdd { a, b, idx, k }))
    }

    /// Edge inputs `(x_i, R_{i,s}^T (x_j - x_i))` with the rotation applied per
    /// 3-column block. `frames` holds `n * s` row-major `R^T` matrices (rows
    /// `u, v, n`). Output rows are ordered `(i, s, j)`.
    pub fn edge_features(
        &mut self,
        x: Var,
        idx: Arc<Vec<u32>>,
        frames: Arc<Vec<T>>,
        s: usize,
        k: usize,
    ) -> Result<Var> {
        let [n, c] = self.shape(x);
        if c % 3 != 0 || s == 0 || k == 0 || idx.len() != n * k || frames.len() != n * s * 9 {
            return Err(Error::invalid(format!(
                "edge_features: x {n}x{c}, {} indices, {} frame values, s={s}, k={k}",
                idx.len(),
                frames.len()
            )));
        }
        if idx.iter().any(|&j| j as usize >= n) {
            return Err(Error::invalid("edge_features: neighbor index out of range"));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * s * k * 2 * c);
        for i in 0..n {
            let xi = &xv[i * c..(i + 1) * c];
            for f in 0..s {
                let r = &frames[(i * s + f) * 9..(i * s + f + 1) * 9];
                for &j in &idx[i * k..(i + 1) * k] {
                    let xj = &xv[j as usize * c..(j as usize + 1) * c];
                    out.extend_from_slice(xi);
                    for blk in 0..c / 3 {
                        let d = [
                            xj[3 * blk] - xi[3 * blk],
                            xj[3 * blk + 1] - xi[3 * blk + 1],
                            xj[3 * blk + 2] - xi[3 * blk + 2],
                        ];
                        for row in 0..3 {
                            out.push(r[3 * row] * d[0] + r[3 * row + 1] * d[1] + r[3 * row + 2] * d[2]);
                        }
                    }
                }
            }
        }
        Ok(self.push(Tensor::new(n * s * k, 2 * c, out)?, Op::EdgeFeatures { x, idx, frames, s, k }))
    }

    /// Per-column batch normalization. Train mode normalizes with the batch
    /// statistics (biased variance) and records them under `name`; eval mode
    /// uses the running buffers `name.mean` / `name.var`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, name: &str, params: &ParamSet<T>) -> Result<Var> {
        let [rows, m] = self.shape(x);
        if self.shape(gamma) != [1, m] || self.shape(beta) != [1, m] {
            return Err(Error::invalid(format!("batch_norm affine shapes do not match {m} columns")));
        }
        let train = self.mode == Mode::Train;
        let xv = self.value(x).data();
        let (mean, var) = if train {
            if rows < 2 {
                return Err(Error::invalid("train-mode batch_norm needs at least 2 rows"));
            }
            // single pass in f64, shifted by the first row against cancellation
            let shift: Vec<f64> = xv[..m].iter().map(|v| v.f64()).collect();
            let mut sum = vec![0.0f64; m];
            let mut sq = vec![0.0f64; m];
            for row in xv.chunks_exact(m) {
                for (((s, q), &v), &h) in sum.iter_mut().zip(sq.iter_mut()).zip(row).zip(&shift) {
                    let d = v.f64() - h;
                    *s += d;
                    *q += d * d;
                }
            }
            let nr = rows as f64;
            let mean: Vec<T> = (0..m).map(|c| T::c(shift[c] + sum[c] / nr)).collect();
            let var: Vec<T> = (0..m).map(|c| T::c((sq[c] / nr - (sum[c] / nr).powi(2)).max(0.0))).collect();
            (mean, var)
        } else {
            let mean = params.buffer(&format!("{name}.mean"))?.data().to_vec();
            let var = params.buffer(&format!("{name}.var"))?.data().to_vec();
            if mean.len() != m || var.len() != m {
                return Err(Error::invalid(format!("running statistics for {name} have the wrong width")));
            }
            (mean, var)
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::c(BN_EPS)).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let scale: Vec<T> = (0..m).map(|c| g[c] * inv_std[c]).collect();
        let offset: Vec<T> = (0..m).map(|c| b[c] - mean[c] * scale[c]).collect();
        let mut out = vec![T::zero(); rows * m];
        for (orow, row) in out.chunks_exact_mut(m).zip(xv.chunks_exact(m)) {
            for (((o, &v), &sc), &of) in orow.iter_mut().zip(row).zip(&scale).zip(&offset) {
                *o = v * sc + of;
            }
        }
        let mean_saved = mean.clone();
        if train {
            self.updates.push(RunningUpdate { name: name.to_string(), mean, var });
        }
        Ok(self.push(Tensor::new(rows, m, out)?, Op::BatchNorm { x, gamma, beta, mean: mean_saved, inv_std, train }))
    }

    pub fn leaky_relu(&mut self, x: Var) -> Var {
        let [m, n] = self.shape(x);
        let s = T::c(LEAKY_SLOPE);
        // branch-free: max(v, 0) + s * min(v, 0)
        let out = self.value(x).data().iter().map(|&v| v.max(T::zero()) + s * v.min(T::zero())).collect();
        self.push(Tensor::new(m, n, out).expect("same shape"), Op::LeakyRelu(x))
    }

    fn column_max(xv: &[T], m: usize, rows: std::ops::Range<usize>, out: &mut Vec<T>, arg: &mut Vec<u32>) {
        let start = out.len();
        out.extend_from_slice(&xv[rows.start * m..(rows.start + 1) * m]);
        arg.extend(std::iter::repeat_n(rows.start as u32, m));
        let (best, idx) = (&mut out[start..], &mut arg[start..]);
        for r in rows.start + 1..rows.end {
            let ru = r as u32;
            for ((b, a), &v) in best.iter_mut().zip(idx.iter_mut()).zip(&xv[r * m..(r + 1) * m]) {
                // strict comparison keeps the lowest index on ties; selects stay branch-free
                let gt = v > *b;
                *b = if gt { v } else { *b };
                *a = if gt { ru } else { *a };
            }
        }
    }

    /// Column-wise max over consecutive groups of `group` rows.
    pub fn group_max(&mut self, x: Var, group: usize) -> Result<Var> {
        let [rows, m] = self.shape(x);
        if group == 0 || rows % group != 0 {
            return Err(Error::invalid(format!("group_max: {rows} rows not divisible by {group}")));
        }
        let xv = self.value(x).data();
        let (mut out, mut arg) = (Vec::with_capacity(rows / group * m), Vec::with_capacity(rows / group * m));
        for i in 0..rows / group {
            Self::column_max(xv, m, i * group..(i + 1) * group, &mut out, &mut arg);
        }
        Ok(self.push(Tensor::new(rows / group, m, out)?, Op::GroupMax { x, arg }))
    }

    /// Column-wise max over each segment `offsets[s]..offsets[s + 1]`.
    pub fn segment_max(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let [rows, m] = self.shape(x);
        check_offsets(offsets, rows)?;
        let xv = self.value(x).data();
        let segs = offsets.len() - 1;
        let (mut out, mut arg) = (Vec::with_capacity(segs * m), Vec::with_capacity(segs * m));
        for w in offsets.windows(2) {
            Self::column_max(xv, m, w[0]..w[1], &mut out, &mut arg);
        }
        Ok(self.push(Tensor::new(segs, m, out)?, Op::SegmentMax { x, arg }))
    }

    /// Repeats row `s` over the rows of segment `s`.
    pub fn segment_broadcast(&mut self, x: Var, offsets: Arc<Vec<usize>>) -> Result<Var> {
        let [segs, m] = self.shape(x);
        let rows = *offsets.last().unwrap_or(&0);
        check_offsets(&offsets, rows)?;
        if offsets.len() - 1 != segs {
            return Err(Error::invalid(format!("segment_broadcast: {segs} rows for {} segments", offsets.len() - 1)));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(rows * m);
        for (s, w) in offsets.windows(2).enumerate() {
            for _ in w[0]..w[1] {
                out.extend_from_slice(&xv[s * m..(s + 1) * m]);
            }
        }
        Ok(self.push(Tensor::new(rows, m, out)?, Op::SegmentBroadcast { x, offsets }))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.shape(p)[0]).ok_or_else(|| Error::invalid("concat of nothing"))?;
        if parts.iter().any(|&p| self.shape(p)[0] != rows) {
            return Err(Error::invalid("concat: row counts differ"));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Tensor::new(rows, cols, out)?, Op::Concat(parts.to_vec())))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let [m, n] = self.shape(x);
        let out = self.value(x).data().iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect();
        self.push(Tensor::new(m, n, out).expect("same shape"), Op::Sigmoid(x))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let [m, n] = self.shape(x);
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        self.push(Tensor::new(m, n, out).expect("same shape"), Op::Softmax(x))
    }

    /// `-sum_i [wpos_i t_i log b_i + wneg_i (1 - t_i) log(1 - b_i)]` with `b`
    /// clamped to `[1e-7, 1 - 1e-7]`.
    pub fn weighted_bce(&mut self, p: Var, targets: &[u8], wpos: &[T], wneg: &[T]) -> Result<Var> {
        let [n, c] = self.shape(p);
        if c != 1 || targets.len() != n || wpos.len() != n || wneg.len() != n {
            return Err(Error::invalid(format!("weighted_bce: probabilities {n}x{c}, {} targets", targets.len())));
        }
        if targets.iter().any(|&t| t > 1) {
            return Err(Error::invalid("weighted_bce: targets must be 0 or 1"));
        }
        let pv = self.value(p).data();
        let mut loss = T::zero();
        for i in 0..n {
            let (b, _) = clamp_prob(pv[i]);
            loss -= if targets[i] == 1 { wpos[i] * b.ln() } else { wneg[i] * (T::one() - b).ln() };
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedBce { p, targets: targets.to_vec(), wpos: wpos.to_vec(), wneg: wneg.to_vec() },
        ))
    }

    /// `-sum_i w_i log p[i, label_i]` with the same clamping as the boundary loss.
    pub fn cross_entropy(&mut self, p: Var, labels: &[usize], weights: &[T]) -> Result<Var> {
        let [n, l] = self.shape(p);
        if labels.len() != n || weights.len() != n || labels.iter().any(|&y| y >= l) {
            return Err(Error::invalid(format!("cross_entropy: {n}x{l} probabilities, {} labels", labels.len())));
        }
        let pv = self.value(p).data();
        let mut loss = T::zero();
        for i in 0..n {
            loss -= weights[i] * clamp_prob(pv[i * l + labels[i]]).0.ln();
        }
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { p, labels: labels.to_vec(), weights: weights.to_vec() }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// `out_r = M_s p_r` for rows `r` of segment `s`, with `M_s` row-major in `m`.
    pub fn transform3(&mut self, p: Var, m: Var, offsets: Arc<Vec<usize>>) -> Result<Var> {
        let ([n, c], [segs, mc]) = (self.shape(p), self.shape(m));
        check_offsets(&offsets, n)?;
        if c != 3 || mc != 9 || segs != offsets.len() - 1 {
            return Err(Error::invalid(format!("transform3: points {n}x{c}, matrices {segs}x{mc}")));
        }
        let (pv, mv) = (self.value(p).data(), self.value(m).data());
        let mut out = Vec::with_capacity(n * 3);
        for (s, w) in offsets.windows(2).enumerate() {
            let mat = &mv[s * 9..(s + 1) * 9];
            for r in w[0]..w[1] {
                let q = &pv[r * 3..r * 3 + 3];
                for a in 0..3 {
                    out.push(mat[3 * a] * q[0] + mat[3 * a + 1] * q[1] + mat[3 * a + 2] * q[2]);
                }
            }
        }
        Ok(self.push(Tensor::new(n, 3, out)?, Op::Transform3 { p, m, offsets }))
    }

    /// `M^{-T}` for every row-major 3x3 matrix stored as a row of `m`.
    pub fn inverse_transpose3(&mut self, m: Var) -> Result<Var> {
        let [segs, mc] = self.shape(m);
        if mc != 9 {
            return Err(Error::invalid(format!("inverse_transpose3 needs 9 columns, got {mc}")));
        }
        let mut out = Vec::with_capacity(segs * 9);
        for (s, row) in self.value(m).data().chunks_exact(9).enumerate() {
            let mat = nalgebra::Matrix3::from_row_slice(&row.iter().map(|v| v.f64()).collect::<Vec<_>>());
            let inv = mat
                .try_inverse()
                .filter(|i| i.iter().all(|v| v.is_finite()))
                .ok_or_else(|| Error::numeric(format!("matrix {s} is singular")))?;
            // row-major storage of inv^T is column-major storage of inv
            out.extend(inv.as_slice().iter().map(|&v| T::c(v)));
        }
        Ok(self.push(Tensor::new(segs, 9, out)?, Op::InverseTranspose3(m)))
    }

    /// Scales every row to unit Euclidean length.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let [n, c] = self.shape(x);
        let mut out = Vec::with_capacity(n * c);
        for (r, row) in self.value(x).data().chunks_exact(c).enumerate() {
            let len = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if !(len > T::zero()) || !len.is_finite() {
                return Err(Error::numeric(format!("row {r} cannot be normalized")));
            }
            out.extend(row.iter().map(|&v| v / len));
        }
        Ok(self.push(Tensor::new(n, c, out)?, Op::NormalizeRows(x)))
    }

    /// Reverse pass from a scalar loss; may run once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::state("backward already ran on this graph"));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::state("backward called before the loss was recorded"));
        }
        if self.shape(loss) != [1, 1] {
            return Err(Error::invalid(format!("loss must be a scalar, got {:?}", self.shape(loss))));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let (lo, hi) = self.grads.split_at_mut(i);
            let Some(g) = hi[0].as_deref() else { continue };
            if !self.nodes[i].grad {
                continue;
            }
            backprop(&self.nodes, i, g, lo);
            // intermediate gradients are dead once propagated
            if !matches!(self.nodes[i].op, Op::Leaf | Op::Param(_)) {
                hi[0] = None;
            }
        }
        Ok(())
    }

    /// Adds parameter gradients into `params` in recording order.
    pub fn accumulate_into(&self, params: &mut ParamSet<T>) -> Result<()> {
        if !self.backward_done {
            return Err(Error::state("accumulate_into called before backward"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(name), Some(g)) = (&node.op, &self.grads[i]) {
                params.add_grad(name, g)?;
            }
        }
        Ok(())
    }
}

fn slot<'a, T: Real>(lo: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> &'a mut Vec<T> {
    lo[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.data().len()])
}

fn backprop<T: Real>(nodes: &[Node<T>], i: usize, g: &[T], lo: &mut [Option<Vec<T>>]) {
    let node = &nodes[i];
    let [rows, cols] = node.value.shape();
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf | Op::Param(_) => {}
        Op::MatMul(a, b) => {
            let ([m, k], n) = (val(*a).shape(), cols);
            let (av, bv) = (val(*a).data(), val(*b).data());
            if nodes[a.0].grad {
                let ga = slot(lo, nodes, *a);
                T::gemm(m, n, k, T::one(), g, n, 1, bv, 1, n, T::one(), ga, k, 1);
            }
            if nodes[b.0].grad {
                let gb = slot(lo, nodes, *b);
                T::gemm(k, m, n, T::one(), av, 1, k, g, n, 1, T::one(), gb, n, 1);
            }
        }
        Op::AddRow(x, b) => {
            slot(lo, nodes, *x).iter_mut().zip(g).for_each(|(a, &v)| *a += v);
            let gb = slot(lo, nodes, *b);
            for row in g.chunks_exact(cols) {
                gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
            slot(lo, nodes, *a).iter_mut().zip(g).for_each(|(s, &v)| *s += v);
            slot(lo, nodes, *b).iter_mut().zip(g).for_each(|(s, &v)| *s += sign * v);
        }
        Op::Scale(x, c) => slot(lo, nodes, *x).iter_mut().zip(g).for_each(|(s, &v)| *s += *c * v),
        Op::GatherAdd { a, b, idx, k } => {
            let m = cols;
            {
                let ga = slot(lo, nodes, *a);
                for (r, row) in g.chunks_exact(m).enumerate() {
                    let dst = &mut ga[(r / k) * m..(r / k + 1) * m];
                    dst.iter_mut().zip(row).for_each(|(s, &v)| *s += v);
                }
            }
            let gb = slot(lo, nodes, *b);
            for (row, &j) in g.chunks_exact(m).zip(idx.iter()) {
                let dst = &mut gb[j as usize * m..(j as usize + 1) * m];
                dst.iter_mut().zip(row).for_each(|(s, &v)| *s += v);
            }
        }
        Op::EdgeFeatures { x, idx, frames, s, k } => {
            let c = val(*x).cols();
            let n = val(*x).rows();
            let gx = slot(lo, nodes, *x);
            let mut r = 0;
            for i in 0..n {
                for f in 0..*s {
                    let rt = &frames[(i * s + f) * 9..(i * s + f + 1) * 9];
                    for &j in &idx[i * k..(i + 1) * k] {
                        let row = &g[r * 2 * c..(r + 1) * 2 * c];
                        for q in 0..c {
                            gx[i * c + q] += row[q];
                        }
                        for blk in 0..c / 3 {
                            let h = &row[c + 3 * blk..c + 3 * blk + 3];
                            for col in 0..3 {
                                // R h, with R the transpose of the stored R^T
                                let d = rt[col] * h[0] + rt[3 + col] * h[1] + rt[6 + col] * h[2];
                                gx[j as usize * c + 3 * blk + col] += d;
                                gx[i * c + 3 * blk + col] -= d;
                            }
                        }
                        r += 1;
                    }
                }
            }
        }
        Op::BatchNorm { x, gamma, beta, mean, inv_std, train } => {
            let m = cols;
            let gam = val(*gamma).data();
            let xv = val(*x).data();
            // xhat is recomputed rather than stored
            let mut sum_g = vec![T::zero(); m];
            let mut sum_gx = vec![T::zero(); m];
            for (row, xrow) in g.chunks_exact(m).zip(xv.chunks_exact(m)) {
                for ((((sg, sgx), &gv), &xc), (&mu, &is)) in
                    sum_g.iter_mut().zip(sum_gx.iter_mut()).zip(row).zip(xrow).zip(mean.iter().zip(inv_std))
                {
                    *sg += gv;
                    *sgx += gv * ((xc - mu) * is);
                }
            }
            let scale: Vec<T> = (0..m).map(|c| gam[c] * inv_std[c]).collect();
            {
                let gx = slot(lo, nodes, *x);
                if *train {
                    let nr = T::c(rows as f64);
                    let a: Vec<T> = (0..m).map(|c| sum_g[c] / nr).collect();
                    let b: Vec<T> = (0..m).map(|c| sum_gx[c] * inv_std[c] / nr).collect();
                    for ((dst, row), xrow) in gx.chunks_exact_mut(m).zip(g.chunks_exact(m)).zip(xv.chunks_exact(m)) {
                        for ((((d, &gv), &xc), (&sc, &mu)), (&ac, &bc)) in
                            dst.iter_mut().zip(row).zip(xrow).zip(scale.iter().zip(mean)).zip(a.iter().zip(&b))
                        {
                            *d += sc * (gv - ac - (xc - mu) * bc);
                        }
                    }
                } else {
                    for (dst, row) in gx.chunks_exact_mut(m).zip(g.chunks_exact(m)) {
                        for ((d, &gv), &sc) in dst.iter_mut().zip(row).zip(&scale) {
                            *d += sc * gv;
                        }
                    }
                }
            }
            slot(lo, nodes, *gamma).iter_mut().zip(&sum_gx).for_each(|(s, &v)| *s += v);
            slot(lo, nodes, *beta).iter_mut().zip(&sum_g).for_each(|(s, &v)| *s += v);
        }
        Op::LeakyRelu(x) => {
            let s = T::c(LEAKY_SLOPE);
            let xv = val(*x).data();
            for ((d, &v), &xi) in slot(lo, nodes, *x).iter_mut().zip(g).zip(xv) {
                *d += v * if xi > T::zero() { T::one() } else { s };
            }
        }
        Op::GroupMax { x, arg } | Op::SegmentMax { x, arg } => {
            let gx = slot(lo, nodes, *x);
            for (grow, arow) in g.chunks_exact(cols).zip(arg.chunks_exact(cols)) {
                for (c, (&v, &r)) in grow.iter().zip(arow).enumerate() {
                    gx[r as usize * cols + c] += v;
                }
            }
        }
        Op::SegmentBroadcast { x, offsets } => {
            let gx = slot(lo, nodes, *x);
            for (s, w) in offsets.windows(2).enumerate() {
                for r in w[0]..w[1] {
                    let row = &g[r * cols..(r + 1) * cols];
                    gx[s * cols..(s + 1) * cols].iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                }
            }
        }
        Op::Concat(parts) => {
            let mut off = 0;
            for &p in parts {
                let pc = val(p).cols();
                let gp = slot(lo, nodes, p);
                for r in 0..rows {
                    let src = &g[r * cols + off..r * cols + off + pc];
                    gp[r * pc..(r + 1) * pc].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                }
                off += pc;
            }
        }
        Op::Sigmoid(x) => {
            let y = node.value.data();
            for ((d, &v), &yi) in slot(lo, nodes, *x).iter_mut().zip(g).zip(y) {
                *d += v * yi * (T::one() - yi);
            }
        }
        Op::Softmax(x) => {
            let y = node.value.data();
            let gx = slot(lo, nodes, *x);
            for ((dst, grow), yrow) in gx.chunks_exact_mut(cols).zip(g.chunks_exact(cols)).zip(y.chunks_exact(cols)) {
                let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                for c in 0..cols {
                    dst[c] += yrow[c] * (grow[c] - dot);
                }
            }
        }
        Op::WeightedBce { p, targets, wpos, wneg } => {
            let pv = val(*p).data();
            let gp = slot(lo, nodes, *p);
            for i in 0..pv.len() {
                let (b, inside) = clamp_prob(pv[i]);
                if inside {
                    gp[i] += g[0] * if targets[i] == 1 { -wpos[i] / b } else { wneg[i] / (T::one() - b) };
                }
            }
        }
        Op::CrossEntropy { p, labels, weights } => {
            let l = val(*p).cols();
            let pv = val(*p).data();
            let gp = slot(lo, nodes, *p);
            for (i, &y) in labels.iter().enumerate() {
                let (b, inside) = clamp_prob(pv[i * l + y]);
                if inside {
                    gp[i * l + y] -= g[0] * weights[i] / b;
                }
            }
        }
        Op::Sum(x) => slot(lo, nodes, *x).iter_mut().for_each(|d| *d += g[0]),
        Op::InverseTranspose3(m) => {
            // Y = M^-T  =>  dL/dM = -Y G^T Y
            let y = node.value.data();
            let gm = slot(lo, nodes, *m);
            for ((dst, yr), gr) in gm.chunks_exact_mut(9).zip(y.chunks_exact(9)).zip(g.chunks_exact(9)) {
                for a in 0..3 {
                    for b in 0..3 {
                        let mut acc = T::zero();
                        for p in 0..3 {
                            for q in 0..3 {
                                acc += yr[3 * a + p] * gr[3 * q + p] * yr[3 * q + b];
                            }
                        }
                        dst[3 * a + b] -= acc;
                    }
                }
            }
        }
        Op::NormalizeRows(x) => {
            let y = node.value.data();
            let xv = val(*x).data();
            let gx = slot(lo, nodes, *x);
            for (((dst, yr), gr), xr) in
                gx.chunks_exact_mut(cols).zip(y.chunks_exact(cols)).zip(g.chunks_exact(cols)).zip(xv.chunks_exact(cols))
            {
                let len = xr.iter().map(|&v| v * v).sum::<T>().sqrt();
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for ((d, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
                    *d += (gv - yv * dot) / len;
                }
            }
        }
        Op::Transform3 { p, m, offsets } => {
            let (pv, mv) = (val(*p).data(), val(*m).data());
            {
                let gp = slot(lo, nodes, *p);
                for (s, w) in offsets.windows(2).enumerate() {
                    let mat = &mv[s * 9..(s + 1) * 9];
                    for r in w[0]..w[1] {
                        for b in 0..3 {
                            gp[r * 3 + b] += mat[b] * g[r * 3] + mat[3 + b] * g[r * 3 + 1] + mat[6 + b] * g[r * 3 + 2];
                        }
                    }
                }
            }
            let gm = slot(lo, nodes, *m);
            for (s, w) in offsets.windows(2).enumerate() {
                for r in w[0]..w[1] {
                    for a in 0..3 {
                        for b in 0..3 {
                            gm[s * 9 + 3 * a + b] += g[r * 3 + a] * pv[r * 3 + b];
                        }
                    }
                }
            }
        }
    }
}
