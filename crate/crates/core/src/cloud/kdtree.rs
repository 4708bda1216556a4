//! Exact k-d tree over points of arbitrary dimension stored in a flat buffer.
//!
//! Results are ordered by `(squared distance, index)`, so ties resolve to the
//! smaller index on every platform.

use std::cmp::Ordering;

const LEAF_SIZE: usize = 8;

#[derive(Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug)]
pub struct KdTree<'a> {
    data: &'a [f64],
    dim: usize,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

#[inline]
fn key_lt(a: (f64, u32), b: (f64, u32)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Bounded, sorted candidate list for k-nearest queries.
struct Best {
    k: usize,
    items: Vec<(f64, u32)>,
}

impl Best {
    fn new(k: usize) -> Self {
        Best { k, items: Vec::with_capacity(k + 1) }
    }

    #[inline]
    fn bound(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    #[inline]
    fn offer(&mut self, cand: (f64, u32)) {
        if self.items.len() == self.k {
            if !key_lt(cand, self.items[self.k - 1]) {
                return;
            }
            self.items.pop();
        }
        let pos = self.items.partition_point(|&e| key_lt(e, cand));
        self.items.insert(pos, cand);
    }
}

impl<'a> KdTree<'a> {
    /// Builds a balanced tree over `data.len() / dim` points.
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        assert!(dim >= 1 && data.len() % dim == 0, "flat buffer must hold whole points");
        let n = data.len() / dim;
        let mut tree = KdTree { data, dim, order: (0..n as u32).collect(), nodes: Vec::new() };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    #[inline]
    fn point(&self, i: u32) -> &[f64] {
        let s = i as usize * self.dim;
        &self.data[s..s + self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split along the axis of largest spread
        let mut axis = 0;
        let mut best_spread = -1.0;
        for a in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.data[i as usize * self.dim + a];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                axis = a;
            }
        }
        let mid = start + (end - start) / 2;
        let (data, dim) = (self.data, self.dim);
        self.order[start..end].select_nth_unstable_by(mid - start, |&x, &y| {
            let vx = data[x as usize * dim + axis];
            let vy = data[y as usize * dim + axis];
            vx.partial_cmp(&vy).unwrap_or(Ordering::Equal).then(x.cmp(&y))
        });
        let value = data[self.order[mid] as usize * dim + axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// The `k` nearest points to `query`, skipping index `exclude` if given.
    /// Returns `(squared distance, index)` pairs in ascending order.
    pub fn knn(&self, query: &[f64], k: usize, exclude: Option<u32>) -> Vec<(f64, u32)> {
        let mut best = Best::new(k);
        if k > 0 && !self.nodes.is_empty() {
            self.knn_rec(0, query, exclude, &mut best);
        }
        best.items
    }

    fn knn_rec(&self, node: usize, q: &[f64], exclude: Option<u32>, best: &mut Best) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let d = sq_dist(q, self.point(i));
                    best.offer((d, i));
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, exclude, best);
                if diff * diff <= best.bound() {
                    self.knn_rec(far, q, exclude, best);
                }
            }
        }
    }

    /// Nearest point `(squared distance, index)`, or `None` on an empty tree.
    pub fn nearest(&self, query: &[f64]) -> Option<(f64, u32)> {
        self.knn(query, 1, None).into_iter().next()
    }

    /// True if some point other than `exclude` lies within squared radius `r2`
    /// and satisfies `accept`.
    pub fn any_within<F: Fn(u32) -> bool>(&self, query: &[f64], r2: f64, exclude: Option<u32>, accept: F) -> bool {
        !self.nodes.is_empty() && self.any_rec(0, query, r2, exclude, &accept)
    }

    fn any_rec<F: Fn(u32) -> bool>(&self, node: usize, q: &[f64], r2: f64, exclude: Option<u32>, accept: &F) -> bool {
        match self.nodes[node] {
            Node::Leaf { start, end } => self.order[start..end]
                .iter()
                .any(|&i| Some(i) != exclude && sq_dist(q, self.point(i)) <= r2 && accept(i)),
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.any_rec(near, q, r2, exclude, accept)
                    || (diff * diff <= r2 && self.any_rec(far, q, r2, exclude, accept))
            }
        }
    }

    /// All indices within squared radius `r2`, ascending by index.
    pub fn within(&self, query: &[f64], r2: f64) -> Vec<u32> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.within_rec(0, query, r2, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn within_rec(&self, node: usize, q: &[f64], r2: f64, out: &mut Vec<u32>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(self.order[start..end].iter().copied().filter(|&i| sq_dist(q, self.point(i)) <= r2));
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.within_rec(near, q, r2, out);
                if diff * diff <= r2 {
                    self.within_rec(far, q, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(data: &[f64], dim: usize, q: &[f64], k: usize, ex: Option<u32>) -> Vec<(f64, u32)> {
        let n = data.len() / dim;
        let mut all: Vec<(f64, u32)> = (0..n as u32)
            .filter(|&i| Some(i) != ex)
            .map(|i| (sq_dist(q, &data[i as usize * dim..(i as usize + 1) * dim]), i))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force_in_several_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in [1, 2, 3, 7] {
            let n = 300;
            let data: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
            let t = KdTree::new(&data, dim);
            for i in 0..n {
                let q = &data[i * dim..(i + 1) * dim];
                assert_eq!(t.knn(q, 5, Some(i as u32)), brute(&data, dim, q, 5, Some(i as u32)));
            }
        }
    }

    #[test]
    fn ties_go_to_smaller_index() {
        // grid with many equal distances
        let mut data = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                data.extend_from_slice(&[x as f64, y as f64]);
            }
        }
        let t = KdTree::new(&data, 2);
        for i in 0..36u32 {
            let q = &data[i as usize * 2..i as usize * 2 + 2];
            assert_eq!(t.knn(q, 6, Some(i)), brute(&data, 2, q, 6, Some(i)));
        }
    }

    #[test]
    fn radius_queries() {
        let data = [0.0, 1.0, 3.0, 3.5];
        let t = KdTree::new(&data, 1);
        assert_eq!(t.within(&[0.9], 0.01 + 1e-12), vec![1]);
        assert_eq!(t.within(&[3.2], 0.3 * 0.3 + 1e-12), vec![2, 3]);
        assert!(t.any_within(&[0.0], 1.0, Some(0), |_| true));
        assert!(!t.any_within(&[0.0], 1.0, Some(0), |i| i != 1));
        assert_eq!(t.nearest(&[2.9]), Some(((3.0f64 - 2.9).powi(2), 2)));
    }
}
