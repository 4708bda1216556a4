//! Principal curvature directions from a least-squares quadric height field.
//!
//! For each point, the k-neighborhood is expressed in its PCA frame and
//! `h(x, y) = a x^2 + b xy + c y^2 + d x + e y + f` is fitted. The shape
//! operator of the fitted surface at the origin gives the principal
//! directions, which are projected onto the tangent plane of the point's
//! normal. Degenerate fits (rank loss, or flat neighborhoods where the
//! directions are undefined) fall back to seeded random tangents.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};

use super::frames::{tangent_draws, LocalFrame};
use super::vec3::{self, Vec3};
use super::{knn, PointCloud};
use crate::{Error, Result};

/// Ordered tangent pair: `dir1` has the larger absolute curvature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrincipalFrame {
    pub dir1: Vec3,
    pub dir2: Vec3,
    /// Curvatures along `dir1` and `dir2`.
    pub curvatures: [f64; 2],
    /// True when the fit was degenerate and random tangents were used.
    pub fallback: bool,
}

impl PrincipalFrame {
    pub fn frame(&self, normal: Vec3) -> LocalFrame {
        LocalFrame { u: self.dir1, v: self.dir2, n: normal }
    }
}

/// Curvature magnitude (times neighborhood radius) below which a
/// neighborhood counts as flat.
const FLAT_EPS: f64 = 1e-6;

pub fn estimate_principal_directions(cloud: &PointCloud, k: usize, seed: u64) -> Result<Vec<PrincipalFrame>> {
    if k < 6 {
        return Err(Error::invalid("quadric fit needs k >= 6"));
    }
    let graph = knn(cloud, k)?;
    let draws = tangent_draws(cloud, seed);
    let mut out = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        let p = cloud.positions()[i];
        let n = cloud.normals()[i];
        let nbrs: Vec<Vec3> = graph.row(i).iter().map(|&j| vec3::sub(cloud.positions()[j as usize], p)).collect();
        let fit = fit_point(&nbrs, n);
        out.push(match fit {
            Some(f) => f,
            None => {
                let fr = LocalFrame::from_normal_and_hint(n, draws[i]).expect("draw not parallel to normal");
                PrincipalFrame { dir1: fr.u, dir2: fr.v, curvatures: [0.0, 0.0], fallback: true }
            }
        });
    }
    Ok(out)
}

fn fit_point(rel: &[Vec3], n: Vec3) -> Option<PrincipalFrame> {
    // PCA over the neighborhood including the center point
    let m = rel.len() + 1;
    let mut mean = [0.0; 3];
    for d in rel {
        mean = vec3::add(mean, *d);
    }
    mean = vec3::scale(mean, 1.0 / m as f64);
    let mut cov = Matrix3::<f64>::zeros();
    for d in rel.iter().chain(std::iter::once(&[0.0; 3])) {
        let c = Vector3::from(vec3::sub(*d, mean));
        cov += c * c.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let col = |i: usize| -> Vec3 { [eig.eigenvectors[(0, i)], eig.eigenvectors[(1, i)], eig.eigenvectors[(2, i)]] };
    let mut e3 = col(order[0]);
    if vec3::dot(e3, n) < 0.0 {
        e3 = vec3::scale(e3, -1.0);
    }
    let t1 = vec3::normalize(col(order[2]))?;
    let t2 = vec3::cross(e3, t1);

    let scale = rel.iter().map(|d| vec3::norm(*d)).sum::<f64>() / rel.len() as f64;
    if scale <= 0.0 || !scale.is_finite() {
        return None;
    }
    let mut a = DMatrix::<f64>::zeros(m, 6);
    let mut rhs = DVector::<f64>::zeros(m);
    for (r, d) in rel.iter().chain(std::iter::once(&[0.0; 3])).enumerate() {
        let x = vec3::dot(*d, t1) / scale;
        let y = vec3::dot(*d, t2) / scale;
        let z = vec3::dot(*d, e3) / scale;
        let row = [x * x, x * y, y * y, x, y, 1.0];
        for (c, v) in row.iter().enumerate() {
            a[(r, c)] = *v;
        }
        rhs[r] = z;
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin / smax < 1e-10 {
        return None;
    }
    let coef = svd.solve(&rhs, 1e-14).ok()?;
    // undo the coordinate scaling: z/s = a'(x/s)^2 + ...  =>  a = a'/s, d = d'
    let (qa, qb, qc) = (coef[0] / scale, coef[1] / scale, coef[2] / scale);
    let (hd, he) = (coef[3], coef[4]);

    let e = 1.0 + hd * hd;
    let f = hd * he;
    let g = 1.0 + he * he;
    let w = (1.0 + hd * hd + he * he).sqrt();
    let (l2, m2, n2) = (2.0 * qa / w, qb / w, 2.0 * qc / w);
    // shape operator S = I^-1 II
    let det = e * g - f * f;
    let s = [(g * l2 - f * m2) / det, (g * m2 - f * n2) / det, (e * m2 - f * l2) / det, (e * n2 - f * m2) / det];
    let (k1, k2, w1) = eig2(s);
    let (kmax, kmin) = if k1.abs() >= k2.abs() { (k1, k2) } else { (k2, k1) };
    if kmax.abs() * scale < FLAT_EPS {
        return None;
    }
    let w_max = if k1.abs() >= k2.abs() { w1 } else { eig_vec(s, k2) };
    let xu = vec3::add(t1, vec3::scale(e3, hd));
    let xv = vec3::add(t2, vec3::scale(e3, he));
    let t = vec3::add(vec3::scale(xu, w_max[0]), vec3::scale(xv, w_max[1]));
    let dir1 = vec3::normalize(vec3::sub(t, vec3::scale(n, vec3::dot(t, n))))?;
    let dir2 = vec3::cross(n, dir1);
    Some(PrincipalFrame { dir1, dir2, curvatures: [kmax, kmin], fallback: false })
}

/// Eigenvalues of a 2x2 row-major matrix with real spectrum, plus the
/// eigenvector of the first.
fn eig2(s: [f64; 4]) -> (f64, f64, [f64; 2]) {
    let tr = s[0] + s[3];
    let half = 0.5 * (s[0] - s[3]);
    let disc = (half * half + s[1] * s[2]).max(0.0).sqrt();
    let l1 = 0.5 * tr + disc;
    let l2 = 0.5 * tr - disc;
    (l1, l2, eig_vec(s, l1))
}

fn eig_vec(s: [f64; 4], l: f64) -> [f64; 2] {
    let a = [s[1], l - s[0]];
    let b = [l - s[3], s[2]];
    let na = a[0].hypot(a[1]);
    let nb = b[0].hypot(b[1]);
    if na.max(nb) < 1e-14 {
        return [1.0, 0.0];
    }
    if na >= nb {
        [a[0] / na, a[1] / na]
    } else {
        [b[0] / nb, b[1] / nb]
    }
}
