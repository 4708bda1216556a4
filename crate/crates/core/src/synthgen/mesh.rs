//! Labeled triangle meshes and semantic boundary marking.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::generate::compute_epsilon;
use super::poisson::{dart_throw, Sample};
use super::scene::Template;
use super::LabeledCloud;
use crate::cloud::kdtree::KdTree;
use crate::cloud::vec3::{self, Vec3};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::textio::{self, Lines};

/// Triangle soup with one part label per triangle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub triangles: Vec<[Vec3; 3]>,
    pub labels: Vec<i64>,
}

impl Mesh {
    pub fn push(&mut self, tri: [Vec3; 3], label: i64) {
        self.triangles.push(tri);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    fn area_vector(t: &[Vec3; 3]) -> Vec3 {
        vec3::cross(vec3::sub(t[1], t[0]), vec3::sub(t[2], t[0]))
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| 0.5 * vec3::norm(Self::area_vector(t))).sum()
    }

    pub fn distinct_labels(&self) -> Vec<i64> {
        let mut l = self.labels.clone();
        l.sort_unstable();
        l.dedup();
        l
    }

    pub fn rotated(&self, rot: &[f64; 9]) -> Mesh {
        Mesh {
            triangles: self.triangles.iter().map(|t| t.map(|p| vec3::mat_vec(rot, p))).collect(),
            labels: self.labels.clone(),
        }
    }

    /// Quad `a b c d` (counter-clockwise seen from the front) as two triangles.
    pub fn push_quad(&mut self, q: [Vec3; 4], label: i64) {
        self.push([q[0], q[1], q[2]], label);
        self.push([q[0], q[2], q[3]], label);
    }

    /// Axis-aligned box with outward faces; `omit` lists faces as
    /// `(axis, sign)` pairs to leave out where parts touch.
    pub fn push_box(&mut self, center: Vec3, half: Vec3, label: i64, omit: &[(usize, i8)]) {
        for k in 0..3 {
            for s in [1i8, -1] {
                if omit.contains(&(k, s)) {
                    continue;
                }
                let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
                let (a1, a2) = if s > 0 { (k1, k2) } else { (k2, k1) };
                let corner = |x: f64, y: f64| {
                    let mut p = center;
                    p[k] += s as f64 * half[k];
                    p[a1] += x * half[a1];
                    p[a2] += y * half[a2];
                    p
                };
                self.push_quad([corner(-1.0, -1.0), corner(1.0, -1.0), corner(1.0, 1.0), corner(-1.0, 1.0)], label);
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("M1 {}\n", self.len());
        for (t, l) in self.triangles.iter().zip(&self.labels) {
            for p in t {
                for c in p {
                    textio::write_sig(&mut out, *c, 9);
                    out.push(' ');
                }
            }
            out.push_str(&l.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(source: &str, text: &str) -> Result<Mesh> {
        let mut lines = Lines::new(source, text);
        let header = lines.next_fields()?;
        if header.len() != 2 || header[0] != "M1" {
            return Err(lines.error("expected header `M1 <T>`"));
        }
        let n = lines.parse_usize(header[1])?;
        let mut mesh = Mesh::default();
        for _ in 0..n {
            let f = lines.next_fields()?;
            if f.len() != 10 {
                return Err(lines.error(format!("expected 10 columns, found {}", f.len())));
            }
            let mut v = [0.0; 9];
            for (k, tok) in f[..9].iter().enumerate() {
                v[k] = lines.parse_f64(tok)?;
            }
            mesh.push([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]], lines.parse_i64(f[9])?);
        }
        lines.expect_end()?;
        Ok(mesh)
    }
}

pub fn write_m1(path: &Path, mesh: &Mesh) -> Result<()> {
    std::fs::write(path, mesh.to_text()).map_err(Error::from)
}

pub fn read_m1(path: &Path) -> Result<Mesh> {
    Mesh::parse(&textio::source_name(path), &textio::read_file(path)?)
}

/// Poisson-disk samples of a mesh with face normals and face labels, boundary
/// flags set where a differently labeled point lies within epsilon.
pub fn mark_semantic_boundaries(mesh: &Mesh, n_points: usize, seed: u64) -> Result<LabeledCloud> {
    let mut cumulative = Vec::with_capacity(mesh.len());
    let mut normals = Vec::with_capacity(mesh.len());
    let mut total = 0.0;
    for t in &mesh.triangles {
        let a = Mesh::area_vector(t);
        total += 0.5 * vec3::norm(a);
        cumulative.push(total);
        normals.push(vec3::normalize(a));
    }
    if mesh.is_empty() || !(total > 0.0) || normals.iter().any(Option::is_none) {
        return Err(Error::invalid("mesh is empty or has degenerate triangles"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (samples, _) = dart_throw(total, n_points, &mut rng, |rng| {
        let t = rng.random::<f64>() * total;
        let i = cumulative.partition_point(|&c| c <= t).min(mesh.len() - 1);
        let [a, b, c] = mesh.triangles[i];
        let (s, w) = (rng.random::<f64>().sqrt(), rng.random::<f64>());
        let p = vec3::add(vec3::add(vec3::scale(a, 1.0 - s), vec3::scale(b, s * (1.0 - w))), vec3::scale(c, s * w));
        Sample { p, n: normals[i].expect("checked above"), part: mesh.labels[i] }
    })?;
    let mut cloud = PointCloud::new(samples.iter().map(|s| s.p).collect(), samples.iter().map(|s| s.n).collect())?;
    cloud.normalize();
    let eps = compute_epsilon(&cloud)?;
    let labels: Vec<i64> = samples.iter().map(|s| s.part).collect();
    if mesh.distinct_labels().len() < 2 {
        log::warn!("mesh has a single part label; no boundary points marked");
    }
    let data = cloud.flat_positions();
    let tree = KdTree::new(&data, 3);
    let eps2 = eps * eps;
    let boundary = (0..cloud.len())
        .map(|i| {
            tree.any_within(&cloud.positions()[i], eps2, Some(i as u32), |j| labels[j as usize] != labels[i]) as u8
        })
        .collect();
    Ok(LabeledCloud { cloud, labels, boundary, epsilon: eps })
}

/// Randomized, randomly rotated labeled mesh for a semantic template.
pub fn semantic_mesh<R: Rng + ?Sized>(template: Template, rng: &mut R) -> Result<Mesh> {
    let mut m = Mesh::default();
    match template {
        Template::Table => {
            let (w, d, h) = (rng.random_range(0.8..1.2), rng.random_range(0.5..0.9), rng.random_range(0.6..0.9));
            let (top, leg) = (rng.random_range(0.05..0.1), rng.random_range(0.05..0.09));
            m.push_box([0.0, 0.0, h + top], [w, d, top], 0, &[]);
            for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                m.push_box([sx * (w - 2.0 * leg), sy * (d - 2.0 * leg), 0.5 * h], [leg, leg, 0.5 * h], 1, &[(2, 1)]);
            }
        }
        Template::Chair => {
            let (w, h) = (rng.random_range(0.45..0.6), rng.random_range(0.45..0.6));
            let (seat, leg) = (rng.random_range(0.05..0.08), rng.random_range(0.04..0.06));
            let back_h = rng.random_range(0.5..0.8);
            m.push_box([0.0, 0.0, h + seat], [w, w, seat], 0, &[]);
            for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                m.push_box([sx * (w - leg), sy * (w - leg), 0.5 * h], [leg, leg, 0.5 * h], 1, &[(2, 1)]);
            }
            let back_t = rng.random_range(0.04..0.07);
            m.push_box([0.0, -(w - back_t), h + 2.0 * seat + back_h], [w, back_t, back_h], 2, &[(2, -1)]);
        }
        Template::Lamp => {
            let (base_w, base_h) = (rng.random_range(0.3..0.5), rng.random_range(0.04..0.08));
            let (pole_w, pole_h) = (rng.random_range(0.03..0.06), rng.random_range(0.5..0.9));
            let (shade_w, shade_h) = (rng.random_range(0.25..0.45), rng.random_range(0.2..0.35));
            m.push_box([0.0, 0.0, base_h], [base_w, base_w, base_h], 0, &[]);
            let pole_z = 2.0 * base_h + pole_h;
            m.push_box([0.0, 0.0, pole_z], [pole_w, pole_w, pole_h], 1, &[(2, -1), (2, 1)]);
            m.push_box([0.0, 0.0, pole_z + pole_h + shade_h], [shade_w, shade_w, shade_h], 2, &[]);
        }
        t => return Err(Error::invalid(format!("template {} is not semantic", t.name()))),
    }
    Ok(m.rotated(&vec3::random_rotation(rng)))
}

/// Unit square split into a left half (label 0) and two right quarters (1, 2).
pub fn t_junction() -> Mesh {
    let mut m = Mesh::default();
    let q = |x0: f64, x1: f64, y0: f64, y1: f64| [[x0, y0, 0.0], [x1, y0, 0.0], [x1, y1, 0.0], [x0, y1, 0.0]];
    m.push_quad(q(0.0, 0.5, 0.0, 1.0), 0);
    m.push_quad(q(0.5, 1.0, 0.0, 0.5), 1);
    m.push_quad(q(0.5, 1.0, 0.5, 1.0), 2);
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_flags(lc: &LabeledCloud) -> Vec<u8> {
        let p = lc.cloud.positions();
        (0..p.len())
            .map(|i| {
                (0..p.len()).any(|j| {
                    j != i && lc.labels[j] != lc.labels[i] && vec3::dist2(p[i], p[j]) <= lc.epsilon * lc.epsilon
                }) as u8
            })
            .collect()
    }

    #[test]
    fn abutting_squares_flag_both_sides_of_the_seam() {
        let mut m = Mesh::default();
        m.push_quad([[-1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 1.0, 0.0]], 1);
        m.push_quad([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]], 2);
        let lc = mark_semantic_boundaries(&m, 400, 1).unwrap();
        assert_eq!(lc.boundary, brute_flags(&lc));
        let p = lc.cloud.positions();
        // the seam is the plane through the centroid-shifted x = 0 line
        let seam_x = {
            let left = (0..p.len()).filter(|&i| lc.labels[i] == 1).map(|i| p[i][0]).fold(f64::MIN, f64::max);
            let right = (0..p.len()).filter(|&i| lc.labels[i] == 2).map(|i| p[i][0]).fold(f64::MAX, f64::min);
            0.5 * (left + right)
        };
        let sides: Vec<bool> =
            (1..=2).map(|l| (0..p.len()).any(|i| lc.labels[i] == l && lc.boundary[i] == 1)).collect();
        assert_eq!(sides, vec![true, true]);
        for i in 0..p.len() {
            if lc.boundary[i] == 1 {
                assert!((p[i][0] - seam_x).abs() <= lc.epsilon + 1e-9);
            }
        }
    }

    #[test]
    fn single_label_cube_has_no_boundary() {
        let mut m = Mesh::default();
        m.push_box([0.0; 3], [1.0; 3], 4, &[]);
        let lc = mark_semantic_boundaries(&m, 300, 2).unwrap();
        assert_eq!(lc.boundary_count(), 0);
    }

    #[test]
    fn t_junction_matches_oracle_and_is_symmetric() {
        let lc = mark_semantic_boundaries(&t_junction(), 600, 3).unwrap();
        assert_eq!(lc.boundary, brute_flags(&lc));
        assert_eq!(lc.cloud.positions().len(), lc.labels.len());
        let p = lc.cloud.positions();
        for i in 0..p.len() {
            for j in 0..p.len() {
                if lc.labels[i] != lc.labels[j] && vec3::dist2(p[i], p[j]) <= lc.epsilon * lc.epsilon {
                    assert!(lc.boundary[i] == 1 && lc.boundary[j] == 1);
                }
            }
        }
        let mut labels = lc.labels.clone();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn box_faces_point_outward() {
        let mut m = Mesh::default();
        m.push_box([1.0, 2.0, 3.0], [0.5, 0.25, 1.0], 0, &[]);
        assert_eq!(m.len(), 12);
        assert!((m.area() - 2.0 * (0.5 + 2.0 + 1.0)).abs() < 1e-12);
        for t in &m.triangles {
            let c = vec3::scale(vec3::add(vec3::add(t[0], t[1]), t[2]), 1.0 / 3.0);
            assert!(vec3::dot(Mesh::area_vector(t), vec3::sub(c, [1.0, 2.0, 3.0])) > 0.0);
        }
    }

    #[test]
    fn semantic_templates_have_multiple_labels_and_minority_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for t in [Template::Table, Template::Chair, Template::Lamp] {
            let m = semantic_mesh(t, &mut rng).unwrap();
            assert!(m.distinct_labels().len() >= 2);
            let lc = mark_semantic_boundaries(&m, 1024, 7).unwrap();
            let nb = lc.boundary_count();
            assert!(nb > 0 && 2 * nb < lc.boundary.len(), "{} {nb}", t.name());
        }
        assert!(semantic_mesh(Template::Box, &mut rng).is_err());
    }

    #[test]
    fn m1_round_trip() {
        let m = t_junction();
        let text = m.to_text();
        let back = Mesh::parse("m", &text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
        assert!(Mesh::parse("m", "M1 1\n0 0 0 1 0 0 0 1 0\n").is_err());
        assert!(Mesh::parse("m", "M2 0\n").is_err());
    }
}
