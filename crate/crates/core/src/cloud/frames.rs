//! Per-point local coordinate frames `R_i = [u v n]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::vec3::{self, Vec3};
use super::PointCloud;
use crate::{Error, Result};

/// Orthonormal frame with columns `[u, v, n]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub u: Vec3,
    pub v: Vec3,
    pub n: Vec3,
}

impl LocalFrame {
    /// Expresses a global vector in this frame: `R^T d`.
    #[inline]
    pub fn to_local(&self, d: Vec3) -> Vec3 {
        [vec3::dot(self.u, d), vec3::dot(self.v, d), vec3::dot(self.n, d)]
    }

    /// Row-major `R` (columns u, v, n).
    pub fn matrix(&self) -> [f64; 9] {
        [
            self.u[0], self.v[0], self.n[0], //
            self.u[1], self.v[1], self.n[1], //
            self.u[2], self.v[2], self.n[2],
        ]
    }

    pub fn det(&self) -> f64 {
        vec3::dot(self.u, vec3::cross(self.v, self.n))
    }

    /// Frame with both tangents negated (still right-handed).
    pub fn flipped(&self) -> LocalFrame {
        LocalFrame { u: vec3::scale(self.u, -1.0), v: vec3::scale(self.v, -1.0), n: self.n }
    }

    /// Frame from a normal and a tangent hint; `v = n x u`.
    pub fn from_normal_and_hint(n: Vec3, hint: Vec3) -> Option<LocalFrame> {
        let u = vec3::normalize(vec3::sub(hint, vec3::scale(n, vec3::dot(hint, n))))?;
        Some(LocalFrame { u, v: vec3::cross(n, u), n })
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for one point, keyed on its content so that a permutation of the
/// cloud permutes the draws identically.
fn point_seed(seed: u64, p: Vec3, n: Vec3) -> u64 {
    let mut h = splitmix(seed);
    for c in p.iter().chain(n.iter()) {
        h = splitmix(h ^ c.to_bits());
    }
    h
}

/// One random 3-vector per point, rejected while nearly parallel to the normal.
pub fn tangent_draws(cloud: &PointCloud, seed: u64) -> Vec<Vec3> {
    cloud
        .positions()
        .iter()
        .zip(cloud.normals())
        .map(|(&p, &n)| {
            let mut rng = ChaCha8Rng::seed_from_u64(point_seed(seed, p, n));
            loop {
                let r: Vec3 =
                    [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
                if let Some(rh) = vec3::normalize(r) {
                    if vec3::dot(rh, n).abs() <= 0.99 {
                        return r;
                    }
                }
            }
        })
        .collect()
}

/// Frames from explicit tangent draws (Gram-Schmidt against the normal).
pub fn frames_from_draws(cloud: &PointCloud, draws: &[Vec3]) -> Result<Vec<LocalFrame>> {
    if draws.len() != cloud.len() {
        return Err(Error::invalid("one tangent draw per point required"));
    }
    cloud
        .normals()
        .iter()
        .zip(draws)
        .enumerate()
        .map(|(i, (&n, &r))| {
            if (vec3::norm(n) - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("normal {i} is not unit length")));
            }
            LocalFrame::from_normal_and_hint(n, r)
                .ok_or_else(|| Error::invalid(format!("tangent draw {i} is parallel to the normal")))
        })
        .collect()
}

/// Seeded random tangent frames; a pure function of `(cloud, seed)`.
pub fn build_local_frames(cloud: &PointCloud, seed: u64) -> Result<Vec<LocalFrame>> {
    frames_from_draws(cloud, &tangent_draws(cloud, seed))
}
