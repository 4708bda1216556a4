use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::vec3::{self, Vec3};
use super::PointCloud;

/// Gaussian position jitter plus a bounded random tilt of every normal.
///
/// Each position gets iid `N(0, sigma^2)` per axis. Each normal is rotated
/// about a random axis in its tangent plane by an angle drawn from
/// `N(0, (limit/2)^2)` and truncated to `[-limit, limit]` degrees.
pub fn perturb(cloud: &PointCloud, sigma: f64, angle_limit_deg: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = sigma.max(0.0);
    let limit = angle_limit_deg.max(0.0);
    let angle_dist = (limit > 0.0).then(|| Normal::new(0.0, limit / 2.0).expect("positive std"));
    let mut positions = Vec::with_capacity(cloud.len());
    let mut normals = Vec::with_capacity(cloud.len());
    for (&p, &n) in cloud.positions().iter().zip(cloud.normals()) {
        let jitter: Vec3 =
            [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
        positions.push(vec3::add(p, vec3::scale(jitter, sigma)));
        let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let out = match &angle_dist {
            None => n,
            Some(dist) => {
                let angle = loop {
                    let a: f64 = dist.sample(&mut rng);
                    if a.abs() <= limit {
                        break a;
                    }
                };
                let t1 = vec3::any_orthogonal(n);
                let t2 = vec3::cross(n, t1);
                let axis = vec3::add(vec3::scale(t1, phi.cos()), vec3::scale(t2, phi.sin()));
                let r = vec3::rotate_about(n, axis, angle.to_radians());
                vec3::normalize(r).unwrap_or(n)
            }
        };
        normals.push(out);
    }
    let mut c = PointCloud::from_unit_parts(positions, normals);
    c.set_normalized(false);
    c
}
