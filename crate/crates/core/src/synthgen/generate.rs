//! Labeled cloud generation from primitive scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::poisson::{dart_throw, Sample, SceneSampler};
use super::scene::PrimitiveScene;
use super::LabeledCloud;
use crate::cloud::kdtree::KdTree;
use crate::cloud::vec3::Vec3;
use crate::cloud::{perturb, PointCloud, Similarity};
use crate::error::{Error, Result};

/// Position and normal noise applied to evaluation clouds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseProfile {
    pub sigma: f64,
    pub angle_limit_deg: f64,
}

impl NoiseProfile {
    pub const NONE: NoiseProfile = NoiseProfile { sigma: 0.0, angle_limit_deg: 0.0 };
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile { sigma: 0.005, angle_limit_deg: 3.0 }
    }
}

fn flat(points: &[Vec3]) -> Vec<f64> {
    points.iter().flatten().copied().collect()
}

/// Largest nearest-neighbor distance over a point set.
pub fn epsilon_of_points(points: &[Vec3]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid(format!("epsilon needs at least 2 points, got {}", points.len())));
    }
    let data = flat(points);
    let tree = KdTree::new(&data, 3);
    let d2 = (0..points.len())
        .into_par_iter()
        .map(|i| tree.knn(&points[i], 1, Some(i as u32))[0].0)
        .reduce(|| 0.0, f64::max);
    Ok(d2.sqrt())
}

/// Sampling tolerance: the maximum over points of the nearest-neighbor distance.
pub fn compute_epsilon(cloud: &PointCloud) -> Result<f64> {
    epsilon_of_points(cloud.positions())
}

fn pass_one(scene: &PrimitiveScene, n_target: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Sample>> {
    scene.validate()?;
    let sampler = SceneSampler::new(scene)?;
    Ok(dart_throw(sampler.area, n_target, rng, |r| sampler.draw(r))?.0)
}

fn normalized_cloud(samples: &[Sample]) -> Result<(PointCloud, Similarity)> {
    let mut cloud = PointCloud::new(samples.iter().map(|s| s.p).collect(), samples.iter().map(|s| s.n).collect())?;
    let t = cloud.normalize();
    Ok((cloud, t))
}

/// Poisson-disk samples of the scene, normalized into the unit sphere.
pub fn poisson_sample(scene: &PrimitiveScene, n_target: usize, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(normalized_cloud(&pass_one(scene, n_target, &mut rng)?)?.0)
}

/// Surface samples plus flagged curve samples, with surface samples near the
/// curves removed.
pub fn make_geometric_training_cloud(
    scene: &PrimitiveScene,
    n_surface: usize,
    n_boundary: usize,
    seed: u64,
) -> Result<LabeledCloud> {
    Ok(training_cloud(scene, n_surface, n_boundary, seed)?.0)
}

fn training_cloud(
    scene: &PrimitiveScene,
    n_surface: usize,
    n_boundary: usize,
    seed: u64,
) -> Result<(LabeledCloud, Similarity)> {
    if scene.curves.is_empty() {
        return Err(Error::invalid("scene has no boundary curves"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surface = pass_one(scene, n_surface, &mut rng)?;
    let eps = epsilon_of_points(&surface.iter().map(|s| s.p).collect::<Vec<_>>())?;

    let active = scene.active_curves();
    let mut boundary = Vec::new();
    if !active.is_empty() {
        let mut cumulative = Vec::with_capacity(active.len());
        let mut total = 0.0;
        for &c in &active {
            total += scene.curves[c].curve.length();
            cumulative.push(total);
        }
        boundary.reserve(n_boundary);
        for _ in 0..n_boundary {
            let t = rng.random::<f64>() * total;
            let bc = &scene.curves[active[cumulative.partition_point(|&x| x <= t).min(active.len() - 1)]];
            let p = bc.curve.at(rng.random::<f64>());
            let prim = &scene.primitives[if rng.random::<bool>() { bc.between.0 } else { bc.between.1 }];
            boundary.push(Sample { p, n: prim.normal_near(p), part: prim.part });
        }
    }

    let bdata = flat(&boundary.iter().map(|s| s.p).collect::<Vec<_>>());
    let tree = KdTree::new(&bdata, 3);
    let eps2 = eps * eps;
    let mut samples: Vec<Sample> =
        surface.into_iter().filter(|s| !tree.any_within(&s.p, eps2, None, |_| true)).collect();
    let n_kept = samples.len();
    samples.extend(boundary);

    let (cloud, t) = normalized_cloud(&samples)?;
    let mut flags = vec![0u8; samples.len()];
    flags[n_kept..].fill(1);
    let lc = LabeledCloud {
        cloud,
        labels: samples.iter().map(|s| s.part).collect(),
        boundary: flags,
        epsilon: eps * t.scale,
    };
    Ok((lc, t))
}

/// Surface-only cloud with its ground-truth curve samples at spacing `epsilon / 4`.
pub fn make_eval_cloud(
    scene: &PrimitiveScene,
    n_surface: usize,
    seed: u64,
    noise: NoiseProfile,
) -> Result<(LabeledCloud, Vec<Vec3>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surface = pass_one(scene, n_surface, &mut rng)?;
    let (clean, t) = normalized_cloud(&surface)?;
    let eps = compute_epsilon(&clean)?;
    let spacing = 0.25 * eps / t.scale;
    let curves: Vec<Vec3> = scene
        .active_curves()
        .into_iter()
        .flat_map(|c| scene.curves[c].curve.dense_samples(spacing))
        .map(|p| t.apply(p))
        .collect();
    let mut cloud = perturb(&clean, noise.sigma, noise.angle_limit_deg, rng.random());
    cloud.set_normalized(true);
    let n = cloud.len();
    Ok((
        LabeledCloud { cloud, labels: surface.iter().map(|s| s.part).collect(), boundary: vec![0; n], epsilon: eps },
        curves,
    ))
}

/// Flags points within `eps` of any curve sample.
pub fn boundary_flags_near(cloud: &PointCloud, curve_samples: &[Vec3], eps: f64) -> Vec<u8> {
    let data = flat(curve_samples);
    let tree = KdTree::new(&data, 3);
    let eps2 = eps * eps;
    cloud.positions().iter().map(|p| tree.any_within(p, eps2, None, |_| true) as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::super::primitives::{Axes, Surface};
    use super::super::scene::{box_scene, capped_cylinder, coplanar_pair, dihedral, Template};
    use super::*;
    use crate::cloud::vec3;

    fn distance_to_set(p: Vec3, set: &[Vec3]) -> f64 {
        set.iter().map(|q| vec3::dist(p, *q)).fold(f64::INFINITY, f64::min)
    }

    fn brute_epsilon(p: &[Vec3]) -> f64 {
        (0..p.len())
            .map(|i| (0..p.len()).filter(|&j| j != i).map(|j| vec3::dist(p[i], p[j])).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    }

    #[test]
    fn epsilon_hand_cases() {
        let line = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]], vec![[0.0, 0.0, 1.0]; 3]).unwrap();
        assert_eq!(compute_epsilon(&line).unwrap(), 2.0);
        let grid: Vec<Vec3> = (0..5).flat_map(|i| (0..5).map(move |j| [i as f64, j as f64, 0.0])).collect();
        assert_eq!(epsilon_of_points(&grid).unwrap(), 1.0);
        assert!(epsilon_of_points(&grid[..1]).is_err());
    }

    #[test]
    fn epsilon_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..512).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        assert_eq!(epsilon_of_points(&pts).unwrap(), brute_epsilon(&pts));
    }

    #[test]
    fn unit_square_is_poisson_disk() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scene = PrimitiveScene {
            primitives: vec![super::super::primitives::Primitive::new(
                Surface::Plane { origin: [0.0; 3], axes: Axes::WORLD },
                super::super::primitives::Domain::rect((0.0, 1.0), (0.0, 1.0)),
                false,
                0,
            )],
            curves: vec![],
        };
        let sampler = SceneSampler::new(&scene).unwrap();
        let (pts, r) = dart_throw(sampler.area, 100, &mut rng, |g| sampler.draw(g)).unwrap();
        assert!(r > 0.0);
        assert!((90..=110).contains(&pts.len()));
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                assert!(vec3::dist(pts[i].p, pts[j].p) >= r);
            }
        }
    }

    #[test]
    fn sphere_normals_are_radial_and_cloud_is_normalized() {
        let scene = PrimitiveScene {
            primitives: vec![super::super::primitives::Primitive::new(
                Surface::Sphere { center: [0.3, -0.2, 0.1], axes: Axes::WORLD, radius: 1.5 },
                super::super::primitives::Domain::rect((0.0, std::f64::consts::TAU), (0.0, std::f64::consts::PI)),
                false,
                0,
            )],
            curves: vec![],
        };
        let cloud = poisson_sample(&scene, 1000, 2).unwrap();
        assert!((900..=1100).contains(&cloud.len()));
        let raw = pass_one(&scene, 1000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for (s, n) in raw.iter().zip(cloud.normals()) {
            let radial = vec3::normalize(vec3::sub(s.p, [0.3, -0.2, 0.1])).unwrap();
            assert!(vec3::dist(radial, *n) < 1e-6);
        }
        assert!(cloud.is_normalized());
    }

    #[test]
    fn every_template_fits_in_unit_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in Template::GEOMETRIC {
            let s = t.scene(&mut rng).unwrap();
            let c = poisson_sample(&s, 256, 1).unwrap();
            assert!(c.positions().iter().all(|p| vec3::norm(*p) <= 1.0 + 1e-6), "{}", t.name());
            assert!(poisson_sample(&s, 15, 1).is_err());
        }
    }

    #[test]
    fn coplanar_edge_emits_no_boundary() {
        let lc = make_geometric_training_cloud(&coplanar_pair(), 256, 128, 4).unwrap();
        assert!(lc.boundary.iter().all(|&b| b == 0));
        let mut bare = coplanar_pair();
        bare.curves.clear();
        assert!(make_geometric_training_cloud(&bare, 256, 128, 4).is_err());
    }

    #[test]
    fn dihedral_boundary_lies_on_crease() {
        let scene = dihedral(90.0);
        let (lc, t) = training_cloud(&scene, 512, 256, 8).unwrap();
        let (a, b) = (t.apply([-1.0, 0.0, 0.0]), t.apply([1.0, 0.0, 0.0]));
        let d = vec3::normalize(vec3::sub(b, a)).unwrap();
        let pos = lc.cloud.positions();
        let on: Vec<Vec3> = (0..pos.len()).filter(|&i| lc.boundary[i] == 1).map(|i| pos[i]).collect();
        assert_eq!(on.len(), 256);
        for p in &on {
            assert!(vec3::norm(vec3::cross(vec3::sub(*p, a), d)) < 1e-6);
        }
        for (i, p) in pos.iter().enumerate() {
            if lc.boundary[i] == 0 {
                assert!(distance_to_set(*p, &on) > lc.epsilon * (1.0 - 1e-9));
            }
        }
    }

    fn circle_distance(p: Vec3, center: Vec3, axis: Vec3, radius: f64) -> f64 {
        let w = vec3::sub(p, center);
        let h = vec3::dot(w, axis);
        let rho = vec3::norm(vec3::sub(w, vec3::scale(axis, h)));
        h.hypot(rho - radius)
    }

    #[test]
    fn capped_cylinder_boundary_on_rims() {
        let (r, h) = (0.6, 1.2);
        let (lc, t) = training_cloud(&capped_cylinder(r, h), 512, 200, 3).unwrap();
        let pos = lc.cloud.positions();
        let on: Vec<Vec3> = (0..pos.len()).filter(|&i| lc.boundary[i] == 1).map(|i| pos[i]).collect();
        assert_eq!(on.len(), 200);
        let axis = [0.0, 0.0, 1.0];
        for p in &on {
            let d = [0.5 * h, -0.5 * h]
                .iter()
                .map(|&z| circle_distance(*p, t.apply([0.0, 0.0, z]), axis, r * t.scale))
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-6, "{d}");
        }
    }

    #[test]
    fn boundary_is_a_strict_minority_for_every_template() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for t in Template::GEOMETRIC {
            for k in 0..3 {
                let s = t.scene(&mut rng).unwrap();
                let lc = make_geometric_training_cloud(&s, 1024, 512, k).unwrap();
                let nb = lc.boundary.iter().filter(|&&b| b == 1).count();
                assert!(2 * nb < lc.boundary.len(), "{} {nb}/{}", t.name(), lc.boundary.len());
                let pos = lc.cloud.positions();
                let data: Vec<f64> = (0..pos.len()).filter(|&i| lc.boundary[i] == 1).flat_map(|i| pos[i]).collect();
                let tree = KdTree::new(&data, 3);
                let lim = (lc.epsilon * (1.0 - 1e-9)).powi(2);
                for i in (0..pos.len()).filter(|&i| lc.boundary[i] == 0) {
                    assert!(tree.nearest(&pos[i]).unwrap().0 > lim);
                }
            }
        }
    }

    #[test]
    fn eval_cloud_contract() {
        let scene = box_scene([0.7, 0.8, 0.9]);
        let (lc, curves) = make_eval_cloud(&scene, 512, 6, NoiseProfile::NONE).unwrap();
        assert!(lc.boundary.iter().all(|&b| b == 0));
        let step = 0.25 * lc.epsilon * (1.0 + 1e-9);
        // curve samples are emitted curve by curve; consecutive pairs within a curve are close
        let mut close = 0;
        for w in curves.windows(2) {
            if vec3::dist(w[0], w[1]) <= step {
                close += 1;
            }
        }
        assert!(close >= curves.len() - 12);
        for c in &scene.curves {
            let s = c.curve.dense_samples(0.01);
            assert!(s.windows(2).all(|w| vec3::dist(w[0], w[1]) <= 0.01 * (1.0 + 1e-12)));
        }
        let (again, curves2) = make_eval_cloud(&scene, 512, 6, NoiseProfile::NONE).unwrap();
        assert_eq!(lc, again);
        assert_eq!(curves, curves2);
        let (noisy, _) = make_eval_cloud(&scene, 512, 6, NoiseProfile::default()).unwrap();
        assert_ne!(noisy.cloud, lc.cloud);
        assert_eq!(noisy, make_eval_cloud(&scene, 512, 6, NoiseProfile::default()).unwrap().0);
    }

    #[test]
    fn flags_near_curves() {
        let c = PointCloud::new(vec![[0.0; 3], [0.5, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![[0.0, 0.0, 1.0]; 3]).unwrap();
        assert_eq!(boundary_flags_near(&c, &[[0.0, 0.4, 0.0]], 0.5), vec![1, 0, 0]);
    }
}
