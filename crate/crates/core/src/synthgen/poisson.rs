//! Dart-throwing Poisson-disk sampling over an area-uniform proposal.

use std::collections::HashMap;

use rand::Rng;

use super::primitives::Primitive;
use super::scene::PrimitiveScene;
use crate::cloud::vec3::{self, Vec3};
use crate::error::{Error, Result};

/// Disk radius relative to `sqrt(area / n)`; well below the jamming limit so
/// the target count is reachable within the attempt budget.
const RADIUS_FACTOR: f64 = 0.39;
const ATTEMPTS_PER_SAMPLE: usize = 30;
const SHRINK: f64 = 0.9;
const RETRIES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Sample {
    pub p: Vec3,
    pub n: Vec3,
    pub part: i64,
}

/// Area-uniform proposal over a trimmed primitive set.
pub(crate) struct SceneSampler<'a> {
    prims: &'a [Primitive],
    cumulative: Vec<f64>,
    bounds: Vec<f64>,
    pub area: f64,
}

impl<'a> SceneSampler<'a> {
    pub fn new(scene: &'a PrimitiveScene) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(scene.primitives.len());
        let mut bounds = Vec::with_capacity(scene.primitives.len());
        let mut area = 0.0;
        for p in &scene.primitives {
            let (a, b) = p.area_and_bound();
            area += a;
            cumulative.push(area);
            bounds.push(b);
        }
        if !(area > 0.0) {
            return Err(Error::invalid("scene has zero surface area"));
        }
        Ok(SceneSampler { prims: &scene.primitives, cumulative, bounds, area })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let t = rng.random::<f64>() * self.area;
        let i = self.cumulative.partition_point(|&c| c <= t).min(self.prims.len() - 1);
        let prim = &self.prims[i];
        loop {
            let u = rng.random_range(prim.domain.u.0..=prim.domain.u.1);
            let v = rng.random_range(prim.domain.v.0..=prim.domain.v.1);
            let accept = rng.random::<f64>() * self.bounds[i];
            if let Some((p, n, da)) = prim.eval(u, v) {
                if accept < da {
                    return Sample { p, n, part: prim.part };
                }
            }
        }
    }
}

struct Grid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl Grid {
    fn key(&self, p: Vec3) -> [i64; 3] {
        [(p[0] / self.cell).floor() as i64, (p[1] / self.cell).floor() as i64, (p[2] / self.cell).floor() as i64]
    }

    fn conflicts(&self, p: Vec3, r2: f64, pts: &[Sample]) -> bool {
        let k = self.key(p);
        for dx in -2..=2 {
            for dy in -2..=2 {
                for dz in -2..=2 {
                    if let Some(ids) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if ids.iter().any(|&j| vec3::dist2(pts[j as usize].p, p) < r2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

fn throw<R: Rng + ?Sized>(r: f64, n_target: usize, rng: &mut R, draw: &mut dyn FnMut(&mut R) -> Sample) -> Vec<Sample> {
    // cell diagonal = r, so any conflict lies within two cells
    let mut grid = Grid { cell: r / 3f64.sqrt(), cells: HashMap::new() };
    let mut pts: Vec<Sample> = Vec::with_capacity(n_target);
    let r2 = r * r;
    for _ in 0..ATTEMPTS_PER_SAMPLE * n_target {
        if pts.len() == n_target {
            break;
        }
        let s = draw(rng);
        if !grid.conflicts(s.p, r2, &pts) {
            grid.cells.entry(grid.key(s.p)).or_default().push(pts.len() as u32);
            pts.push(s);
        }
    }
    pts
}

/// Samples with pairwise distance at least the returned radius.
pub(crate) fn dart_throw<R: Rng + ?Sized>(
    area: f64,
    n_target: usize,
    rng: &mut R,
    mut draw: impl FnMut(&mut R) -> Sample,
) -> Result<(Vec<Sample>, f64)> {
    if n_target < 16 {
        return Err(Error::invalid(format!("n_target must be at least 16, got {n_target}")));
    }
    let mut r = (RADIUS_FACTOR * area / n_target as f64).sqrt();
    let mut best = Vec::new();
    for attempt in 0..RETRIES {
        let pts = throw(r, n_target, rng, &mut draw);
        if pts.len() == n_target || attempt + 1 == RETRIES {
            best = pts;
            break;
        }
        r *= SHRINK;
    }
    if best.len() < n_target {
        if 2 * best.len() < n_target {
            return Err(Error::numeric(format!("poisson sampling reached only {} of {n_target} points", best.len())));
        }
        log::warn!("poisson sampling reached {} of {n_target} points", best.len());
    }
    Ok((best, r))
}
