use std::path::PathBuf;

use boundaryforge::cloud::vec3::Vec3;
use boundaryforge::cloud::{perturb, write_pcb};
use boundaryforge::synthgen::{
    boundary_flags_near, make_eval_cloud, make_geometric_training_cloud, mark_semantic_boundaries, semantic_mesh,
    write_curves, LabeledCloud, NoiseProfile, Template,
};
use boundaryforge::{Error, Result};
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{Entry, Manifest, Split};
use crate::settings::{flag, layered, seed_default, take_or, take_required, write_snapshot};

#[derive(Args, Debug, Clone, Default)]
pub struct GenArgs {
    /// Shape family; `mixed` draws a geometric template per shape.
    #[arg(long)]
    pub template: Option<String>,
    /// Number of shapes.
    #[arg(long)]
    pub n: Option<usize>,
    /// Train/val/test percentages, e.g. 70/10/20.
    #[arg(long)]
    pub split: Option<String>,
    /// Surface samples per shape.
    #[arg(long)]
    pub points: Option<usize>,
    /// Curve samples added to each geometric training shape.
    #[arg(long)]
    pub boundary_points: Option<usize>,
    /// Position noise of validation and test shapes.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Normal noise bound (degrees) of validation and test shapes.
    #[arg(long)]
    pub noise_angle: Option<f64>,
    /// Shape `i` uses seed `seed + i`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Shape counts per split. Train and validation round down; test takes the rest.
pub fn split_counts(n: usize, ratios: &str) -> Result<[usize; 3]> {
    let bad =
        || Error::InvalidArgument(format!("split {ratios:?} must be three percentages summing to 100, e.g. 70/10/20"));
    let parts: Vec<usize> = ratios.split('/').map(|t| t.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
    if parts.len() != 3 || parts.iter().sum::<usize>() != 100 {
        return Err(bad());
    }
    let train = n * parts[0] / 100;
    let val = n * parts[1] / 100;
    Ok([train, val, n - train - val])
}

/// One generated shape and its ground-truth curve samples.
pub fn make_shape(
    template: Template,
    split: Split,
    seed: u64,
    points: usize,
    boundary_points: usize,
    noise: NoiseProfile,
) -> Result<(LabeledCloud, Vec<Vec3>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if template.is_semantic() {
        let mesh = semantic_mesh(template, &mut rng)?;
        let mut lc = mark_semantic_boundaries(&mesh, points, seed)?;
        // the marked points of the clean cloud stand in for curves
        let curves = lc.boundary_points();
        if split != Split::Train {
            lc.cloud = perturb(&lc.cloud, noise.sigma, noise.angle_limit_deg, rng.random());
        }
        return Ok((lc, curves));
    }
    let scene = template.scene(&mut rng)?;
    if split == Split::Train {
        let lc = make_geometric_training_cloud(&scene, points, boundary_points, seed)?;
        let curves = lc.boundary_points();
        Ok((lc, curves))
    } else {
        let (mut lc, curves) = make_eval_cloud(&scene, points, seed, noise)?;
        lc.boundary = boundary_flags_near(&lc.cloud, &curves, lc.epsilon);
        Ok((lc, curves))
    }
}

/// Writes a dataset and its manifest under `out`.
pub fn cmd_gen(a: &GenArgs) -> Result<Manifest> {
    let mut kv = layered(a.config.as_deref())?;
    flag(&mut kv, "template", a.template.as_ref());
    flag(&mut kv, "n", a.n);
    flag(&mut kv, "split", a.split.as_ref());
    flag(&mut kv, "points", a.points);
    flag(&mut kv, "boundary_points", a.boundary_points);
    flag(&mut kv, "noise_sigma", a.noise_sigma);
    flag(&mut kv, "noise_angle_deg", a.noise_angle);
    flag(&mut kv, "seed", a.seed);
    seed_default(&mut kv)?;

    let name: String = take_or(&mut kv, "template", "mixed".to_string())?;
    let template = Template::parse(&name).ok_or_else(|| {
        Error::InvalidArgument(format!("unknown template {name:?}; available: {}", Template::names()))
    })?;
    let n: usize = take_or(&mut kv, "n", 50)?;
    let split: String = take_or(&mut kv, "split", "70/10/20".to_string())?;
    let points: usize = take_or(&mut kv, "points", 1024)?;
    let boundary_points: usize = take_or(&mut kv, "boundary_points", 512)?;
    let d = NoiseProfile::default();
    let noise = NoiseProfile {
        sigma: take_or(&mut kv, "noise_sigma", d.sigma)?,
        angle_limit_deg: take_or(&mut kv, "noise_angle_deg", d.angle_limit_deg)?,
    };
    let seed: u64 = take_required(&mut kv, "seed")?;
    kv.finish()?;
    if points < 2 {
        return Err(Error::InvalidArgument("points must be at least 2".into()));
    }
    let counts = split_counts(n, &split)?;

    let mut jobs = Vec::with_capacity(n);
    for (s, &count) in Split::ALL.iter().zip(&counts) {
        for _ in 0..count {
            let i = jobs.len();
            jobs.push((*s, i));
        }
    }
    let shapes: Vec<(LabeledCloud, Vec<Vec3>)> = jobs
        .par_iter()
        .map(|&(s, i)| {
            make_shape(template, s, seed + i as u64, points, boundary_points, noise)
                .map_err(|e| annotate(e, &format!("shape {i}")))
        })
        .collect::<Result<_>>()?;

    for s in Split::ALL {
        std::fs::create_dir_all(a.out.join(s.name()))?;
    }
    let mut manifest = Manifest::default();
    for (&(s, i), (lc, curves)) in jobs.iter().zip(&shapes) {
        let e = Entry {
            split: s,
            file: format!("{}/{i:04}.pcb", s.name()),
            template: name.clone(),
            seed: seed + i as u64,
            epsilon: lc.epsilon,
        };
        write_pcb(&e.path(&a.out), &lc.to_record())?;
        write_curves(&e.sibling(&a.out, "curves"), curves)?;
        manifest.entries.push(e);
    }
    manifest.write(&a.out)?;
    write_snapshot(
        &a.out,
        "gen",
        vec![
            ("template", name),
            ("n", n.to_string()),
            ("split", split),
            ("points", points.to_string()),
            ("boundary_points", boundary_points.to_string()),
            ("noise_sigma", noise.sigma.to_string()),
            ("noise_angle_deg", noise.angle_limit_deg.to_string()),
            ("seed", seed.to_string()),
        ],
    )?;
    log::info!("wrote {}/{}/{} shapes to {}", counts[0], counts[1], counts[2], a.out.display());
    Ok(manifest)
}

/// Prefixes argument and numeric messages with context.
pub(crate) fn annotate(e: Error, what: &str) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{what}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("{what}: {m}")),
        other => other,
    }
}
