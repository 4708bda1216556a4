//! Training loop with per-step augmentation, checkpoint selection and
//! boundary-threshold calibration.
//!
//! The logged loss is the per-point mean of the weighted objective: each
//! batch loss is the weighted sum divided by the batch's point count, and an
//! epoch's loss is the point-weighted average over its batches.

mod calibrate;
mod config;

pub use calibrate::{calibrate_threshold, Calibration, Threshold};
pub use config::TrainConfig;

use std::fmt::Write as _;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{boundary_weight, Graph, Mode, ParamSet, Var};
use crate::cloud::{perturb, PointCloud};
use crate::error::{Error, Result};
use crate::net::{forward_boundary, forward_parts, init_params, Head, NetConfig};
use crate::synthgen::LabeledCloud;
use crate::Real;

/// What the network learns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Per-point boundary flags, weighted binary cross-entropy.
    Boundary,
    /// Per-point part labels in `0..n`, cross-entropy.
    Parts(usize),
}

impl Task {
    pub fn head(self) -> Head {
        match self {
            Task::Boundary => Head::Boundary,
            Task::Parts(n) => Head::Parts(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `NaN` without a validation set.
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    pub final_params: ParamSet<T>,
    pub best_params: ParamSet<T>,
    /// Epoch of the lowest validation loss (the last epoch without validation data).
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    /// Training clouds left out for lacking boundary points.
    pub skipped: usize,
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,lr";

/// Training log as CSV.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for e in log {
        let _ = writeln!(s, "{},{:.9e},{:.9e},{:e}", e.epoch, e.train_loss, e.val_loss, e.lr);
    }
    s
}

fn check_labels(set: &[LabeledCloud], task: Task, what: &str) -> Result<()> {
    for (i, c) in set.iter().enumerate() {
        match task {
            Task::Boundary => {
                if c.boundary.len() != c.cloud.len() || c.boundary.iter().any(|&b| b > 1) {
                    return Err(Error::invalid(format!("{what} cloud {i}: boundary flags must be 0/1, one per point")));
                }
            }
            Task::Parts(n) => {
                if c.labels.len() != c.cloud.len() || c.labels.iter().any(|&l| l < 0 || l as usize >= n) {
                    return Err(Error::invalid(format!("{what} cloud {i}: part labels must lie in 0..{n}")));
                }
            }
        }
    }
    Ok(())
}

/// Builds the batch loss (per-point mean) and returns it with the batch size.
fn batch_loss<T: Real>(
    g: &mut Graph<T>,
    clouds: &[&PointCloud],
    targets: &[&LabeledCloud],
    frame_seeds: &[u64],
    net: &NetConfig,
    params: &ParamSet<T>,
    task: Task,
) -> Result<(Var, usize)> {
    let n: usize = clouds.iter().map(|c| c.len()).sum();
    let inv = T::c(1.0 / n as f64);
    let loss = match task {
        Task::Boundary => {
            let t: Vec<u8> = targets.iter().flat_map(|c| c.boundary.iter().copied()).collect();
            // batches without boundary targets fall back to unit weights
            let wb = T::c(boundary_weight(&t).unwrap_or(1.0));
            let p = forward_boundary(g, clouds, frame_seeds, net, params)?;
            g.weighted_bce(p, &t, &vec![wb * inv; n], &vec![inv; n])?
        }
        Task::Parts(l) => {
            let y: Vec<usize> = targets.iter().flat_map(|c| c.labels.iter().map(|&v| v as usize)).collect();
            let p = forward_parts(g, clouds, frame_seeds, net, params, l)?;
            g.cross_entropy(p, &y, &vec![inv; n])?
        }
    };
    Ok((loss, n))
}

/// Eval-mode per-point loss over `set`, one cloud at a time with fixed frames.
pub fn evaluate_loss<T: Real>(
    set: &[LabeledCloud],
    net: &NetConfig,
    params: &ParamSet<T>,
    task: Task,
    frame_seed: u64,
) -> Result<f64> {
    if set.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    let mut points = 0;
    for c in set {
        let mut g = Graph::new(Mode::Eval);
        let (l, n) = batch_loss(&mut g, &[&c.cloud], &[c], &[frame_seed], net, params, task)?;
        total += g.value(l).data()[0].f64() * n as f64;
        points += n;
    }
    Ok(total / points as f64)
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric(format!("{what} is not finite")))
    }
}

/// `NaN` marks a missing validation set; with data it is a failure.
fn checked_val(v: f64, val_set: &[LabeledCloud]) -> Result<f64> {
    if val_set.is_empty() {
        Ok(v)
    } else {
        check_finite(v, "validation loss")
    }
}

/// Trains from a seeded initialization; see [`train_from`].
pub fn train<T: Real>(
    train_set: &[LabeledCloud],
    val_set: &[LabeledCloud],
    net: &NetConfig,
    cfg: &TrainConfig,
    task: Task,
) -> Result<TrainOutcome<T>> {
    let params = init_params::<T>(net, task.head(), cfg.seed)?;
    train_from(params, train_set, val_set, net, cfg, task)
}

/// Runs `cfg.epochs` epochs of Adam on shuffled batches.
///
/// Every step perturbs each cloud with a fresh seed and draws fresh tangent
/// frames. Row 0 of the log holds the eval-mode losses of the initial
/// parameters. For the boundary task, clouds without boundary points are
/// left out, and an empty remainder is an error.
pub fn train_from<T: Real>(
    mut params: ParamSet<T>,
    train_set: &[LabeledCloud],
    val_set: &[LabeledCloud],
    net: &NetConfig,
    cfg: &TrainConfig,
    task: Task,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    net.validate()?;
    check_labels(train_set, task, "training")?;
    check_labels(val_set, task, "validation")?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let usable: Vec<usize> = match task {
        Task::Boundary => (0..train_set.len()).filter(|&i| train_set[i].boundary_count() > 0).collect(),
        Task::Parts(_) => (0..train_set.len()).collect(),
    };
    let skipped = train_set.len() - usable.len();
    if skipped > 0 {
        warn!("skipping {skipped} training cloud(s) without boundary points");
    }
    if usable.is_empty() {
        return Err(Error::invalid("every training cloud lacks boundary points; an epoch would perform no step"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
    let eval_seed = cfg.seed;
    let all_train: Vec<LabeledCloud> = usable.iter().map(|&i| train_set[i].clone()).collect();
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: check_finite(evaluate_loss(&all_train, net, &params, task, eval_seed)?, "initial training loss")?,
        val_loss: checked_val(evaluate_loss(val_set, net, &params, task, eval_seed)?, val_set)?,
        lr: cfg.lr_at(1),
    }];
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut best_val = log[0].val_loss;

    let mut order = usable;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let adam = cfg.adam(epoch);
        let (mut sum, mut points) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let noisy: Vec<PointCloud> = batch
                .iter()
                .map(|&i| perturb(&train_set[i].cloud, cfg.noise.sigma, cfg.noise.angle_limit_deg, rng.random()))
                .collect();
            let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
            let clouds: Vec<&PointCloud> = noisy.iter().collect();
            let targets: Vec<&LabeledCloud> = batch.iter().map(|&i| &train_set[i]).collect();
            let mut g = Graph::new(Mode::Train);
            let (loss, n) = batch_loss(&mut g, &clouds, &targets, &seeds, net, &params, task)?;
            let lv = check_finite(g.value(loss).data()[0].f64(), "training loss")?;
            g.backward(loss)?;
            params.zero_grad();
            g.accumulate_into(&mut params)?;
            params.apply_running_updates(g.running_updates())?;
            params.adam_step(&adam)?;
            sum += lv * n as f64;
            points += n;
        }
        let val_loss = checked_val(evaluate_loss(val_set, net, &params, task, eval_seed)?, val_set)?;
        let entry = EpochLog { epoch, train_loss: sum / points as f64, val_loss, lr: adam.lr };
        info!("epoch {epoch}: train {:.5} val {:.5} lr {:e}", entry.train_loss, entry.val_loss, entry.lr);
        log.push(entry);
        // NaN validation (no data) always tracks the latest epoch
        if val_loss.is_nan() || best_val.is_nan() || val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = params.clone();
        }
    }
    Ok(TrainOutcome { final_params: params, best_params, best_epoch, log, skipped })
}

/// Eval-mode boundary probabilities for each cloud with fixed frames.
pub fn predict_set<T: Real>(
    set: &[&PointCloud],
    net: &NetConfig,
    params: &ParamSet<T>,
    frame_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    set.iter().map(|c| crate::net::predict_boundary(c, net, params, frame_seed)).collect()
}
