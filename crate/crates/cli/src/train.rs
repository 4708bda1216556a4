use std::path::{Path, PathBuf};

use boundaryforge::autograd::ParamSet;
use boundaryforge::net::NetConfig;
use boundaryforge::textio::{self, KeyValues};
use boundaryforge::trainer::{self, calibrate_threshold, log_csv, Calibration, Task, Threshold, TrainConfig};
use boundaryforge::{Error, Result};
use clap::Args;
use rayon::prelude::*;

use crate::dataset::{load_curves, load_labeled, Manifest, Split};
use crate::settings::{flag, layered, seed_default, take_or, write_snapshot};

pub const CHECKPOINT: &str = "model.ckpt";
pub const MODEL_CONFIG: &str = "model.cfg";
pub const THRESHOLD: &str = "threshold.txt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const CALIBRATION: &str = "calibration.csv";
/// Threshold recorded when there is no validation split to calibrate on.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// Dataset root written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Model directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// `boundary` or `parts`.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// `edgeconv`, `local_edgeconv` or `local_edgeconv_curv`.
    #[arg(long)]
    pub first_layer: Option<String>,
    #[arg(long)]
    pub use_normals: Option<bool>,
    /// Neighbors per point.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Threshold grid step for calibration on the validation split.
    #[arg(long)]
    pub calibration_step: Option<f64>,
    /// Further network and training keys, `key = value` per line.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// A trained model as stored in its directory.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: NetConfig,
    pub task: Task,
    /// Seed of the fixed tangent frames used at inference.
    pub frame_seed: u64,
    pub params: ParamSet<f32>,
}

fn task_pairs(task: Task) -> Vec<(&'static str, String)> {
    match task {
        Task::Boundary => vec![("task", "boundary".into())],
        Task::Parts(l) => vec![("task", "parts".into()), ("n_labels", l.to_string())],
    }
}

fn parse_task(name: &str, n_labels: Option<usize>) -> Result<Task> {
    match (name, n_labels) {
        ("boundary", _) => Ok(Task::Boundary),
        ("parts", Some(l)) if l >= 2 => Ok(Task::Parts(l)),
        ("parts", _) => Err(Error::InvalidArgument("the parts task needs n_labels >= 2".into())),
        _ => Err(Error::InvalidArgument(format!("unknown task {name:?} (boundary, parts)"))),
    }
}

impl Model {
    pub fn load(dir: &Path) -> Result<Model> {
        let mut kv = KeyValues::read(&dir.join(MODEL_CONFIG))?;
        let name: String = take_or(&mut kv, "task", "boundary".to_string())?;
        let n_labels = kv.take("n_labels")?;
        let task = parse_task(&name, n_labels)?;
        let frame_seed = take_or(&mut kv, "frame_seed", 0)?;
        let net = NetConfig::from_kv(&mut kv)?;
        kv.finish()?;
        let params = ParamSet::load(&dir.join(CHECKPOINT))?;
        Ok(Model { net, task, frame_seed, params })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut pairs = task_pairs(self.task);
        pairs.push(("frame_seed", self.frame_seed.to_string()));
        pairs.extend(self.net.to_pairs());
        std::fs::write(dir.join(MODEL_CONFIG), textio::format_kv(pairs))?;
        self.params.save(&dir.join(CHECKPOINT))
    }

    /// Calibrated decision threshold stored next to the model.
    pub fn threshold(dir: &Path) -> Result<Threshold> {
        let p = dir.join(THRESHOLD);
        Threshold::parse(&textio::source_name(&p), &textio::read_file(&p)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Model,
    pub best_epoch: usize,
    pub threshold: Threshold,
    pub calibration: Option<Calibration>,
}

/// Calibrates on `split` of `data`, predicting with `model`.
pub fn calibrate_model(
    model: &Model,
    data: &Path,
    manifest: &Manifest,
    split: Split,
    step: f64,
) -> Result<Calibration> {
    let entries = manifest.split(split);
    let shapes: Vec<(Vec<[f64; 3]>, Vec<f64>, Vec<[f64; 3]>)> = entries
        .par_iter()
        .map(|e| {
            let lc = load_labeled(data, e)?;
            let p = boundaryforge::net::predict_boundary(&lc.cloud, &model.net, &model.params, model.frame_seed)?;
            Ok((lc.cloud.positions().to_vec(), p, load_curves(data, e)?))
        })
        .collect::<Result<_>>()?;
    let refs: Vec<(&[[f64; 3]], &[f64], &[[f64; 3]])> =
        shapes.iter().map(|(a, b, c)| (a.as_slice(), b.as_slice(), c.as_slice())).collect();
    calibrate_threshold(&refs, step)
}

pub fn calibration_csv(c: &Calibration) -> String {
    let mut s = String::from("tau,cd\n");
    for (t, cd) in &c.candidates {
        s.push_str(&format!("{t},{}\n", textio::fmt9(*cd)));
    }
    s
}

/// Trains on the `train` split, keeps the parameters with the lowest
/// validation loss and calibrates the boundary threshold on `val`.
pub fn cmd_train(a: &TrainArgs) -> Result<TrainReport> {
    let mut kv = layered(a.config.as_deref())?;
    flag(&mut kv, "task", a.task.as_ref());
    flag(&mut kv, "epochs", a.epochs);
    flag(&mut kv, "batch_size", a.batch_size);
    flag(&mut kv, "lr", a.lr);
    flag(&mut kv, "first_layer", a.first_layer.as_ref());
    flag(&mut kv, "use_normals", a.use_normals);
    flag(&mut kv, "k", a.k);
    flag(&mut kv, "seed", a.seed);
    flag(&mut kv, "calibration_step", a.calibration_step);
    seed_default(&mut kv)?;
    let task_name: String = take_or(&mut kv, "task", "boundary".to_string())?;
    let n_labels_key: Option<usize> = kv.take("n_labels")?;
    let step: f64 = take_or(&mut kv, "calibration_step", 0.01)?;
    let net = NetConfig::from_kv(&mut kv)?;
    let cfg = TrainConfig::from_kv(&mut kv)?;
    kv.finish()?;

    let manifest = Manifest::read(&a.data)?;
    let load = |s: Split| -> Result<Vec<_>> { manifest.split(s).iter().map(|e| load_labeled(&a.data, e)).collect() };
    let train_set = load(Split::Train)?;
    let val_set = load(Split::Val)?;
    let task = match task_name.as_str() {
        "parts" => {
            let inferred =
                train_set.iter().chain(&val_set).flat_map(|c| c.labels.iter()).map(|&l| l.max(0) as usize + 1).max();
            parse_task("parts", n_labels_key.or(inferred))?
        }
        other => parse_task(other, n_labels_key)?,
    };

    std::fs::create_dir_all(&a.out)?;
    let mut snapshot = task_pairs(task);
    snapshot.push(("calibration_step", step.to_string()));
    snapshot.extend(net.to_pairs());
    snapshot.extend(cfg.to_pairs());
    write_snapshot(&a.out, "train", snapshot)?;

    let outcome = trainer::train::<f32>(&train_set, &val_set, &net, &cfg, task)?;
    std::fs::write(a.out.join(TRAIN_LOG), log_csv(&outcome.log))?;
    let model = Model { net, task, frame_seed: cfg.seed, params: outcome.best_params };
    model.save(&a.out)?;

    let (threshold, calibration) = if task == Task::Boundary && !val_set.is_empty() {
        let c = calibrate_model(&model, &a.data, &manifest, Split::Val, step)?;
        std::fs::write(a.out.join(CALIBRATION), calibration_csv(&c))?;
        (c.threshold.clone(), Some(c))
    } else {
        (Threshold::new(DEFAULT_THRESHOLD, "default")?, None)
    };
    std::fs::write(a.out.join(THRESHOLD), threshold.to_text())?;
    log::info!("best epoch {}, threshold {}", outcome.best_epoch, threshold.value);
    Ok(TrainReport { model, best_epoch: outcome.best_epoch, threshold, calibration })
}
