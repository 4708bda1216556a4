use std::path::PathBuf;

use boundaryforge::cloud::{read_pcb, write_pcb};
use boundaryforge::net::{predict_boundary, predict_parts};
use boundaryforge::refine::{write_labels, write_unary, LabelFile, MrfProblem, UnaryFile};
use boundaryforge::trainer::Task;
use boundaryforge::Result;
use clap::Args;
use rayon::prelude::*;

use crate::dataset::{create_dirs, load_curves, load_probabilities, Manifest, Split};
use crate::gen::annotate;
use crate::settings::{flag, layered, take_or, write_snapshot};
use crate::train::{calibration_csv, Model, CALIBRATION, THRESHOLD};

#[derive(Args, Debug, Clone, Default)]
pub struct PredictArgs {
    /// Model directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Split to predict (default test).
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Boundary models write each shape's PCB1 with the probability column set.
/// Part models write UNR1 distributions and LBL1 argmax labels. Returns the
/// number of shapes predicted.
pub fn cmd_predict(a: &PredictArgs) -> Result<usize> {
    let mut kv = layered(a.config.as_deref())?;
    flag(&mut kv, "split", a.split.as_ref());
    let split: Split = take_or(&mut kv, "split", Split::Test)?;
    kv.finish()?;

    let model = Model::load(&a.model)?;
    let manifest = Manifest::read(&a.data)?;
    let entries = manifest.split(split);
    create_dirs(&a.out, &entries)?;
    write_snapshot(
        &a.out,
        "predict",
        vec![
            ("model", a.model.display().to_string()),
            ("data", a.data.display().to_string()),
            ("split", split.to_string()),
        ],
    )?;
    entries.par_iter().try_for_each(|e| -> Result<()> {
        let mut rec = read_pcb(&e.path(&a.data))?;
        match model.task {
            Task::Boundary => {
                let p = predict_boundary(&rec.cloud, &model.net, &model.params, model.frame_seed)
                    .map_err(|err| annotate(err, &e.name()))?;
                rec.probabilities = Some(p);
                write_pcb(&e.path(&a.out), &rec)
            }
            Task::Parts(l) => {
                let p = predict_parts(&rec.cloud, &model.net, &model.params, l, model.frame_seed)
                    .map_err(|err| annotate(err, &e.name()))?;
                let u = UnaryFile::new(l, p)?;
                let argmax =
                    MrfProblem::from_probabilities(&u.probabilities, l, Vec::new(), Vec::new())?.unary_argmax();
                write_unary(&e.sibling(&a.out, "unr"), &u)?;
                write_labels(&e.sibling(&a.out, "lbl"), &LabelFile { ids: argmax.iter().map(|&c| c as i64).collect() })
            }
        }
    })?;
    log::info!("predicted {} {split} shapes", entries.len());
    Ok(entries.len())
}

#[derive(Args, Debug, Clone, Default)]
pub struct CalibrateArgs {
    /// Prediction directory written by `predict`.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Split the predictions cover (default val).
    #[arg(long)]
    pub split: Option<String>,
    /// Threshold grid step.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Chooses the threshold minimizing mean Chamfer distance on predicted shapes.
pub fn cmd_calibrate(a: &CalibrateArgs) -> Result<boundaryforge::trainer::Calibration> {
    let mut kv = layered(a.config.as_deref())?;
    flag(&mut kv, "split", a.split.as_ref());
    flag(&mut kv, "step", a.step);
    let split: Split = take_or(&mut kv, "split", Split::Val)?;
    let step: f64 = take_or(&mut kv, "step", 0.01)?;
    kv.finish()?;

    let manifest = Manifest::read(&a.data)?;
    let shapes: Vec<(Vec<[f64; 3]>, Vec<f64>, Vec<[f64; 3]>)> = manifest
        .split(split)
        .par_iter()
        .map(|e| {
            let (rec, p) = load_probabilities(&a.pred, e)?;
            Ok((rec.cloud.positions().to_vec(), p, load_curves(&a.data, e)?))
        })
        .collect::<Result<_>>()?;
    let refs: Vec<(&[[f64; 3]], &[f64], &[[f64; 3]])> =
        shapes.iter().map(|(p, b, c)| (p.as_slice(), b.as_slice(), c.as_slice())).collect();
    let c = boundaryforge::trainer::calibrate_threshold(&refs, step)?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join(THRESHOLD), c.threshold.to_text())?;
    std::fs::write(a.out.join(CALIBRATION), calibration_csv(&c))?;
    write_snapshot(
        &a.out,
        "calibrate",
        vec![("pred", a.pred.display().to_string()), ("split", split.to_string()), ("step", step.to_string())],
    )?;
    Ok(c)
}
