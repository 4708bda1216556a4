use std::path::{Path, PathBuf};
use std::process::Command;

use boundaryforge::cloud::{read_pcb, write_pcb};
use boundaryforge::refine::read_labels;
use boundaryforge::synthgen::{read_curves, write_curves};
use boundaryforge::textio::KeyValues;
use boundaryforge_cli::dataset::{Manifest, Split};
use boundaryforge_cli::*;

const SMALL_NET: &str =
    "first_widths = 16,16\nec2_widths = 16\nec3_widths = 16\nglobal_width = 32\nhead_widths = 32,16\nk = 8\n";

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.cfg");
    std::fs::write(&p, SMALL_NET).unwrap();
    p
}

fn gen_args(template: &str, n: usize, seed: u64, out: PathBuf) -> GenArgs {
    GenArgs {
        template: Some(template.into()),
        n: Some(n),
        points: Some(384),
        boundary_points: Some(96),
        seed: Some(seed),
        out,
        ..GenArgs::default()
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_boundaryforge"))
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_writes_split_counts_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let m = cmd_gen(&gen_args("dihedral", 50, 1, tmp.path().join("d"))).unwrap();
    let counts: Vec<usize> = Split::ALL.iter().map(|&s| m.split(s).len()).collect();
    assert_eq!(counts, [35, 5, 10]);
    assert_eq!(Manifest::read(&tmp.path().join("d")).unwrap(), m);
    for (i, e) in m.entries.iter().enumerate() {
        assert_eq!(e.seed, 1 + i as u64);
        assert!(e.path(&tmp.path().join("d")).exists());
        assert!(e.sibling(&tmp.path().join("d"), "curves").exists());
    }
    let rec = read_pcb(&m.entries[40].path(&tmp.path().join("d"))).unwrap();
    assert!(rec.labels.is_some() && rec.boundary.is_some());
}

#[test]
fn gen_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for t in ["mixed", "lamp"] {
        let (a, b) = (tmp.path().join(format!("{t}a")), tmp.path().join(format!("{t}b")));
        cmd_gen(&gen_args(t, 8, 9, a.clone())).unwrap();
        cmd_gen(&gen_args(t, 8, 9, b.clone())).unwrap();
        let files = files_under(&a);
        assert_eq!(files, files_under(&b));
        assert!(files.len() > 16);
        for f in files {
            assert_eq!(std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap(), "{}", f.display());
        }
    }
}

#[test]
fn written_files_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("d");
    let m = cmd_gen(&gen_args("box", 4, 2, root.clone())).unwrap();
    for e in &m.entries {
        let p = e.path(&root);
        let rec = read_pcb(&p).unwrap();
        let again = tmp.path().join("again.pcb");
        write_pcb(&again, &rec).unwrap();
        let back = read_pcb(&again).unwrap();
        // values survive at 9 significant digits; normals are renormalized on read
        assert_eq!((&back.labels, &back.boundary), (&rec.labels, &rec.boundary));
        let close = |a: &[[f64; 3]], b: &[[f64; 3]]| {
            a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| (x - y).abs() <= 1e-8 * x.abs().max(1e-3))
        };
        assert!(close(back.cloud.positions(), rec.cloud.positions()));
        assert!(close(back.cloud.normals(), rec.cloud.normals()));
        let curves = read_curves(&e.sibling(&root, "curves")).unwrap();
        write_curves(&again, &curves).unwrap();
        assert_eq!(std::fs::read(e.sibling(&root, "curves")).unwrap(), std::fs::read(&again).unwrap());
    }
    let text = std::fs::read_to_string(root.join("manifest.txt")).unwrap();
    assert_eq!(Manifest::parse("m", &text).unwrap().to_text(), text);
}

#[test]
fn flags_override_config_and_snapshot_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.cfg");
    std::fs::write(&cfg, "template = box\nn = 4\npoints = 300\nseed = 5\n").unwrap();
    let out = tmp.path().join("d");
    let m = cmd_gen(&GenArgs { n: Some(3), config: Some(cfg), out: out.clone(), ..GenArgs::default() }).unwrap();
    assert_eq!(m.entries.len(), 3);
    assert!(m.entries.iter().all(|e| e.template == "box"));
    let snap = KeyValues::read(&out.join("gen.resolved.cfg")).unwrap();
    assert_eq!(snap.get("n"), Some("3"));
    assert_eq!(snap.get("points"), Some("300"));
    assert_eq!(snap.get("seed"), Some("5"));
    assert_eq!(snap.get("boundary_points"), Some("512"));
}

#[test]
fn unknown_config_key_is_a_parse_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.cfg");
    std::fs::write(&cfg, "template = box\n\nnumber = 4\n").unwrap();
    let err = cmd_gen(&GenArgs { config: Some(cfg), out: tmp.path().join("d"), ..GenArgs::default() }).unwrap_err();
    assert_eq!(exit_code(&err), 2);
    assert!(err.to_string().contains(":3:"), "{err}");
}

#[test]
fn unknown_template_exits_2_with_the_list() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin().args(["gen", "--template", "unknown", "--out"]).arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dihedral") && err.contains("lamp"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    let out = bin().args(["gen", "--n", "many"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_input_exits_2_with_line_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("d");
    let m = cmd_gen(&gen_args("dihedral", 5, 3, root.clone())).unwrap();
    let test = m.split(Split::Test)[0];
    let path = test.path(&root);
    let text = std::fs::read_to_string(&path).unwrap();
    let broken: Vec<String> =
        text.lines().enumerate().map(|(i, l)| if i == 3 { "0 0 zero 0 0 1 0 0".into() } else { l.into() }).collect();
    std::fs::write(&path, broken.join("\n") + "\n").unwrap();
    let out =
        bin().args(["eval", "--from-gt", "--data"]).arg(&root).arg("--out").arg(tmp.path().join("e")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("{}:4:", path.display())), "{err}");
}

#[test]
fn diverging_training_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("d");
    let mut g = gen_args("dihedral", 10, 3, root.clone());
    (g.points, g.boundary_points) = (Some(512), Some(128));
    cmd_gen(&g).unwrap();
    let cfg = small_config(tmp.path());
    let out = bin()
        .args(["--workers", "1", "train", "--epochs", "3", "--lr", "1e30", "--data"])
        .arg(&root)
        .arg("--out")
        .arg(tmp.path().join("m"))
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn seed_environment_variable_replaces_the_default() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |dir: &str, env: Option<&str>| {
        let mut c = bin();
        c.args(["gen", "--template", "dihedral", "--n", "2", "--points", "200", "--out"]).arg(tmp.path().join(dir));
        match env {
            Some(v) => c.env("BOUNDARYFORGE_SEED", v),
            None => c.env_remove("BOUNDARYFORGE_SEED"),
        };
        assert!(c.output().unwrap().status.success());
        Manifest::read(&tmp.path().join(dir)).unwrap().entries[0].seed
    };
    assert_eq!(run("a", None), 0);
    assert_eq!(run("b", Some("41")), 41);
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("d");
    let m = cmd_gen(&gen_args("mixed", 10, 4, root.clone())).unwrap();
    // predictions that are exactly the annotated boundary set
    let pred = tmp.path().join("p");
    for e in m.split(Split::Train) {
        let mut rec = read_pcb(&e.path(&root)).unwrap();
        rec.probabilities = Some(rec.boundary.as_ref().unwrap().iter().map(|&b| b as f64).collect());
        std::fs::create_dir_all(e.path(&pred).parent().unwrap()).unwrap();
        write_pcb(&e.path(&pred), &rec).unwrap();
    }
    let report = cmd_eval(&EvalArgs {
        pred: Some(pred),
        data: root,
        split: Some("train".into()),
        out: tmp.path().join("e"),
        ..EvalArgs::default()
    })
    .unwrap();
    for mean in &report.means {
        assert_eq!((mean.precision, mean.recall, mean.f1, mean.biou, mean.chamfer), (1.0, 1.0, 1.0, 1.0, 0.0));
    }
    let csv = std::fs::read_to_string(tmp.path().join("e/report.csv")).unwrap();
    assert!(csv.lines().filter(|l| l.starts_with("mean,")).count() == 4);
}

#[test]
fn segment_from_ground_truth_recovers_parts() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("d");
    let mut a = gen_args("dihedral", 10, 6, root.clone());
    a.points = Some(800);
    cmd_gen(&a).unwrap();
    let rows =
        cmd_segment(&SegmentArgs { data: root, from_gt: true, out: tmp.path().join("s"), ..SegmentArgs::default() })
            .unwrap();
    assert!(!rows.is_empty());
    for r in &rows {
        assert_eq!(r.segments, r.gt_parts, "{}", r.name);
        assert!(r.rand_index >= 0.99, "{}", r.name);
    }
}

/// gen -> train -> predict -> calibrate -> eval -> segment on dihedral shapes,
/// plus the part pipeline with refinement on chairs.
#[test]
fn full_pipeline_emits_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = small_config(t);
    let data = t.join("data");
    cmd_gen(&gen_args("dihedral", 10, 11, data.clone())).unwrap();
    let report = cmd_train(&TrainArgs {
        data: data.clone(),
        out: t.join("model"),
        epochs: Some(2),
        config: Some(cfg.clone()),
        ..TrainArgs::default()
    })
    .unwrap();
    for f in ["model.ckpt", "model.cfg", "threshold.txt", "train_log.csv", "calibration.csv", "train.resolved.cfg"] {
        assert!(t.join("model").join(f).exists(), "{f}");
    }
    assert_eq!(report.threshold.metric, "chamfer");

    for split in ["val", "test"] {
        let n = cmd_predict(&PredictArgs {
            model: t.join("model"),
            data: data.clone(),
            split: Some(split.into()),
            out: t.join("pred"),
            config: None,
        })
        .unwrap();
        assert!(n > 0);
    }
    let m = Manifest::read(&data).unwrap();
    for e in m.split(Split::Test) {
        let rec = read_pcb(&e.path(&t.join("pred"))).unwrap();
        assert_eq!(rec.flags(), "LBP");
    }
    let c = cmd_calibrate(&CalibrateArgs {
        pred: t.join("pred"),
        data: data.clone(),
        out: t.join("cal"),
        ..CalibrateArgs::default()
    })
    .unwrap();
    assert_eq!(c.threshold, report.threshold, "calibrating the same predictions gives the training threshold");
    cmd_eval(&EvalArgs {
        pred: Some(t.join("pred")),
        data: data.clone(),
        threshold: Some(t.join("cal/threshold.txt")),
        out: t.join("eval"),
        ..EvalArgs::default()
    })
    .unwrap();
    for f in ["report.csv", "sweep.csv", "summary.txt", "eval.resolved.cfg"] {
        assert!(t.join("eval").join(f).exists(), "{f}");
    }
    cmd_segment(&SegmentArgs {
        pred: Some(t.join("pred")),
        data: data.clone(),
        out: t.join("seg"),
        ..SegmentArgs::default()
    })
    .unwrap();
    assert!(t.join("seg/segments.csv").exists());

    // part head and refinement
    let sem = t.join("sem");
    cmd_gen(&gen_args("chair", 8, 12, sem.clone())).unwrap();
    let parts = cmd_train(&TrainArgs {
        data: sem.clone(),
        out: t.join("parts"),
        task: Some("parts".into()),
        epochs: Some(1),
        config: Some(cfg),
        ..TrainArgs::default()
    })
    .unwrap();
    assert_eq!(parts.model.task, boundaryforge::trainer::Task::Parts(3));
    cmd_predict(&PredictArgs {
        model: t.join("parts"),
        data: sem.clone(),
        split: None,
        out: t.join("ppred"),
        config: None,
    })
    .unwrap();
    let r = cmd_refine(&RefineArgs {
        unary: t.join("ppred"),
        data: sem.clone(),
        lambda: Some(0.0),
        lambda_normal: Some(0.0),
        out: t.join("refined"),
        ..RefineArgs::default()
    })
    .unwrap();
    assert_eq!(r.mean_refined(), r.mean_unrefined());
    let sm = Manifest::read(&sem).unwrap();
    for e in sm.split(Split::Test) {
        let refined = read_labels(&e.sibling(&t.join("refined"), "lbl")).unwrap();
        let argmax = read_labels(&e.sibling(&t.join("ppred"), "lbl")).unwrap();
        assert_eq!(refined, argmax, "lambda = 0 keeps the predicted argmax");
    }
    assert!(t.join("refined/iou.csv").exists());
}

#[test]
fn same_seed_pipelines_give_identical_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = |name: &str| {
        let root = tmp.path().join(name);
        cmd_gen(&gen_args("mixed", 10, 21, root.join("data"))).unwrap();
        cmd_train(&TrainArgs {
            data: root.join("data"),
            out: root.join("model"),
            epochs: Some(2),
            config: Some(cfg.clone()),
            ..TrainArgs::default()
        })
        .unwrap();
        cmd_predict(&PredictArgs {
            model: root.join("model"),
            data: root.join("data"),
            split: None,
            out: root.join("pred"),
            config: None,
        })
        .unwrap();
        cmd_eval(&EvalArgs {
            pred: Some(root.join("pred")),
            data: root.join("data"),
            threshold: Some(root.join("model/threshold.txt")),
            out: root.join("eval"),
            ..EvalArgs::default()
        })
        .unwrap();
        std::fs::read(root.join("eval/report.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}
