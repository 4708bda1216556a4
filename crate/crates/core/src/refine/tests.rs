use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::synthgen::scene::dihedral;
use crate::synthgen::{boundary_flags_near, make_eval_cloud, NoiseProfile};

fn random_problem(rng: &mut ChaCha8Rng, n: usize, l: usize) -> MrfProblem {
    let unary: Vec<f64> = (0..n * l).map(|_| rng.random_range(0.0..3.0)).collect();
    let mut edges = Vec::new();
    for i in 0..n as u32 {
        for j in i + 1..n as u32 {
            if rng.random_bool(0.35) {
                edges.push((i, j));
            }
        }
    }
    let weights = edges.iter().map(|_| rng.random_range(0.0..2.0)).collect();
    MrfProblem::new(l, unary, edges, weights).unwrap()
}

/// Minimum energy over all `l^n` labelings.
fn exhaustive(p: &MrfProblem) -> f64 {
    let (n, l) = (p.len(), p.n_labels);
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        best = best.min(p.energy(&labels));
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < l {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

#[test]
fn boundary_cost_examples() {
    assert_eq!(pairwise_boundary(1.0, 1.0, 2.0), 0.0);
    assert!((pairwise_boundary(0.0, 0.0, 1.0) - 6.907755278982137).abs() < 1e-12);
    assert_eq!(pairwise_boundary(0.0, 0.3, 0.0), 0.0);
    assert_eq!(pairwise_boundary(0.2, 0.7, 1.5), pairwise_boundary(0.7, 0.2, 1.5));
    assert!((pairwise_boundary(0.2, 0.5, 2.0) + 2.0 * 0.501f64.ln()).abs() < 1e-12);
}

#[test]
fn normal_cost_examples() {
    assert_eq!(pairwise_normal(90.0, 1.0), 0.0);
    assert_eq!(pairwise_normal(135.0, 1.0), 0.0);
    assert!((pairwise_normal(9.0, 1.0) - std::f64::consts::LN_10).abs() < 1e-12);
    assert!((pairwise_normal(0.0, 1.0) - 6.907755278982137).abs() < 1e-12);
    assert_eq!(pairwise_normal(10.0, 0.0), 0.0);
    assert!((normal_angle_deg([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]) - 90.0).abs() < 1e-12);
    // rounding past |dot| = 1 is clamped
    assert_eq!(normal_angle_deg([1.0, 0.0, 0.0], [1.0 + 1e-16, 0.0, 0.0]), 0.0);
}

#[test]
fn zero_weights_give_unary_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for l in 1..5 {
        let mut p = random_problem(&mut rng, 12, l);
        p.weights.iter_mut().for_each(|w| *w = 0.0);
        let s = p.solve(None).unwrap();
        assert_eq!(s.labels, p.unary_argmax());
        // also from an arbitrary start
        let init: Vec<usize> = (0..12).map(|i| i % l).collect();
        assert_eq!(p.solve(Some(&init)).unwrap().labels, p.unary_argmax());
    }
}

#[test]
fn two_labels_reach_the_exhaustive_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = rng.random_range(1..=16);
        let p = random_problem(&mut rng, n, 2);
        let s = p.solve(None).unwrap();
        let best = exhaustive(&p);
        assert!((s.energy - best).abs() <= 1e-9 * best.max(1.0), "{} vs {best}", s.energy);
        assert!((p.energy(&s.labels) - s.energy).abs() < 1e-12);
    }
}

#[test]
fn three_labels_stay_within_the_expansion_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exact = 0;
    for _ in 0..60 {
        let n = rng.random_range(2..=9);
        let p = random_problem(&mut rng, n, 3);
        let s = p.solve(None).unwrap();
        let best = exhaustive(&p);
        assert!(s.energy <= s.initial_energy);
        // Potts alpha-expansion guarantee
        assert!(s.energy <= 2.0 * best + 1e-9);
        exact += ((s.energy - best).abs() < 1e-9) as usize;
    }
    assert!(exact >= 40, "expansion matched the optimum on only {exact} of 60");
}

#[test]
fn solve_validates_inputs() {
    assert!(MrfProblem::new(2, vec![0.0, -1.0], vec![], vec![]).is_err());
    assert!(MrfProblem::new(2, vec![0.0; 4], vec![(0, 1)], vec![-1.0]).is_err());
    assert!(MrfProblem::new(2, vec![0.0; 4], vec![(0, 2)], vec![1.0]).is_err());
    assert!(MrfProblem::new(2, vec![0.0; 4], vec![(1, 1)], vec![1.0]).is_err());
    let p = MrfProblem::new(2, vec![0.0; 4], vec![(0, 1)], vec![1.0]).unwrap();
    assert!(p.solve(Some(&[0, 2])).is_err());
    assert!(p.solve(Some(&[0])).is_err());
    let q = MrfProblem::from_probabilities(&[1.0, 0.0], 2, vec![], vec![]).unwrap();
    assert!(q.unary.iter().all(|u| u.is_finite() && *u >= 0.0));
}

#[test]
fn single_label_is_trivial() {
    let p = MrfProblem::new(1, vec![0.5; 3], vec![(0, 1), (1, 2)], vec![1.0, 1.0]).unwrap();
    let s = p.solve(None).unwrap();
    assert_eq!(s.labels, vec![0, 0, 0]);
    assert!((s.energy - 1.5).abs() < 1e-12);
}

fn two_part_shape(seed: u64) -> (PointCloud, Vec<usize>, Vec<u8>) {
    let (lc, curves) = make_eval_cloud(&dihedral(90.0), 600, seed, NoiseProfile::NONE).unwrap();
    let flags = boundary_flags_near(&lc.cloud, &curves, lc.epsilon);
    (lc.cloud.clone(), lc.labels.iter().map(|&l| l as usize).collect(), flags)
}

#[test]
fn lambda_search_picks_zero_for_perfect_unaries() {
    let (cloud, gt, flags) = two_part_shape(4);
    let probs: Vec<f64> = gt.iter().flat_map(|&c| if c == 0 { [0.9, 0.1] } else { [0.1, 0.9] }).collect();
    let b: Vec<f64> = flags.iter().map(|&f| f as f64).collect();
    let input = RefineInput { cloud: &cloud, probabilities: &probs, n_labels: 2, boundary: Some(&b) };
    for mode in PairwiseMode::ALL {
        let choice = tune_lambda(&[(input.clone(), &gt)], mode).unwrap();
        assert_eq!((choice.lambda, choice.lambda_normal), (0.0, 0.0), "{mode}");
        assert_eq!(choice.mean_shape_iou, 1.0);
        assert_eq!(choice.solves, mode.grid().len());
        assert_eq!(choice.scores.len(), if mode == PairwiseMode::Both { 64 } else { 8 });
    }
    let no_b = RefineInput { boundary: None, ..input };
    assert!(tune_lambda(&[(no_b.clone(), &gt)], PairwiseMode::Boundary).is_err());
    assert!(tune_lambda(&[(no_b, &gt)], PairwiseMode::Normal).is_ok());
}

#[test]
fn lambda_search_matches_a_direct_rerun() {
    let mut shapes = Vec::new();
    for seed in 0..3 {
        let (cloud, gt, flags) = two_part_shape(10 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // noisy unaries: the right label is favored but often flipped
        let probs: Vec<f64> = gt
            .iter()
            .flat_map(|&c| {
                let q: f64 = rng.random_range(0.3..0.95);
                if c == 0 {
                    [q, 1.0 - q]
                } else {
                    [1.0 - q, q]
                }
            })
            .collect();
        let b: Vec<f64> = flags.iter().map(|&f| if f == 1 { 0.9 } else { 0.05 }).collect();
        shapes.push((cloud, gt, probs, b));
    }
    let inputs: Vec<(RefineInput<'_>, &[usize])> = shapes
        .iter()
        .map(|(c, gt, p, b)| {
            (RefineInput { cloud: c, probabilities: p, n_labels: 2, boundary: Some(b) }, gt.as_slice())
        })
        .collect();
    let choice = tune_lambda(&inputs, PairwiseMode::Boundary).unwrap();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &l in &LAMBDA_GRID {
        let mut sum = 0.0;
        for (inp, gt) in &inputs {
            let s = refine_shape(inp, l, 0.0).unwrap();
            sum += labeling_iou(&s.labels, gt, 2).unwrap().shape_iou;
        }
        let mean = sum / inputs.len() as f64;
        if mean > best.0 {
            best = (mean, l);
        }
    }
    assert_eq!(choice.lambda, best.1);
    assert_eq!(choice.mean_shape_iou, best.0);
    // smoothing helps on these unaries
    assert!(choice.lambda > 0.0);
    assert!(choice.mean_shape_iou > choice.scores[0].1);
}

#[test]
fn flood_fill_two_clusters_and_ring() {
    // two blobs on a line joined by flagged points
    let pos: Vec<[f64; 3]> = (0..30).map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect();
    let c = PointCloud::new(pos, vec![[0.0, 0.0, 1.0]; 30]).unwrap();
    let mut flags = vec![false; 30];
    for f in &mut flags[13..17] {
        *f = true;
    }
    let s = flood_fill_segments(&c, &flags, 4).unwrap();
    assert_eq!(s.count, 2);
    assert!(s.ids[..13].iter().all(|&v| v == 0));
    assert!(s.ids[13..17].iter().all(|&v| v == -1));
    assert!(s.ids[17..].iter().all(|&v| v == 1));

    let none = flood_fill_segments(&c, &[false; 30], 4).unwrap();
    assert_eq!(none.count, 1);
    let all = flood_fill_segments(&c, &[true; 30], 4).unwrap();
    assert_eq!(all.count, 0);
    assert!(all.ids.iter().all(|&v| v == -1));
    assert!(flood_fill_segments(&c, &[false; 3], 4).is_err());
}

#[test]
fn flood_fill_on_dihedral_recovers_the_parts() {
    for seed in 0..3 {
        let (cloud, gt, flags) = two_part_shape(20 + seed);
        let fl: Vec<bool> = flags.iter().map(|&f| f == 1).collect();
        let s = flood_fill_segments(&cloud, &fl, REFINE_K).unwrap();
        assert_eq!(s.count, 2);
        let keep: Vec<usize> = (0..cloud.len()).filter(|&i| !fl[i]).collect();
        let a: Vec<i64> = keep.iter().map(|&i| s.ids[i]).collect();
        let b: Vec<i64> = keep.iter().map(|&i| gt[i] as i64).collect();
        assert_eq!(rand_index(&a, &b).unwrap(), 1.0);
    }
}

fn rand_oracle(a: &[i64], b: &[i64]) -> f64 {
    let n = a.len();
    let mut agree = 0usize;
    let mut total = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            agree += ((a[i] == a[j]) == (b[i] == b[j])) as usize;
        }
    }
    agree as f64 / total as f64
}

#[test]
fn labeling_iou_examples() {
    let gt = [0, 0, 1, 1];
    let r = labeling_iou(&gt, &gt, 3).unwrap();
    assert_eq!(r.shape_iou, 1.0);
    assert_eq!(r.per_label, vec![Some(1.0), Some(1.0), None]);
    let c = labeling_iou(&[0, 0, 0, 0], &gt, 2).unwrap();
    assert_eq!(c.shape_iou, 0.25);
    assert!(labeling_iou(&[0, 5], &[0, 0], 2).is_err());
    assert!(labeling_iou(&[0], &[0, 0], 2).is_err());

    let a = labeling_iou(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
    let b = labeling_iou(&[2, 2], &[2, 2], 3).unwrap();
    let (shape, part) = mean_iou(&[a.clone(), b]).unwrap();
    assert!((shape - (a.shape_iou + 1.0) / 2.0).abs() < 1e-15);
    // label 0 and 1 come from the first shape only, label 2 from the second
    let want = (a.per_label[0].unwrap() + a.per_label[1].unwrap() + 1.0) / 3.0;
    assert!((part - want).abs() < 1e-15);
}

#[test]
fn unary_and_label_files_round_trip() {
    let u = UnaryFile::new(3, vec![0.2, 0.3, 0.5, 1.0, 0.0, 0.0]).unwrap();
    let text = u.to_text();
    assert!(text.starts_with("UNR1 2 3\n"));
    assert_eq!(UnaryFile::parse("m", &text).unwrap(), u);
    assert!(UnaryFile::parse("m", "UNR1 1 2\n0.5 0.6\n").is_err());
    assert!(UnaryFile::parse("m", "UNR1 1 2\n0.5\n").is_err());
    assert!(UnaryFile::parse("m", "UNR1 2 2\n0.5 0.5\n").is_err());
    assert!(UnaryFile::new(2, vec![1.5, -0.5]).is_err());

    let l = LabelFile { ids: vec![0, -1, 3] };
    let back = LabelFile::parse("m", &l.to_text()).unwrap();
    assert_eq!(back, l);
    assert!(back.labels(4).is_err());
    assert_eq!(LabelFile { ids: vec![1, 0] }.labels(2).unwrap(), vec![1, 0]);
    let e = LabelFile::parse("f.lbl", "LBL1 2\n1\nx\n").unwrap_err();
    assert!(e.to_string().contains("f.lbl:3"), "{e}");
}

fn iou_oracle(pred: &[usize], gt: &[usize], l: usize) -> f64 {
    // confusion matrix: row = gt, column = prediction
    let mut m = vec![vec![0usize; l]; l];
    for (&p, &g) in pred.iter().zip(gt) {
        m[g][p] += 1;
    }
    let mut ious = Vec::new();
    for c in 0..l {
        let tp = m[c][c];
        let fn_: usize = m[c].iter().sum::<usize>() - tp;
        let fp: usize = (0..l).map(|r| m[r][c]).sum::<usize>() - tp;
        if tp + fn_ + fp > 0 {
            ious.push(tp as f64 / (tp + fn_ + fp) as f64);
        }
    }
    ious.iter().sum::<f64>() / ious.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rand_index_matches_pair_count(a in prop::collection::vec(-1i64..4, 0..60), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<i64> = a.iter().map(|&v| if rng.random_bool(0.2) { rng.random_range(-1..4) } else { v }).collect();
        let r = rand_index(&a, &b).unwrap();
        if a.len() >= 2 {
            prop_assert!((r - rand_oracle(&a, &b)).abs() < 1e-12);
        } else {
            prop_assert_eq!(r, 1.0);
        }
        prop_assert_eq!(rand_index(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn shape_iou_matches_confusion_oracle(seed in any::<u64>(), n in 1usize..80, l in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..l)).collect();
        let gt: Vec<usize> = (0..n).map(|_| rng.random_range(0..l)).collect();
        let r = labeling_iou(&pred, &gt, l).unwrap();
        prop_assert!((r.shape_iou - iou_oracle(&pred, &gt, l)).abs() < 1e-12);
    }

    #[test]
    fn solve_never_increases_energy(seed in any::<u64>(), n in 1usize..25, l in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(&mut rng, n, l);
        let init: Vec<usize> = (0..n).map(|_| rng.random_range(0..l)).collect();
        let s = p.solve(Some(&init)).unwrap();
        prop_assert!(s.energy <= p.energy(&init));
        prop_assert!((p.energy(&s.labels) - s.energy).abs() < 1e-12);
    }

    #[test]
    fn flood_fill_is_permutation_invariant(seed in any::<u64>(), n in 6usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), 0.0]).collect();
        let flags: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let c = PointCloud::new(pos.clone(), vec![[0.0, 0.0, 1.0]; n]).unwrap();
        let base = flood_fill_segments(&c, &flags, 4).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pc = c.select(&perm);
        let pf: Vec<bool> = perm.iter().map(|&i| flags[i]).collect();
        let s = flood_fill_segments(&pc, &pf, 4).unwrap();
        prop_assert_eq!(s.count, base.count);
        let back: Vec<i64> = perm.iter().map(|&i| base.ids[i]).collect();
        prop_assert_eq!(rand_index(&s.ids, &back).unwrap(), 1.0);
        // boundary points stay -1
        for (i, &f) in pf.iter().enumerate() {
            prop_assert_eq!(s.ids[i] == -1, f);
        }
    }
}
