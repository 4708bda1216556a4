use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn sum_of_params_has_unit_gradient() {
    let mut ps = ParamSet::<f64>::new();
    ps.insert("a", Tensor::from_f64(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap()).unwrap();
    let mut g = Graph::new(Mode::Train);
    let a = g.param(&ps, "a").unwrap();
    let s = g.sum(a);
    g.backward(s).unwrap();
    g.accumulate_into(&mut ps).unwrap();
    assert_eq!(ps.get("a").unwrap().grad.as_deref(), Some(&[1.0; 6][..]));
}

#[test]
fn backward_state_errors() {
    let mut g = Graph::<f64>::new(Mode::Eval);
    let x = g.input(Tensor::zeros(2, 2));
    assert!(matches!(g.backward(x), Err(crate::Error::InvalidArgument(_))));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(crate::Error::State(_))));
    let fresh = Graph::<f64>::new(Mode::Eval);
    let mut ps = ParamSet::new();
    assert!(matches!(fresh.accumulate_into(&mut ps), Err(crate::Error::State(_))));
    let other = &mut Graph::<f64>::new(Mode::Eval);
    assert!(matches!(other.backward(s), Err(crate::Error::State(_))));
}

#[test]
fn max_pool_ties_route_to_lowest_index() {
    let mut g = Graph::<f64>::new(Mode::Eval);
    let x = g.input(Tensor::from_f64(4, 2, &[1.0, 5.0, 3.0, 5.0, 3.0, 2.0, 0.0, 5.0]).unwrap());
    let m = g.group_max(x, 4).unwrap();
    assert_eq!(g.value(m).data(), &[3.0, 5.0]);
    let s = g.sum(m);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

    let mut g = Graph::<f64>::new(Mode::Eval);
    let x = g.input(Tensor::from_f64(3, 1, &[2.0, 2.0, 7.0]).unwrap());
    let m = g.segment_max(x, &[0, 2, 3]).unwrap();
    let s = g.sum(m);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 1.0]);
}

#[test]
fn weighted_bce_examples() {
    let mut g = Graph::<f64>::new(Mode::Eval);
    let p = g.input(Tensor::from_f64(2, 1, &[0.5, 0.5]).unwrap());
    let l = g.weighted_bce(p, &[1, 0], &[1.0, 1.0], &[1.0, 1.0]).unwrap();
    assert!((g.value(l).data()[0] - 2.0 * 2f64.ln()).abs() < 1e-15);
    assert!((g.value(l).data()[0] - 1.386294).abs() < 1e-6);

    assert_eq!(boundary_weight(&[1, 0, 0, 0]), Some(3.0));
    assert_eq!(boundary_weight(&[0, 0]), None);

    let t = [1u8, 0, 1, 0, 0];
    let mut g = Graph::<f64>::new(Mode::Eval);
    let p = g.input(Tensor::from_f64(5, 1, &t.map(|v| v as f64)).unwrap());
    let w = vec![1.5; 5];
    let l = g.weighted_bce(p, &t, &w, &[1.0; 5]).unwrap();
    let bound = 5.0 * 1.5 * (1.0 / (1.0 - PROB_CLAMP)).ln();
    assert!(g.value(l).data()[0] <= bound + 1e-15);
    assert!(g.weighted_bce(p, &[2, 0, 0, 0, 0], &w, &w).is_err());
}

#[test]
fn adam_first_step_moves_by_lr() {
    for g0 in [3.0, -0.02] {
        let mut ps = ParamSet::<f64>::new();
        ps.insert("w", Tensor::scalar(0.7)).unwrap();
        ps.add_grad("w", &[g0]).unwrap();
        ps.adam_step(&AdamConfig { lr: 0.01, eps: 1e-12, ..AdamConfig::default() }).unwrap();
        let dw = ps.value("w").unwrap().data()[0] - 0.7;
        assert!((dw + 0.01 * f64::signum(g0)).abs() < 1e-9, "{dw}");
        assert_eq!(ps.step(), 1);
    }
}

#[test]
fn adam_zero_gradient_keeps_values_and_decays_moments() {
    let mut ps = ParamSet::<f64>::new();
    ps.insert("w", Tensor::from_f64(1, 2, &[0.3, -0.4]).unwrap()).unwrap();
    ps.add_grad("w", &[1.0, 1.0]).unwrap();
    ps.adam_step(&AdamConfig::default()).unwrap();
    let before = ps.get("w").unwrap().clone();
    ps.add_grad("w", &[0.0, 0.0]).unwrap();
    ps.adam_step(&AdamConfig::default()).unwrap();
    let after = ps.get("w").unwrap();
    for i in 0..2 {
        assert!(after.first_moment()[i].abs() < before.first_moment()[i].abs());
        assert!(after.second_moment()[i] < before.second_moment()[i]);
    }
    // the update still uses the decayed first moment, so compare a fresh set
    let mut fresh = ParamSet::<f64>::new();
    fresh.insert("w", Tensor::from_f64(1, 2, &[0.3, -0.4]).unwrap()).unwrap();
    fresh.add_grad("w", &[0.0, 0.0]).unwrap();
    fresh.adam_step(&AdamConfig::default()).unwrap();
    assert_eq!(fresh.value("w").unwrap().data(), &[0.3, -0.4]);
}

#[test]
fn adam_missing_gradient_is_state_error() {
    let mut ps = ParamSet::<f64>::new();
    ps.insert("w", Tensor::scalar(1.0)).unwrap();
    assert!(matches!(ps.adam_step(&AdamConfig::default()), Err(crate::Error::State(_))));
}

#[test]
fn adam_on_square_matches_scalar_recurrence() {
    let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
    let mut ps = ParamSet::<f64>::new();
    ps.insert("w", Tensor::scalar(1.0)).unwrap();
    let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    let mut trace = Vec::new();
    for t in 1..=50 {
        let mut g = Graph::new(Mode::Train);
        let x = g.param(&ps, "w").unwrap();
        let sq = g.matmul(x, x).unwrap();
        let l = g.sum(sq);
        g.backward(l).unwrap();
        g.accumulate_into(&mut ps).unwrap();
        ps.adam_step(&cfg).unwrap();

        let gr = 2.0 * w;
        m = 0.9 * m + 0.1 * gr;
        v = 0.999 * v + 0.001 * gr * gr;
        w -= 0.1 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        let got = ps.value("w").unwrap().data()[0];
        assert!((got - w).abs() < 1e-12);
        trace.push(got.abs());
    }
    let first_below = trace.iter().position(|&a| a < 0.2).unwrap();
    assert!(trace[..=first_below].windows(2).all(|p| p[1] < p[0]));
    assert!(*trace.last().unwrap() < 0.2);
}

#[test]
fn zero_learning_rate_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ps = ParamSet::<f32>::new();
    ps.insert_uniform("w", 4, 3, &mut rng).unwrap();
    let before = ps.value("w").unwrap().clone();
    ps.add_grad("w", &[0.5; 12]).unwrap();
    ps.adam_step(&AdamConfig { lr: 0.0, ..AdamConfig::default() }).unwrap();
    assert_eq!(ps.value("w").unwrap(), &before);
}

#[test]
fn identity_layer_without_batch_norm_is_leaky() {
    let mut ps = ParamSet::<f64>::new();
    let eye: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
    ps.insert("m.l0.w", Tensor::new(4, 4, eye).unwrap()).unwrap();
    ps.insert("m.l0.b", Tensor::zeros(1, 4)).unwrap();
    let x = Tensor::from_f64(2, 4, &[1.0, -1.0, 0.0, 2.5, -3.0, 0.25, -0.5, 4.0]).unwrap();
    let mut g = Graph::new(Mode::Eval);
    let xv = g.input(x.clone());
    let y = shared_mlp(&mut g, xv, &ps, "m").unwrap();
    let expect: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.2 * v }).collect();
    assert_eq!(g.value(y).data(), &expect[..]);
}

#[test]
fn zero_weights_give_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ps = ParamSet::<f64>::new();
    init_shared_mlp(&mut ps, "m", 4, &[5, 3], true, &mut rng).unwrap();
    for name in ["m.l0.w", "m.l1.w"] {
        ps.get_mut(name).unwrap().value.data_mut().fill(0.0);
    }
    let mut g = Graph::new(Mode::Train);
    let x = g.input(rand_tensor(&mut rng, 6, 4));
    let y = shared_mlp(&mut g, x, &ps, "m").unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn two_layer_mlp_matches_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ps = ParamSet::<f64>::new();
    init_shared_mlp(&mut ps, "m", 4, &[5, 3], true, &mut rng).unwrap();
    for name in ["m.l0.bn.gamma", "m.l0.bn.beta", "m.l1.bn.gamma", "m.l1.bn.beta", "m.l0.b", "m.l1.b"] {
        let p = ps.get_mut(name).unwrap();
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    // a 2 x 3 x 4 input flattened over its first two axes
    let x = rand_tensor(&mut rng, 6, 4);
    let mut g = Graph::new(Mode::Train);
    let xv = g.input(x.clone());
    let y = shared_mlp(&mut g, xv, &ps, "m").unwrap();

    let mut h: Vec<Vec<f64>> = (0..6).map(|r| x.row(r).to_vec()).collect();
    for l in 0..2 {
        let w = ps.value(&format!("m.l{l}.w")).unwrap();
        let b = ps.value(&format!("m.l{l}.b")).unwrap();
        let gamma = ps.value(&format!("m.l{l}.bn.gamma")).unwrap();
        let beta = ps.value(&format!("m.l{l}.bn.beta")).unwrap();
        let (din, dout) = (w.rows(), w.cols());
        let mut z = vec![vec![0.0; dout]; 6];
        for r in 0..6 {
            for o in 0..dout {
                z[r][o] = b.at(0, o) + (0..din).map(|i| h[r][i] * w.at(i, o)).sum::<f64>();
            }
        }
        for o in 0..dout {
            let mean = (0..6).map(|r| z[r][o]).sum::<f64>() / 6.0;
            let var = (0..6).map(|r| (z[r][o] - mean).powi(2)).sum::<f64>() / 6.0;
            for r in 0..6 {
                let v = gamma.at(0, o) * (z[r][o] - mean) / (var + BN_EPS).sqrt() + beta.at(0, o);
                z[r][o] = if v > 0.0 { v } else { 0.2 * v };
            }
        }
        h = z;
    }
    let got = g.value(y);
    for r in 0..6 {
        for c in 0..3 {
            assert!((got.at(r, c) - h[r][c]).abs() < 1e-12);
        }
    }
    assert_eq!(g.running_updates().len(), 2);
}

#[test]
fn eval_mode_uses_running_statistics() {
    let mut ps = ParamSet::<f64>::new();
    ps.insert_batch_norm("bn", 2).unwrap();
    let mut g = Graph::new(Mode::Train);
    let x = g.input(Tensor::from_f64(2, 2, &[0.0, 2.0, 4.0, 6.0]).unwrap());
    let (ga, be) = (g.param(&ps, "bn.gamma").unwrap(), g.param(&ps, "bn.beta").unwrap());
    g.batch_norm(x, ga, be, "bn", &ps).unwrap();
    let ups = g.running_updates().to_vec();
    ps.apply_running_updates(&ups).unwrap();
    assert_eq!(ps.buffer("bn.mean").unwrap().data(), &[1.0, 2.0]);
    assert_eq!(ps.buffer("bn.var").unwrap().data(), &[2.5, 2.5]);

    let mut e = Graph::new(Mode::Eval);
    let x = e.input(Tensor::from_f64(1, 2, &[1.0, 2.0]).unwrap());
    let (ga, be) = (e.param(&ps, "bn.gamma").unwrap(), e.param(&ps, "bn.beta").unwrap());
    let y = e.batch_norm(x, ga, be, "bn", &ps).unwrap();
    assert_eq!(e.value(y).data(), &[0.0, 0.0]);
    assert!(e.running_updates().is_empty());
}

#[test]
fn edge_features_rotate_differences() {
    // frame rows u, v, n with n = z; neighbor straight up the normal
    let mut g = Graph::<f64>::new(Mode::Eval);
    let x = g.input(Tensor::from_f64(2, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 2.0]).unwrap());
    let frames =
        Arc::new(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
    let e = g.edge_features(x, Arc::new(vec![1, 0]), frames, 1, 1).unwrap();
    assert_eq!(g.value(e).row(0), &[0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    assert_eq!(g.value(e).row(1), &[0.0, 0.0, 2.0, 0.0, 0.0, 2.0]);
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ps = ParamSet::<f64>::new();
    init_shared_mlp(&mut ps, "m", 3, &[4, 2], true, &mut rng).unwrap();
    for name in ps.names().map(str::to_string).collect::<Vec<_>>() {
        let n = ps.value(&name).unwrap().data().len();
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        ps.add_grad(&name, &g).unwrap();
    }
    ps.adam_step(&AdamConfig::default()).unwrap();
    let back = ParamSet::<f64>::parse("c", &ps.to_text()).unwrap();
    assert_eq!(back, ps);
    assert_eq!(back.step(), 1);

    let p32: ParamSet<f32> = ps.cast();
    let back32 = ParamSet::<f32>::parse("c", &p32.to_text()).unwrap();
    assert_eq!(back32, p32);
    assert_eq!(back32.to_text(), p32.to_text());
}

#[test]
fn malformed_checkpoints_rejected() {
    assert!(ParamSet::<f64>::parse("c", "CKPT2 0\n").is_err());
    assert!(ParamSet::<f64>::parse("c", "CKPT1 1\nw\n1 2\n0.5\n").is_err());
    assert!(ParamSet::<f64>::parse("c", "CKPT1 1\nw\n1 1\nnan\n").is_err());
    assert!(ParamSet::<f64>::parse("c", "CKPT1 1\nadam.m:w\n1 1\n0\n").is_err());
    let err = ParamSet::<f64>::parse("c.ckpt", "CKPT1 1\nw\n1 x\n").unwrap_err().to_string();
    assert!(err.starts_with("c.ckpt:3:"), "{err}");
}

#[test]
fn gradient_check_detects_a_wrong_gradient() {
    // f = sum(x * x) through matmul of a row with its transpose-equivalent
    let mut ps = ParamSet::<f64>::new();
    ps.insert("x", Tensor::from_f64(1, 3, &[0.3, -0.7, 1.1]).unwrap()).unwrap();
    ps.insert("y", Tensor::from_f64(3, 1, &[0.5, 0.2, -0.4]).unwrap()).unwrap();
    let ok = check::gradient_check(
        &ps,
        |g, p| {
            let x = g.param(p, "x")?;
            let y = g.param(p, "y")?;
            let z = g.matmul(x, y)?;
            let s = g.sigmoid(z);
            Ok(g.sum(s))
        },
        &check::GradCheckOptions::default(),
    )
    .unwrap();
    assert!(ok.passed(1e-4), "{ok:?}");
    assert_eq!(ok.checked, 6);
}
