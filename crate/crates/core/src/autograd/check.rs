//! Central finite-difference verification of recorded gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Mode, Var};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Relative error bound per element.
    pub tolerance: f64,
    /// Gradients below this magnitude are compared in absolute terms.
    pub floor: f64,
    /// Check at most this many elements per parameter (all when `None`).
    pub per_tensor: Option<usize>,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-5, tolerance: 1e-4, floor: 1e-3, per_tensor: None, mode: Mode::Train, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Elements whose central difference straddles a kink or a switch in a
    /// discrete choice (max-pool argmax, neighbor set), detected because the
    /// analytic value matches one of the one-sided differences.
    pub kinks: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.failures == 0 && self.max_rel_error <= tolerance
    }
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares reverse-mode gradients of `loss` with central differences in
/// every (or a sampled subset of) parameter element.
pub fn gradient_check<F>(params: &ParamSet<f64>, loss: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new(opts.mode);
        let l = loss(&mut g, p)?;
        Ok(g.value(l).data()[0])
    };
    let mut analytic = params.clone();
    analytic.zero_grad();
    {
        let mut g = Graph::new(opts.mode);
        let l = loss(&mut g, params)?;
        g.backward(l)?;
        g.accumulate_into(&mut analytic)?;
    }
    let f0 = eval(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport { checked: 0, kinks: 0, failures: 0, max_rel_error: 0.0, worst: None };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut probe = params.clone();
    for name in names {
        let len = params.value(&name)?.data().len();
        let grad = analytic.get(&name)?.grad.clone().unwrap_or_else(|| vec![0.0; len]);
        let picks: Vec<usize> = match opts.per_tensor {
            Some(m) if m < len => {
                let mut v = sample(&mut rng, len, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        for e in picks {
            let orig = params.value(&name)?.data()[e];
            probe.get_mut(&name)?.value.data_mut()[e] = orig + opts.step;
            let fp = eval(&probe)?;
            probe.get_mut(&name)?.value.data_mut()[e] = orig - opts.step;
            let fm = eval(&probe)?;
            probe.get_mut(&name)?.value.data_mut()[e] = orig;
            let central = (fp - fm) / (2.0 * opts.step);
            let a = grad[e];
            report.checked += 1;
            let err = rel(a, central, opts.floor);
            if err <= opts.tolerance {
                if err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = Some((name.clone(), e));
                }
                continue;
            }
            let (fwd, bwd) = ((fp - f0) / opts.step, (f0 - fm) / opts.step);
            let one_sided = rel(a, fwd, opts.floor).min(rel(a, bwd, opts.floor));
            // a one-sided difference is only first-order accurate
            if one_sided <= 10.0 * opts.tolerance && rel(fwd, bwd, opts.floor) > 10.0 * opts.tolerance {
                report.kinks += 1;
            } else {
                report.failures += 1;
                if err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = Some((name.clone(), e));
                }
            }
        }
    }
    Ok(report)
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    use rand::Rng;
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized")
}

/// Scalar readout `sum(y @ r)` with a fixed random column `r`.
fn readout(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let cols = g.value(y).cols();
    let r = g.input(random(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), cols, 1));
    let z = g.matmul(y, r)?;
    Ok(g.sum(z))
}

/// Gradient checks for every differentiable layer on randomized shapes in
/// 64-bit precision.
pub fn layer_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    use rand::Rng;
    use std::sync::Arc;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GradCheckOptions { seed, ..GradCheckOptions::default() };
    let mut out = Vec::new();
    let (n, d, m) = (rng.random_range(5..9), rng.random_range(2..5), rng.random_range(2..5));

    let mut ps = ParamSet::new();
    ps.insert("x", random(&mut rng, n, d))?;
    ps.insert("w", random(&mut rng, d, m))?;
    ps.insert("b", random(&mut rng, 1, m))?;
    ps.insert("z", random(&mut rng, n, m))?;
    out.push((
        "affine",
        gradient_check(
            &ps,
            |g, p| {
                let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
                let y = g.linear(x, w, b)?;
                readout(g, y, seed)
            },
            &opts,
        )?,
    ));
    out.push((
        "add_sub_scale",
        gradient_check(
            &ps,
            |g, p| {
                let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "z")?);
                let y = g.matmul(x, w)?;
                let s = g.sub(y, b)?;
                let t = g.scale(s, 1.7);
                let u = g.add(t, y)?;
                readout(g, u, seed)
            },
            &opts,
        )?,
    ));

    let mut bn = ParamSet::new();
    bn.insert("x", random(&mut rng, n, m))?;
    bn.insert_batch_norm("bn", m)?;
    for name in ["bn.gamma", "bn.beta"] {
        *bn.get_mut(name)? = {
            let mut p = bn.get(name)?.clone();
            p.value = random(&mut rng, 1, m);
            p
        };
    }
    for (label, mode) in [("batch_norm_train", Mode::Train), ("batch_norm_eval", Mode::Eval)] {
        out.push((
            label,
            gradient_check(
                &bn,
                |g, p| {
                    let (x, ga, be) = (g.param(p, "x")?, g.param(p, "bn.gamma")?, g.param(p, "bn.beta")?);
                    let y = g.batch_norm(x, ga, be, "bn", p)?;
                    let y = g.sigmoid(y);
                    readout(g, y, seed)
                },
                &GradCheckOptions { mode, ..opts },
            )?,
        ));
    }

    let mut single = ParamSet::new();
    single.insert("x", random(&mut rng, n * 3, m))?;
    out.push((
        "leaky_relu",
        gradient_check(
            &single,
            |g, p| {
                let x = g.param(p, "x")?;
                let y = g.leaky_relu(x);
                readout(g, y, seed)
            },
            &opts,
        )?,
    ));
    out.push((
        "edge_max_pool",
        gradient_check(
            &single,
            |g, p| {
                let x = g.param(p, "x")?;
                let y = g.group_max(x, 3)?;
                readout(g, y, seed)
            },
            &opts,
        )?,
    ));
    let offsets = Arc::new(vec![0, n, 2 * n + 1, 3 * n]);
    out.push((
        "segment_max_broadcast",
        gradient_check(
            &single,
            |g, p| {
                let x = g.param(p, "x")?;
                let y = g.segment_max(x, &offsets)?;
                let y = g.segment_broadcast(y, offsets.clone())?;
                let y = g.sigmoid(y);
                let z = g.concat(&[y, x])?;
                readout(g, z, seed)
            },
            &opts,
        )?,
    ));
    out.push((
        "concat",
        gradient_check(
            &ps,
            |g, p| {
                let (x, z) = (g.param(p, "x")?, g.param(p, "z")?);
                let y = g.concat(&[z, x, z])?;
                readout(g, y, seed)
            },
            &opts,
        )?,
    ));
    out.push((
        "sigmoid",
        gradient_check(
            &single,
            |g, p| {
                let x = g.param(p, "x")?;
                let y = g.sigmoid(x);
                readout(g, y, seed)
            },
            &opts,
        )?,
    ));
    out.push((
        "softmax",
        gradient_check(
            &single,
            |g, p| {
                let x = g.param(p, "x")?;
                let y = g.softmax(x);
                readout(g, y, seed)
            },
            &opts,
        )?,
    ));

    let targets: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % m).collect();
    let mut logits = ParamSet::new();
    logits.insert("x", random(&mut rng, n, 1))?;
    logits.insert("y", random(&mut rng, n, m))?;
    let wb = super::boundary_weight(&targets).expect("has positives");
    out.push((
        "weighted_bce",
        gradient_check(
            &logits,
            |g, p| {
                let x = g.param(p, "x")?;
                let b = g.sigmoid(x);
                g.weighted_bce(b, &targets, &vec![wb; n], &vec![1.0; n])
            },
            &opts,
        )?,
    ));
    out.push((
        "softmax_cross_entropy",
        gradient_check(
            &logits,
            |g, p| {
                let y = g.param(p, "y")?;
                let s = g.softmax(y);
                g.cross_entropy(s, &labels, &vec![1.0; n])
            },
            &opts,
        )?,
    ));

    let k = 3;
    let idx: Arc<Vec<u32>> = Arc::new((0..n * k).map(|_| rng.random_range(0..n as u32)).collect());
    let mut ga = ParamSet::new();
    ga.insert("a", random(&mut rng, n, m))?;
    ga.insert("b", random(&mut rng, n, m))?;
    out.push((
        "gather_add",
        gradient_check(
            &ga,
            |g, p| {
                let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
                let y = g.gather_add(a, b, idx.clone(), k)?;
                let y = g.sigmoid(y);
                readout(g, y, seed)
            },
            &opts,
        )?,
    ));

    let frames: Arc<Vec<f64>> = Arc::new(random(&mut rng, n * 2, 9).into_data());
    let mut ef = ParamSet::new();
    ef.insert("x", random(&mut rng, n, 6))?;
    out.push((
        "edge_features",
        gradient_check(
            &ef,
            |g, p| {
                let x = g.param(p, "x")?;
                let y = g.edge_features(x, idx.clone(), frames.clone(), 2, k)?;
                let y = g.sigmoid(y);
                readout(g, y, seed)
            },
            &opts,
        )?,
    ));

    let mut tf = ParamSet::new();
    tf.insert("p", random(&mut rng, n, 3))?;
    tf.insert("m", random(&mut rng, 2, 9))?;
    let split = Arc::new(vec![0, n / 2, n]);
    out.push((
        "transform3",
        gradient_check(
            &tf,
            |g, p| {
                let (x, mm) = (g.param(p, "p")?, g.param(p, "m")?);
                let y = g.transform3(x, mm, split.clone())?;
                readout(g, y, seed)
            },
            &opts,
        )?,
    ));

    // well-conditioned matrices: identity plus a bounded perturbation
    let mut near_id = random(&mut rng, 2, 9).into_data();
    for row in near_id.chunks_exact_mut(9) {
        for (i, v) in row.iter_mut().enumerate() {
            *v = 0.3 * *v + if i % 4 == 0 { 1.0 } else { 0.0 };
        }
    }
    let mut inv = ParamSet::new();
    inv.insert("m", Tensor::new(2, 9, near_id)?)?;
    inv.insert("p", random(&mut rng, n, 3))?;
    out.push((
        "inverse_transpose3",
        gradient_check(
            &inv,
            |g, p| {
                let mm = g.param(p, "m")?;
                let y = g.inverse_transpose3(mm)?;
                readout(g, y, seed)
            },
            &opts,
        )?,
    ));
    out.push((
        "normalize_rows",
        gradient_check(
            &inv,
            |g, p| {
                let x = g.param(p, "p")?;
                let y = g.normalize_rows(x)?;
                readout(g, y, seed)
            },
            &opts,
        )?,
    ));
    Ok(out)
}
