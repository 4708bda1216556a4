//! Reverse-mode differentiation over the layer set of the boundary network,
//! with the Adam optimizer and text checkpoints.

pub mod check;
mod graph;
mod params;
mod tensor;

pub use graph::{Graph, Mode, RunningUpdate, Var, BN_EPS, BN_MOMENTUM, LEAKY_SLOPE, PROB_CLAMP};
pub use params::{AdamConfig, Param, ParamSet};
pub use tensor::Tensor;

use rand::Rng;

use crate::error::{Error, Result};
use crate::Real;

/// Ratio of non-boundary to boundary targets; `None` without boundary targets.
pub fn boundary_weight(targets: &[u8]) -> Option<f64> {
    let pos = targets.iter().filter(|&&t| t == 1).count();
    (pos > 0).then(|| (targets.len() - pos) as f64 / pos as f64)
}

/// Registers `prefix.l{i}.{w,b}` (and `prefix.l{i}.bn` when enabled) for
/// each width.
pub fn init_shared_mlp<T: Real, R: Rng + ?Sized>(
    params: &mut ParamSet<T>,
    prefix: &str,
    input: usize,
    widths: &[usize],
    batch_norm: bool,
    rng: &mut R,
) -> Result<()> {
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::invalid(format!("{prefix}: widths must be nonempty and positive")));
    }
    let mut d = input;
    for (i, &w) in widths.iter().enumerate() {
        params.insert_uniform(&format!("{prefix}.l{i}.w"), d, w, rng)?;
        params.insert(&format!("{prefix}.l{i}.b"), Tensor::zeros(1, w))?;
        if batch_norm {
            params.insert_batch_norm(&format!("{prefix}.l{i}.bn"), w)?;
        }
        d = w;
    }
    Ok(())
}

/// Affine, batch norm (if registered) and leaky rectifier per layer, shared
/// across all rows of `x`.
pub fn shared_mlp<T: Real>(g: &mut Graph<T>, x: Var, params: &ParamSet<T>, prefix: &str) -> Result<Var> {
    let mut h = x;
    let mut i = 0;
    while params.contains(&format!("{prefix}.l{i}.w")) {
        let w = g.param(params, &format!("{prefix}.l{i}.w"))?;
        let b = g.param(params, &format!("{prefix}.l{i}.b"))?;
        h = g.linear(h, w, b)?;
        h = batch_norm_if_present(g, h, params, &format!("{prefix}.l{i}.bn"))?;
        h = g.leaky_relu(h);
        i += 1;
    }
    if i == 0 {
        return Err(Error::invalid(format!("no layers registered under {prefix}")));
    }
    Ok(h)
}

/// Applies `name` batch norm when its affine parameters are registered.
pub fn batch_norm_if_present<T: Real>(g: &mut Graph<T>, h: Var, params: &ParamSet<T>, name: &str) -> Result<Var> {
    let gname = format!("{name}.gamma");
    if !params.contains(&gname) {
        return Ok(h);
    }
    let gamma = g.param(params, &gname)?;
    let beta = g.param(params, &format!("{name}.beta"))?;
    g.batch_norm(h, gamma, beta, name, params)
}

#[cfg(test)]
mod tests;
