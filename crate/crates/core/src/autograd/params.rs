use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;

use super::graph::{RunningUpdate, BN_MOMENTUM};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::textio::{self, Lines};
use crate::Real;

const BUFFER_PREFIX: &str = "running:";
const M_PREFIX: &str = "adam.m:";
const V_PREFIX: &str = "adam.v:";
const STEP_NAME: &str = "adam.step";

/// A trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Param<T> {
    fn new(value: Tensor<T>) -> Self {
        let n = value.data().len();
        Param { value, grad: None, m: vec![T::zero(); n], v: vec![T::zero(); n] }
    }

    pub fn first_moment(&self) -> &[T] {
        &self.m
    }

    pub fn second_moment(&self) -> &[T] {
        &self.v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named parameters in insertion order, batch-norm running buffers and a
/// step count shared by every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    params: IndexMap<String, Param<T>>,
    buffers: IndexMap<String, Tensor<T>>,
    step: u64,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet { params: IndexMap::new(), buffers: IndexMap::new(), step: 0 }
    }
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains(char::is_whitespace) || name.contains(':') {
        return Err(Error::invalid(format!("parameter name {name:?} must be nonempty without spaces or ':'")));
    }
    Ok(())
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        check_name(name)?;
        if self.params.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        self.params.insert(name.to_string(), Param::new(value));
        Ok(())
    }

    /// Uniform in `+-1/sqrt(rows)`, the fan-in of an `x @ w` weight.
    pub fn insert_uniform<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> Result<()> {
        let bound = 1.0 / (rows as f64).sqrt();
        let data = (0..rows * cols).map(|_| T::c(rng.random_range(-bound..bound))).collect();
        self.insert(name, Tensor::new(rows, cols, data)?)
    }

    pub fn insert_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        check_name(name)?;
        self.buffers.insert(name.to_string(), value);
        Ok(())
    }

    /// Affine pair `name.gamma = 1`, `name.beta = 0` plus running buffers
    /// `name.mean = 0`, `name.var = 1`.
    pub fn insert_batch_norm(&mut self, name: &str, width: usize) -> Result<()> {
        self.insert(&format!("{name}.gamma"), Tensor::filled(1, width, T::one()))?;
        self.insert(&format!("{name}.beta"), Tensor::zeros(1, width))?;
        self.insert_buffer(&format!("{name}.mean"), Tensor::zeros(1, width))?;
        self.insert_buffer(&format!("{name}.var"), Tensor::filled(1, width, T::one()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.params.get(name).ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.params.get_mut(name).ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.get(name)?.value)
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffers.get(name).ok_or_else(|| Error::invalid(format!("unknown buffer {name}")))
    }

    pub fn buffer_names(&self) -> impl Iterator<Item = &str> {
        self.buffers.keys().map(String::as_str)
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|p| p.value.data().len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    pub fn add_grad(&mut self, name: &str, g: &[T]) -> Result<()> {
        let p = self.get_mut(name)?;
        if g.len() != p.value.data().len() {
            return Err(Error::invalid(format!(
                "gradient for {name} has {} values, expected {}",
                g.len(),
                p.value.data().len()
            )));
        }
        match &mut p.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => p.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    /// Blends observed batch statistics into the running buffers.
    pub fn apply_running_updates(&mut self, updates: &[RunningUpdate<T>]) -> Result<()> {
        let keep = T::c(1.0 - BN_MOMENTUM);
        let take = T::c(BN_MOMENTUM);
        for u in updates {
            for (suffix, observed) in [("mean", &u.mean), ("var", &u.var)] {
                let name = format!("{}.{suffix}", u.name);
                let buf =
                    self.buffers.get_mut(&name).ok_or_else(|| Error::invalid(format!("unknown buffer {name}")))?;
                if buf.data().len() != observed.len() {
                    return Err(Error::invalid(format!("buffer {name} width mismatch")));
                }
                buf.data_mut().iter_mut().zip(observed).for_each(|(r, &o)| *r = keep * *r + take * o);
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam update of every parameter; clears gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some((name, _)) = self.params.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::state(format!("parameter {name} has no gradient")));
        }
        self.step += 1;
        let t = self.step as f64;
        let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
        let (c1, c2) = (T::c(1.0 - cfg.beta1.powf(t)), T::c(1.0 - cfg.beta2.powf(t)));
        let (lr, eps) = (T::c(cfg.lr), T::c(cfg.eps));
        for p in self.params.values_mut() {
            let g = p.grad.take().expect("checked above");
            for (((w, m), v), &gi) in p.value.data_mut().iter_mut().zip(&mut p.m).zip(&mut p.v).zip(&g) {
                *m = b1 * *m + (T::one() - b1) * gi;
                *v = b2 * *v + (T::one() - b2) * gi * gi;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    let conv = |v: &[T]| v.iter().map(|x| U::c(x.f64())).collect();
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            grad: p.grad.as_deref().map(conv),
                            m: conv(&p.m),
                            v: conv(&p.v),
                        },
                    )
                })
                .collect(),
            buffers: self.buffers.iter().map(|(k, b)| (k.clone(), b.cast())).collect(),
            step: self.step,
        }
    }

    /// CKPT1 text: parameters, then running buffers, Adam moments and the
    /// step count under reserved prefixes.
    pub fn to_text(&self) -> String {
        let count = 2 * self.params.len() + self.params.len() + self.buffers.len() + 1;
        let mut out = format!("CKPT1 {count}\n");
        let mut entry = |name: &str, rows: usize, cols: usize, data: &mut dyn Iterator<Item = f64>| {
            out.push_str(name);
            out.push('\n');
            out.push_str(&format!("{rows} {cols}\n"));
            for (i, v) in data.enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                textio::write_sig(&mut out, v, T::ROUNDTRIP_DIGITS);
            }
            out.push('\n');
        };
        for (name, p) in &self.params {
            entry(name, p.value.rows(), p.value.cols(), &mut p.value.data().iter().map(|v| v.f64()));
        }
        for (name, b) in &self.buffers {
            entry(&format!("{BUFFER_PREFIX}{name}"), b.rows(), b.cols(), &mut b.data().iter().map(|v| v.f64()));
        }
        for (name, p) in &self.params {
            let [r, c] = p.value.shape();
            entry(&format!("{M_PREFIX}{name}"), r, c, &mut p.m.iter().map(|v| v.f64()));
            entry(&format!("{V_PREFIX}{name}"), r, c, &mut p.v.iter().map(|v| v.f64()));
        }
        entry(STEP_NAME, 1, 1, &mut std::iter::once(self.step as f64));
        out
    }

    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut lines = Lines::new(source, text);
        let header = lines.next_fields()?;
        if header.len() != 2 || header[0] != "CKPT1" {
            return Err(lines.error("expected header `CKPT1 <P>`"));
        }
        let count = lines.parse_usize(header[1])?;
        let mut set = ParamSet::new();
        let mut moments: Vec<(String, bool, Tensor<T>)> = Vec::new();
        let mut step = None;
        for _ in 0..count {
            let name = lines.next_raw()?.trim().to_string();
            let shape = lines.next_fields()?;
            if shape.len() != 2 {
                return Err(lines.error("expected shape line `<rows> <cols>`"));
            }
            let (rows, cols) = (lines.parse_usize(shape[0])?, lines.parse_usize(shape[1])?);
            let vals = if rows * cols == 0 { Vec::new() } else { lines.next_fields()? };
            if vals.len() != rows * cols {
                return Err(lines.error(format!("expected {} values, found {}", rows * cols, vals.len())));
            }
            let data = vals.iter().map(|t| lines.parse_f64(t).map(T::c)).collect::<Result<Vec<T>>>()?;
            let t = Tensor::new(rows, cols, data)?;
            let fail = |e: Error| lines.error(e.to_string());
            if name == STEP_NAME {
                step = Some(t.data()[0].f64() as u64);
            } else if let Some(b) = name.strip_prefix(BUFFER_PREFIX) {
                set.insert_buffer(b, t).map_err(fail)?;
            } else if let Some(p) = name.strip_prefix(M_PREFIX) {
                moments.push((p.to_string(), true, t));
            } else if let Some(p) = name.strip_prefix(V_PREFIX) {
                moments.push((p.to_string(), false, t));
            } else {
                set.insert(&name, t).map_err(fail)?;
            }
        }
        lines.expect_end()?;
        for (name, first, t) in moments {
            let p = set.get_mut(&name).map_err(|e| lines.error(e.to_string()))?;
            if p.value.shape() != t.shape() {
                return Err(lines.error(format!("moment shape mismatch for {name}")));
            }
            if first {
                p.m = t.into_data();
            } else {
                p.v = t.into_data();
            }
        }
        set.step = step.unwrap_or(0);
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(Error::from)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&textio::source_name(path), &textio::read_file(path)?)
    }

    /// Same names, shapes and buffer names.
    pub fn same_layout(&self, other: &ParamSet<T>) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((a, p), (b, q))| a == b && p.value.shape() == q.value.shape())
            && self.buffers.keys().eq(other.buffers.keys())
    }
}
