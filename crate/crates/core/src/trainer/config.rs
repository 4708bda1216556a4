use crate::autograd::AdamConfig;
use crate::error::{Error, Result};
use crate::synthgen::NoiseProfile;
use crate::textio::KeyValues;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Clouds per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// The learning rate halves after every this many epochs.
    pub halving_period: usize,
    /// Augmentation applied afresh to every cloud at every step.
    pub noise: NoiseProfile,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            halving_period: 10,
            noise: NoiseProfile::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        // lr = 0 is allowed as a frozen-parameter diagnostic run
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("lr must be finite and nonnegative, got {}", self.lr)));
        }
        if self.halving_period == 0 {
            return Err(Error::invalid("halving_period must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.noise.sigma >= 0.0) || !(self.noise.angle_limit_deg >= 0.0) {
            return Err(Error::invalid("noise parameters must be nonnegative"));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = epoch.saturating_sub(1) / self.halving_period;
        self.lr * 0.5f64.powi(halvings.min(1000) as i32)
    }

    pub fn adam(&self, epoch: usize) -> AdamConfig {
        AdamConfig { lr: self.lr_at(epoch), beta1: self.beta1, beta2: self.beta2, ..AdamConfig::default() }
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("halving_period", self.halving_period.to_string()),
            ("noise_sigma", self.noise.sigma.to_string()),
            ("noise_angle_deg", self.noise.angle_limit_deg.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Consumes the training keys present in `kv`, defaulting the rest.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = TrainConfig::default();
        let c = TrainConfig {
            epochs: kv.take("epochs")?.unwrap_or(d.epochs),
            batch_size: kv.take("batch_size")?.unwrap_or(d.batch_size),
            lr: kv.take("lr")?.unwrap_or(d.lr),
            beta1: kv.take("beta1")?.unwrap_or(d.beta1),
            beta2: kv.take("beta2")?.unwrap_or(d.beta2),
            halving_period: kv.take("halving_period")?.unwrap_or(d.halving_period),
            noise: NoiseProfile {
                sigma: kv.take("noise_sigma")?.unwrap_or(d.noise.sigma),
                angle_limit_deg: kv.take("noise_angle_deg")?.unwrap_or(d.noise.angle_limit_deg),
            },
            seed: kv.take("seed")?.unwrap_or(d.seed),
        };
        c.validate()?;
        Ok(c)
    }
}
