use crate::error::{config_err, Result};
use crate::kv::KeyValues;
use crate::losses::LossConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub lr_decay: f64,
    /// Decoupled decay on convolution kernels.
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            base_lr: 0.002,
            lr_decay: 0.9,
            weight_decay: 5e-5,
            epochs: 10,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be >= 1"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(config_err("lr_decay must lie in (0, 1]"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(config_err("weight_decay must be >= 0"));
        }
        if !(self.base_lr > 0.0) {
            return Err(config_err("base_lr must be > 0"));
        }
        self.loss.validate()
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        super::optim::lr_schedule(epoch, self.base_lr, self.lr_decay)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("batch_size", self.batch_size);
        kv.set("base_lr", self.base_lr);
        kv.set("lr_decay", self.lr_decay);
        kv.set("weight_decay", self.weight_decay);
        kv.set("epochs", self.epochs);
        kv.set("seed", self.seed);
        kv.merge_prefixed("loss", &self.loss.to_kv());
        kv
    }

    pub fn apply_kv(&mut self, kv: &KeyValues) -> Result<()> {
        kv.read("batch_size", &mut self.batch_size)?;
        kv.read("base_lr", &mut self.base_lr)?;
        kv.read("lr_decay", &mut self.lr_decay)?;
        kv.read("weight_decay", &mut self.weight_decay)?;
        kv.read("epochs", &mut self.epochs)?;
        kv.read("seed", &mut self.seed)?;
        self.loss.apply_kv(&kv.section("loss"))?;
        self.validate()
    }
}
