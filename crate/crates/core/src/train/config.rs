use std::path::PathBuf;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Constant,
    /// Multiply the rate by `gamma` at the start of each listed epoch (0-based).
    Step { milestones: Vec<usize>, gamma: f64 },
}

impl Schedule {
    /// ×0.1 at 50% and 75% of the run.
    pub fn step_default(epochs: usize) -> Self {
        Schedule::Step {
            milestones: vec![epochs / 2, epochs * 3 / 4],
            gamma: 0.1,
        }
    }

    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Step { milestones, gamma } => {
                let passed = milestones.iter().filter(|&&m| m > 0 && m <= epoch).count();
                base * gamma.powi(passed as i32)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augment {
    /// Zero-pad by 4 and crop back at a random offset.
    pub crop: bool,
    /// Horizontal flip with probability 1/2.
    pub mirror: bool,
}

impl Augment {
    pub fn any(&self) -> bool {
        self.crop || self.mirror
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds shuffling and augmentation. Weight init uses the network's own seed.
    pub seed: u64,
    pub augment: Augment,
    pub schedule: Schedule,
    /// Run BN layers with their running statistics during training.
    pub freeze_bn: bool,
    /// Where `epoch_NNN.gnck` checkpoints go, if anywhere.
    pub checkpoint_dir: Option<PathBuf>,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let epochs = 10;
        TrainConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 64,
            epochs,
            seed: 0,
            augment: Augment::default(),
            schedule: Schedule::step_default(epochs),
            freeze_bn: false,
            checkpoint_dir: None,
            eval_batch: 256,
        }
    }
}

impl TrainConfig {
    /// Sets the epoch count and rescales the default step schedule to match.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        if matches!(self.schedule, Schedule::Step { .. }) {
            self.schedule = Schedule::step_default(epochs);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::config("batch sizes must be at least 1"));
        }
        if let Schedule::Step { gamma, .. } = self.schedule {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::config(format!("schedule gamma must be positive, got {gamma}")));
            }
        }
        Ok(())
    }
}
