//! Mini-batch SGD training, evaluation and hyperparameter sweeps.

pub mod augment;
pub mod config;
pub mod data;
pub mod sgd;
pub mod sweep;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;

pub use augment::augment;
pub use config::{Augment, Schedule, TrainConfig};
pub use data::{Dataset, DatasetKind, Normalization, Split};
pub use sgd::{sgd_update, Sgd};
pub use sweep::{sweep, sweep_csv, SweepParam, SweepRow};

use crate::arch::{checkpoint, Network};
use crate::error::{Error, Result};
use crate::layer::{Mode, Rng};
use crate::ops::softmax_cross_entropy;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean training loss over the epoch's mini-batches, weighted by batch size.
    pub loss: f64,
    /// Eval-mode accuracy on the un-augmented train split after the epoch.
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    /// `epoch,loss,train_acc,test_acc`; the last column is empty without a test split.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc,test_acc\n");
        for e in &self.epochs {
            let test = e.test_acc.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.loss, e.train_acc, test);
        }
        out
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

fn check_compatible<T: Scalar>(net: &Network<T>, data: &Dataset) -> Result<()> {
    let spec = net.spec();
    if spec.num_classes != data.num_classes {
        return Err(Error::config(format!(
            "network predicts {} classes, dataset has {}",
            spec.num_classes, data.num_classes
        )));
    }
    if spec.input.0 != data.channels {
        return Err(Error::config(format!(
            "network takes {} input channels, dataset images have {}",
            spec.input.0, data.channels
        )));
    }
    Ok(())
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode class predictions for every sample.
pub fn predict<T: Scalar>(net: &Network<T>, data: &Dataset, batch: usize) -> Result<Vec<usize>> {
    check_compatible(net, data)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch.max(1)) {
        let (x, _) = data.batch::<T>(chunk)?;
        let logits = net.infer(&x)?;
        out.extend(logits.data().chunks(data.num_classes).map(argmax));
    }
    Ok(out)
}

pub fn accuracy<T: Scalar>(net: &Network<T>, data: &Dataset, batch: usize) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let pred = predict(net, data, batch)?;
    let hits = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Mean cross-entropy of a fixed batch in eval mode.
pub fn batch_loss<T: Scalar>(net: &Network<T>, x: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let logits = net.infer(x)?;
    Ok(softmax_cross_entropy(&logits, labels)?.0.as_f64())
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.gnck")
}

/// Trains `net` in place; see [`train_with`].
pub fn train<T: Scalar>(net: &mut Network<T>, data: &Split, config: &TrainConfig) -> Result<History> {
    train_with(net, data, config, |_| {})
}

/// Shuffled mini-batch SGD. Calls `on_epoch` after each epoch and, when a checkpoint
/// directory is configured, writes `epoch_NNN.gnck` there.
pub fn train_with<T: Scalar>(
    net: &mut Network<T>,
    data: &Split,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<History> {
    config.validate()?;
    check_compatible(net, &data.train)?;
    if data.train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mode = if config.freeze_bn { Mode::Eval } else { Mode::Train };
    let mut rng = Rng::seed_from_u64(config.seed);
    let mut sgd = Sgd::new();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..config.epochs {
        let lr = config.schedule.lr_at(config.lr, epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (mut x, labels) = data.train.batch::<T>(chunk)?;
            if config.augment.any() {
                x = augment(&x, config.augment, &mut rng)?;
            }
            let logits = net.forward(&x, mode)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            net.zero_grad();
            net.backward(&grad)?;
            sgd.step(net, lr, config.momentum, config.weight_decay);
            total += loss.as_f64() * chunk.len() as f64;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: total / data.train.len() as f64,
            train_acc: accuracy(net, &data.train, config.eval_batch)?,
            test_acc: match &data.test {
                Some(t) => Some(accuracy(net, t, config.eval_batch)?),
                None => None,
            },
        };
        if let Some(dir) = &config.checkpoint_dir {
            checkpoint::save(net, &dir.join(checkpoint_name(epoch + 1)))?;
        }
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok(history)
}
