use std::fmt::Write as _;

use super::config::TrainConfig;
use super::data::Split;
use super::{accuracy, train};
use crate::arch::{ghostify, Network, NetworkSpec};
use crate::cost;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Ratio `s`, cheap kernel held fixed.
    S,
    /// Cheap kernel `d`, ratio held fixed.
    D,
}

impl SweepParam {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "s" => Some(SweepParam::S),
            "d" => Some(SweepParam::D),
            _ => None,
        }
    }

    /// The held value when none is given: `d = 3` for s-sweeps, `s = 2` for d-sweeps.
    pub fn default_fixed(self) -> usize {
        match self {
            SweepParam::S => 3,
            SweepParam::D => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// `None` for the unmodified baseline.
    pub value: Option<usize>,
    pub weights: u64,
    pub flops: u64,
    pub acc: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value,weights,flops,acc\n");
    for r in rows {
        let v = r.value.map(|v| v.to_string()).unwrap_or_else(|| "baseline".into());
        let _ = writeln!(out, "{v},{},{},{}", r.weights, r.flops, r.acc);
    }
    out
}

/// Ghostifies `base` once per value, trains each variant from `seed` and reports
/// counted parameters, headline FLOPs and accuracy (test split if present, else train).
/// With `baseline`, the unmodified spec comes first. `config.epochs == 0` skips training.
#[allow(clippy::too_many_arguments)]
pub fn sweep<T: Scalar>(
    base: &NetworkSpec,
    param: SweepParam,
    values: &[usize],
    fixed: usize,
    baseline: bool,
    data: &Split,
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let mut specs: Vec<(Option<usize>, NetworkSpec)> = Vec::new();
    if baseline {
        base.validate()?;
        specs.push((None, base.clone()));
    }
    for &v in values {
        let (s, d) = match param {
            SweepParam::S => (v, fixed),
            SweepParam::D => (fixed, v),
        };
        specs.push((Some(v), ghostify(base, s, d)?));
    }
    specs
        .into_iter()
        .map(|(value, spec)| {
            let report = cost::analyze(&spec)?;
            let totals = report.totals();
            let mut net = Network::<T>::materialize(&spec, seed)?;
            if config.epochs > 0 {
                train(&mut net, data, config)?;
            }
            let eval = data.test.as_ref().unwrap_or(&data.train);
            Ok(SweepRow {
                value,
                weights: totals.params,
                flops: totals.flops_mac,
                acc: accuracy(&net, eval, config.eval_batch)?,
            })
        })
        .collect()
}
