use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
///
/// `logits` is `(batch, classes, 1, 1)`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let s = logits.shape();
    if s.height != 1 || s.width != 1 {
        return Err(Error::shape(format!("logits must be (batch, classes, 1, 1), got {s}")));
    }
    if labels.len() != s.batch {
        return Err(Error::shape(format!(
            "{} labels for a batch of {}",
            labels.len(),
            s.batch
        )));
    }
    let classes = s.channels;
    let inv_batch = T::one() / T::from_f64(s.batch as f64);
    let mut grad = logits.clone();
    let mut loss = T::zero();
    for (row, &label) in grad.data_mut().chunks_mut(classes).zip(labels) {
        if label >= classes {
            return Err(Error::Label { label, classes });
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            denom = denom + *v;
        }
        loss = loss + denom.ln() - (row[label].ln());
        for v in row.iter_mut() {
            *v = *v / denom * inv_batch;
        }
        row[label] = row[label] - inv_batch;
    }
    Ok((loss * inv_batch, grad))
}

/// Row-wise softmax of `(batch, classes, 1, 1)` logits.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let classes = logits.shape().channels;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            denom = denom + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / denom);
    }
    out
}
