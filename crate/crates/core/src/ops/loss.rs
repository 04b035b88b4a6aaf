use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of `(n, classes, 1, 1)` logits, max-subtracted.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let classes = logits.shape().sample_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(classes.max(1)) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    out
}

/// Mean negative log-likelihood over the batch and its gradient
/// `(softmax - onehot) / n` with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let n = logits.shape().n;
    let classes = logits.shape().sample_len();
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::config(format!("label {bad} out of range for {classes} classes")));
    }
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut grad = logits.clone();
    let mut loss = T::zero();
    for (row, &label) in grad.data_mut().chunks_mut(classes).zip(labels) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let log_z = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
        loss += log_z - row[label];
        for v in row.iter_mut() {
            *v = (*v - log_z).exp() * inv_n;
        }
        row[label] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}
