use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = match logits.shape() {
        &[b, c] => (b, c),
        s => return shape_err(format!("logits must be [batch, classes], got {s:?}")),
    };
    if labels.len() != batch {
        return shape_err(format!("{} labels for a batch of {batch}", labels.len()));
    }
    let mut grad = vec![0.0; batch * classes];
    let mut loss = 0.0;
    for (n, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let row = &logits.data()[n * classes..(n + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        loss += log_z - row[label];
        for (c, v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let target = if c == label { 1.0 } else { 0.0 };
            grad[n * classes + c] = (p - target) / batch as f64;
        }
    }
    Ok((
        loss / batch as f64,
        Tensor::new(vec![batch, classes], grad)?,
    ))
}
