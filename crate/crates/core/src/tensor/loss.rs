use super::Tensor;
use crate::error::{Error, Result};

/// Mean negative log-softmax of the true class, with `(softmax − onehot)/N`
/// as the logit gradient. Max-subtracted for stability.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let &[n, k] = logits.shape() else {
        return Err(Error::shape("softmax_cross_entropy", format!("logits must be N×K, got {:?}", logits.shape())));
    };
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for {} rows", labels.len(), n),
        ));
    }
    if n == 0 {
        return Err(Error::invalid("softmax_cross_entropy", "empty batch"));
    }
    let mut grad = vec![0.0; n * k];
    let mut loss = 0.0;
    for (i, (row, &y)) in logits.data().chunks_exact(k).zip(labels).enumerate() {
        if y >= k {
            return Err(Error::invalid(
                "softmax_cross_entropy",
                format!("label {} at row {} outside [0, {})", y, i, k),
            ));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        for (j, v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            grad[i * k + j] = (p - if j == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, Tensor::new(vec![n, k], grad)?))
}
