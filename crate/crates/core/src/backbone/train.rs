use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::model::{argmax, Network};
use crate::data::{batches, epoch_rng, Dataset, FeatureMatrix, Normalization};
use crate::error::{Error, Result};
use crate::gbdt::{softmax, TreeEnsemble};
use crate::tensor::{sgd_step, softmax_cross_entropy, Mode, SgdHyper, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate, cosine-decayed per step to zero.
    pub lr: f64,
    /// Peak learning rate of the FC head, on the same schedule.
    pub head_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub augment: bool,
    pub normalization: Normalization,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 120,
            batch_size: 128,
            lr: 0.5,
            head_lr: 0.001,
            momentum: 0.9,
            weight_decay: 1e-5,
            seed: 0,
            augment: false,
            normalization: Normalization::Symmetric,
            eval_batch: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_top1: f64,
    /// `None` when there is no validation set.
    pub val_top1: Option<f64>,
    pub lr: f64,
    pub wall_seconds: f64,
}

impl EpochMetrics {
    /// One metrics-log record.
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} train_loss={:.6} train_top1={:.4} val_top1={} lr={:.6e} wall_seconds={:.1}",
            self.epoch,
            self.train_loss,
            self.train_top1,
            self.val_top1.map_or("na".to_string(), |v| format!("{:.4}", v)),
            self.lr,
            self.wall_seconds
        )
    }
}

pub struct TrainOutcome {
    /// Highest validation top-1 (earliest on ties); the last epoch without a
    /// validation set.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub last: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
}

/// `0.5·lr·(1 + cos(π·step/total))`.
pub fn cosine_lr(lr: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr;
    }
    0.5 * lr * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

/// Stage-1 SGD on softmax cross-entropy through the FC head. On a
/// non-finite loss the best checkpoint so far is written to `last_good`
/// (when given) and training aborts.
pub fn train_stage1(
    mut net: Network,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    last_good: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    if !net.has_head() {
        return Err(Error::invalid("train_stage1", "the network has no fc_head"));
    }
    if train.is_empty() {
        return Err(Error::invalid("train_stage1", "empty training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("train_stage1", "batch_size must be at least 1"));
    }
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut step = 0;
    let mut metrics = Vec::new();
    let mut best = Checkpoint {
        network: net.clone(),
        seed: cfg.seed,
        epoch: 0,
    };
    let mut best_val: Option<f64> = None;
    let mut best_epoch = 0;
    let start = Instant::now();
    for epoch in 1..=cfg.epochs {
        let e = epoch as u64;
        let mut aug_rng = epoch_rng(cfg.seed, e, 1);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        let mut lr = cfg.lr;
        for idx in batches(train.len(), cfg.batch_size, cfg.seed, e, true)? {
            let x = train.tensor(&idx, cfg.normalization, cfg.augment.then_some(&mut aug_rng));
            let y = train.labels_usize(&idx);
            net.zero_grad();
            let logits = net.forward(&x, Mode::Train)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                let mut msg = format!("loss {} at epoch {} step {}", loss, epoch, step);
                if let Some(p) = last_good {
                    best.save(p)?;
                    msg.push_str(&format!("; last good checkpoint (epoch {}) written to {}", best.epoch, p.display()));
                }
                return Err(Error::NonFinite(msg));
            }
            loss_sum += loss * idx.len() as f64;
            correct += logits
                .data()
                .chunks_exact(net.spec().class_count)
                .zip(&y)
                .filter(|(r, &l)| argmax(r) == l)
                .count();
            net.backward(&grad)?;
            lr = cosine_lr(cfg.lr, step, total);
            let hp = |lr| SgdHyper {
                lr,
                momentum: cfg.momentum,
                weight_decay: cfg.weight_decay,
                decay_all: false,
            };
            let mut params = net.params_mut();
            let body = params.len() - 1;
            let (backbone, head) = params.split_at_mut(body);
            sgd_step(backbone, &hp(lr))?;
            sgd_step(head, &hp(cosine_lr(cfg.head_lr, step, total)))?;
            step += 1;
        }
        let val_top1 = if val.is_empty() {
            None
        } else {
            Some(evaluate_fc(&net, val, cfg.normalization, cfg.eval_batch)?.0)
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_top1: correct as f64 / train.len() as f64,
            val_top1,
            lr,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&m);
        let improved = match (val_top1, best_val) {
            (Some(v), Some(b)) => v > b,
            (Some(_), None) => true,
            (None, _) => true,
        };
        if improved {
            best_val = val_top1;
            best_epoch = epoch;
            best = Checkpoint {
                network: net.clone(),
                seed: cfg.seed,
                epoch: epoch as u32,
            };
        }
        metrics.push(m);
    }
    let last = Checkpoint {
        network: net,
        seed: cfg.seed,
        epoch: cfg.epochs as u32,
    };
    if cfg.epochs == 0 {
        best = last.clone();
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        last,
        metrics,
    })
}

/// Runs `f` over consecutive index chunks in parallel and concatenates rows.
fn chunked<T: Send>(n: usize, batch: usize, f: impl Fn(&[usize]) -> Result<Vec<T>> + Sync) -> Result<Vec<T>> {
    let batch = batch.max(1);
    let chunks: Vec<Vec<usize>> = (0..n).collect::<Vec<_>>().chunks(batch).map(|c| c.to_vec()).collect();
    let parts: Vec<Vec<T>> = chunks.par_iter().map(|c| f(c)).collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Pooled features of every sample, in dataset order, through the popcount
/// kernels.
pub fn extract_features(net: &Network, ds: &Dataset, norm: Normalization, batch: usize) -> Result<FeatureMatrix> {
    let f = net.feature_dim();
    let values = chunked(ds.len(), batch, |idx| {
        Ok(net.infer_features(&ds.tensor(idx, norm, None))?.into_data())
    })?;
    FeatureMatrix::new(ds.len(), f, values, ds.labels.clone())
}

/// FC-head logits from features: `F · Wᵀ`.
pub fn fc_logits(net: &Network, features: &FeatureMatrix) -> Result<Tensor> {
    let w = net
        .fc_weight()
        .ok_or_else(|| Error::invalid("fc_logits", "the network has no fc_head"))?;
    let &[k, f] = w.shape() else { unreachable!() };
    if features.cols != f {
        return Err(Error::shape("fc_logits", format!("{} features, head expects {}", features.cols, f)));
    }
    let mut out = vec![0.0; features.rows * k];
    crate::tensor::gemm(features.rows, f, k, &features.values, f, 1, w.data(), 1, f, &mut out);
    Tensor::new(vec![features.rows, k], out)
}

/// FC-head top-1 accuracy and predictions.
pub fn evaluate_fc(net: &Network, ds: &Dataset, norm: Normalization, batch: usize) -> Result<(f64, Vec<usize>)> {
    let k = net.spec().class_count;
    let preds = chunked(ds.len(), batch, |idx| {
        let logits = net.infer(&ds.tensor(idx, norm, None))?;
        Ok(logits.data().chunks_exact(k).map(argmax).collect())
    })?;
    Ok((accuracy(&preds, &ds.labels), preds))
}

pub fn accuracy(preds: &[usize], labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    preds.iter().zip(labels).filter(|(p, &l)| **p == l as usize).count() as f64 / labels.len() as f64
}

/// `m[true][pred]` counts.
pub fn confusion(preds: &[usize], labels: &[u8], k: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; k]; k];
    for (&p, &l) in preds.iter().zip(labels) {
        if (l as usize) < k && p < k {
            m[l as usize][p] += 1;
        }
    }
    m
}

/// Backbone features, tree margins and softmax in one call. Returns the
/// predicted classes and the row-major `N × K` class probabilities. Features
/// are rounded to the feature file's 32-bit precision first, so results match
/// the extract-then-predict route.
pub fn infer_hybrid(net: &Network, ensemble: &TreeEnsemble, batch: &Tensor) -> Result<(Vec<usize>, Vec<f64>)> {
    if ensemble.feature_dim != net.feature_dim() {
        return Err(Error::shape(
            "infer_hybrid",
            format!(
                "ensemble expects {} features, backbone produces {}",
                ensemble.feature_dim,
                net.feature_dim()
            ),
        ));
    }
    let feats = net.infer_features(batch)?;
    let f = net.feature_dim();
    let mut classes = Vec::new();
    let mut scores = Vec::new();
    for row in feats.data().chunks_exact(f) {
        let q: Vec<f64> = row.iter().map(|&v| v as f32 as f64).collect();
        let p = softmax(&ensemble.margins_row(&q));
        classes.push(argmax(&p));
        scores.extend(p);
    }
    Ok((classes, scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 10), 0.1);
        assert!((cosine_lr(0.1, 5, 10) - 0.05).abs() < 1e-15);
        assert!(cosine_lr(0.1, 10, 10).abs() < 1e-15);
    }

    #[test]
    fn confusion_counts() {
        let m = confusion(&[0, 1, 1], &[0, 0, 1], 2);
        assert_eq!(m, vec![vec![1, 1], vec![0, 1]]);
        assert!((accuracy(&[0, 1, 1], &[0, 0, 1]) - 2.0 / 3.0).abs() < 1e-15);
    }
}
