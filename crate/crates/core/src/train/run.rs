use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentMode};
use super::config::TrainConfig;
use super::optim::Sgd;
use super::schedule::cyclic_lr;
use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tape, Tensor};
use crate::vit::{bind, forward_batch, infer, ViTConfig, ViTParams};

/// Summary of one epoch. Epochs are numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch, measured before each update.
    pub loss: f64,
    /// Running accuracy on the (augmented) training batches.
    pub train_acc: f64,
    /// Accuracy on the held-out set after the epoch, if one was given.
    pub test_acc: Option<f64>,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Learning rate used at every optimizer step.
    pub lr_trace: Vec<f64>,
    pub steps: usize,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_test_acc: Option<f64>,
    pub wall_time_secs: f64,
    pub config: TrainConfig,
}

impl TrainReport {
    /// Per-epoch CSV: `epoch,loss,train_acc,test_acc,lr`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Trains `params` on `train_set` and returns the parameters of the epoch
/// with the best held-out accuracy (the last epoch when `test_set` is
/// `None`; ties keep the earlier epoch).
pub fn train<T: Float>(
    params: ViTParams<T>,
    model: &ViTConfig,
    train_set: &LabeledImageSet,
    test_set: Option<&LabeledImageSet>,
    cfg: &TrainConfig,
) -> Result<(ViTParams<T>, TrainReport)> {
    train_with_progress(params, model, train_set, test_set, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with_progress<T: Float>(
    mut params: ViTParams<T>,
    model: &ViTConfig,
    train_set: &LabeledImageSet,
    test_set: Option<&LabeledImageSet>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ViTParams<T>, TrainReport)> {
    cfg.validate()?;
    model.validate()?;
    params.check_shapes(model)?;
    check_set(train_set, model, "training")?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if let Some(t) = test_set {
        check_set(t, model, "held-out")?;
    }

    let start = Instant::now();
    let n = train_set.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut opt = Sgd::<T>::new(cfg.momentum, cfg.weight_decay);
    let mut lr_trace = Vec::with_capacity(total);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ViTParams<T>)> = None;
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let aug_seed = cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let lr = cyclic_lr(step, total, cfg.base_lr, cfg.max_lr);
            let images = train_batch(train_set, chunk, cfg.augment, aug_seed)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i] as usize).collect();
            let context = |e: Error| match e {
                Error::NonFinite(msg) => {
                    Error::NonFinite(format!("{msg} (epoch {epoch}, step {})", b + 1))
                }
                other => other,
            };
            let (loss, hits, grads) = {
                let tape = Tape::new();
                let bound = bind(&tape, &params);
                let out = forward_batch(&tape, &bound, model, &images).map_err(context)?;
                let loss = out.logits.cross_entropy(&labels).map_err(context)?;
                let value = loss.value().item().as_f64();
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss is {value} at epoch {epoch}, step {}",
                        b + 1
                    )));
                }
                let hits = count_correct(&out.logits.value(), &labels);
                let mut g = tape.backward(&loss)?;
                (value, hits, bound.map(|_, v| g.take(v)))
            };
            opt.step(&mut params, &grads, lr)?;
            loss_sum += loss * chunk.len() as f64;
            correct += hits;
            lr_trace.push(lr);
            step += 1;
        }
        let test_acc = match test_set {
            Some(t) => Some(accuracy(&params, model, t, cfg.batch_size.max(64))?),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            test_acc,
            lr: *lr_trace.last().expect("at least one step per epoch"),
        };
        on_epoch(&record);
        let score = test_acc.unwrap_or(f64::INFINITY);
        let better = match &best {
            None => true,
            Some((s, _, _)) => test_acc.is_none() || score > *s,
        };
        if better {
            best = Some((score, epoch, params.clone()));
        }
        records.push(record);
    }

    let (_, best_epoch, best_params) = best.expect("epochs >= 1");
    let best_test_acc = records[best_epoch - 1].test_acc;
    Ok((
        best_params,
        TrainReport {
            epochs: records,
            lr_trace,
            steps: total,
            best_epoch,
            best_test_acc,
            wall_time_secs: start.elapsed().as_secs_f64(),
            config: cfg.clone(),
        },
    ))
}

fn check_set(set: &LabeledImageSet, model: &ViTConfig, what: &str) -> Result<()> {
    let want = [model.channels, model.image_size, model.image_size];
    if set.image_dims() != want {
        return Err(Error::Config(format!(
            "{what} images are {:?} but the model expects {want:?}",
            set.image_dims()
        )));
    }
    if set.num_classes() > model.num_classes {
        return Err(Error::Config(format!(
            "{what} set has {} classes but the classifier head has {}",
            set.num_classes(),
            model.num_classes
        )));
    }
    Ok(())
}

fn train_batch<T: Float>(
    set: &LabeledImageSet,
    indices: &[usize],
    mode: AugmentMode,
    seed: u64,
) -> Result<Tensor<T>> {
    let dims = set.image_dims();
    let mut data = Vec::with_capacity(indices.len() * set.image_numel());
    for &i in indices {
        let mut img = augment(set.image(i), dims, mode, seed, i as u64);
        set.standardize(&mut img);
        data.extend(img.into_iter().map(|p| T::of(p as f64)));
    }
    Tensor::new([indices.len(), dims[0], dims[1], dims[2]], data)
}

/// Index of the largest value in each row (first one on ties).
pub fn argmax_rows<T: Float>(logits: &Tensor<T>) -> Vec<usize> {
    let c = logits.shape()[logits.ndim() - 1];
    logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn count_correct<T: Float>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    argmax_rows(logits)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count()
}

/// Classification accuracy of `params` on `set`.
pub fn accuracy<T: Float>(
    params: &ViTParams<T>,
    model: &ViTConfig,
    set: &LabeledImageSet,
    batch_size: usize,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Data("cannot measure accuracy on an empty set".into()));
    }
    let mut correct = 0;
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (_, logits) = infer(params, model, &set.batch::<T>(chunk)?)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| set.labels[i] as usize).collect();
        correct += count_correct(&logits, &labels);
    }
    Ok(correct as f64 / set.len() as f64)
}
