//! Minibatch SGD with momentum.

use super::{batch_input, Dataset, Model};
use crate::tensor::{Tape, TensorError};
use rand::seq::SliceRandom;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {source}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        source: TensorError,
    },
    #[error("dataset label {label} exceeds model class count {classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 6,
            lr: 0.02,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Per-epoch training log entry. Accuracy is measured on the training set
/// after the epoch's updates.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Train in place; deterministic given the seed.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for &label in &data.labels {
        if label as usize >= model.num_classes() {
            return Err(TrainError::LabelOutOfRange {
                label: label as usize,
                classes: model.num_classes(),
            });
        }
    }

    let mut rng = crate::rng::stream_rng(cfg.seed, crate::rng::Stream::Training);
    let mut velocity: Vec<Vec<Vec<f64>>> = model
        .layers()
        .iter()
        .map(|l| l.params.iter().map(|p| vec![0.0; p.len()]).collect())
        .collect();

    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;

        for (batch_no, chunk) in indices.chunks(cfg.batch_size.max(1)).enumerate() {
            let images: Vec<Vec<f64>> = chunk.iter().map(|&i| data.image_f64(i)).collect();
            let image_refs: Vec<&[f64]> = images.iter().map(|v| v.as_slice()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.label(i)).collect();

            let mut tape = Tape::new();
            let param_ids = model.register_params(&mut tape, true);
            let x = batch_input(&mut tape, &image_refs, model.input_shape(), false)?;
            let run = || -> Result<(f64, Tape), TensorError> {
                let mut tape = tape;
                let logits =
                    model.forward_registered(&mut tape, &param_ids, x, 0..model.layers().len())?;
                let loss = tape.softmax_cross_entropy(logits, &labels)?;
                let loss_val = tape.value(loss).item();
                tape.backward(loss)?;
                Ok((loss_val, tape))
            };
            let (loss_val, tape) = run().map_err(|source| TrainError::NonFinite {
                epoch,
                batch: batch_no,
                source,
            })?;
            loss_sum += loss_val * chunk.len() as f64;
            seen += chunk.len();

            for (layer_idx, ids) in param_ids.iter().enumerate() {
                for (param_idx, &id) in ids.iter().enumerate() {
                    let grad = tape.grad(id).expect("trainable param has grad");
                    let vel = &mut velocity[layer_idx][param_idx];
                    let param =
                        model.layers_mut()[layer_idx].params[param_idx].data_mut();
                    for ((p, v), &g) in param.iter_mut().zip(vel.iter_mut()).zip(grad) {
                        *v = cfg.momentum * *v + g;
                        *p -= cfg.lr * *v;
                    }
                }
            }
        }

        let accuracy = evaluate_accuracy(model, data)?;
        log.push(EpochStats {
            epoch,
            mean_loss: loss_sum / seen as f64,
            accuracy,
        });
    }
    Ok(log)
}

/// Fraction of the dataset the model labels correctly.
pub fn evaluate_accuracy(model: &Model, data: &Dataset) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut correct = 0usize;
    for chunk in (0..data.len()).collect::<Vec<_>>().chunks(64) {
        let images: Vec<Vec<f64>> = chunk.iter().map(|&i| data.image_f64(i)).collect();
        let image_refs: Vec<&[f64]> = images.iter().map(|v| v.as_slice()).collect();
        let preds = model.predict_batch(&image_refs)?;
        correct += preds
            .iter()
            .zip(chunk)
            .filter(|&(&p, &i)| p == data.label(i))
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ArchName, Model};
    use crate::nn::dataset::IMAGE_LEN;

    /// Two classes separated by overall brightness; linearly separable.
    fn separable_toy_set(n: usize) -> Dataset {
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % 2) as u8;
            let base = if label == 0 { 0.2f32 } else { 0.8f32 };
            let jitter = (i as f32 * 0.37).sin() * 0.05;
            images.push(vec![base + jitter; IMAGE_LEN]);
            labels.push(label);
        }
        Dataset {
            images,
            labels,
            num_classes: 2,
        }
    }

    #[test]
    fn one_epoch_separates_the_toy_set() {
        let mut model = Model::build(ArchName::ConvnetA, 2, (3, 32, 32), 11).unwrap();
        let data = separable_toy_set(256);
        let cfg = TrainConfig {
            epochs: 1,
            lr: 0.05,
            seed: 11,
            ..TrainConfig::default()
        };
        let log = train(&mut model, &data, &cfg).unwrap();
        assert!(
            log[0].accuracy > 0.9,
            "training accuracy {} <= 0.9",
            log[0].accuracy
        );
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut model = Model::build(ArchName::ConvnetD, 2, (3, 32, 32), 13).unwrap();
        let before: Vec<Vec<f64>> = model
            .layers()
            .iter()
            .flat_map(|l| l.params.iter().map(|p| p.data().to_vec()))
            .collect();
        let data = separable_toy_set(64);
        let cfg = TrainConfig {
            epochs: 1,
            lr: 0.0,
            seed: 13,
            ..TrainConfig::default()
        };
        train(&mut model, &data, &cfg).unwrap();
        let after: Vec<Vec<f64>> = model
            .layers()
            .iter()
            .flat_map(|l| l.params.iter().map(|p| p.data().to_vec()))
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn same_seed_trains_bit_identical_models() {
        let data = separable_toy_set(96);
        let cfg = TrainConfig {
            epochs: 2,
            seed: 17,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = Model::build(ArchName::ConvnetA, 2, (3, 32, 32), 17).unwrap();
            train(&mut m, &data, &cfg).unwrap();
            m
        };
        let m1 = run();
        let m2 = run();
        for (l1, l2) in m1.layers().iter().zip(m2.layers()) {
            for (p1, p2) in l1.params.iter().zip(&l2.params) {
                assert!(p1
                    .data()
                    .iter()
                    .zip(p2.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }

    #[test]
    fn loss_decreases_after_one_oriented_step() {
        let mut model = Model::build(ArchName::ConvnetB, 2, (3, 32, 32), 19).unwrap();
        let data = separable_toy_set(32);
        let images: Vec<Vec<f64>> = (0..data.len()).map(|i| data.image_f64(i)).collect();
        let refs: Vec<&[f64]> = images.iter().map(|v| v.as_slice()).collect();
        let labels: Vec<usize> = (0..data.len()).map(|i| data.label(i)).collect();
        let before = model.loss_batch(&refs, &labels).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            lr: 0.01,
            momentum: 0.0,
            batch_size: data.len(),
            seed: 19,
        };
        train(&mut model, &data, &cfg).unwrap();
        let after = model.loss_batch(&refs, &labels).unwrap();
        assert!(after < before, "loss did not decrease: {before} -> {after}");
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let mut model = Model::build(ArchName::ConvnetA, 2, (3, 32, 32), 23).unwrap();
        let mut data = separable_toy_set(8);
        data.labels[0] = 5;
        data.num_classes = 6;
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&mut model, &data, &cfg),
            Err(TrainError::LabelOutOfRange { .. })
        ));
    }
}
