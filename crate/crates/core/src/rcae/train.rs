use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::Architecture;
use super::model::{ConvAutoencoder, Mode, RcaeModel};
use super::params::Parameters;
use crate::error::{Error, Result};
use crate::preprocessing::{Bag, Instance};
use crate::seed;
use crate::tensorops::{adam_step, AdamConfig, AdamState, Tensor4};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Epochs of per-frame convolutional autoencoding.
    pub pretrain_epochs: usize,
    /// Epochs of end-to-end recurrent training.
    pub epochs: usize,
    pub batch_size: usize,
    /// Caps the instances visited per epoch (a fresh random subset each
    /// epoch); `None` visits all.
    pub instances_per_epoch: Option<usize>,
    pub dropout: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_epochs: 10,
            epochs: 30,
            batch_size: 16,
            instances_per_epoch: None,
            dropout: 0.65,
            adam: AdamConfig::default(),
        }
    }
}

/// Mean training loss per epoch and per optimizer step for both phases.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub pretrain_epochs: Vec<f64>,
    pub epochs: Vec<f64>,
    pub steps: Vec<f64>,
}

trait Trainable: Parameters + Sync {
    fn instance_grad(&self, x: &Tensor4, seed: u64) -> Result<(f64, Vec<f64>)>;
}

impl Trainable for ConvAutoencoder {
    fn instance_grad(&self, x: &Tensor4, _seed: u64) -> Result<(f64, Vec<f64>)> {
        let (loss, g) = self.loss_and_grad(x)?;
        Ok((loss, g.flatten()))
    }
}

impl Trainable for RcaeModel {
    fn instance_grad(&self, x: &Tensor4, seed: u64) -> Result<(f64, Vec<f64>)> {
        let (loss, g) = self.loss_and_grad(x, Mode::Train { seed })?;
        Ok((loss, g.flatten()))
    }
}

/// Runs `epochs` of mini-batch ADAM. Per-instance gradients are computed in
/// parallel and summed in batch order so results do not depend on thread
/// scheduling.
fn run_phase<M: Trainable>(
    model: &mut M,
    instances: &[&Tensor4],
    cfg: &TrainConfig,
    epochs: usize,
    master: u64,
    phase: u64,
    steps: &mut Vec<f64>,
) -> Result<Vec<f64>> {
    let mut adam = AdamState::new(model.param_count(), cfg.adam);
    let mut params = model.flatten();
    let mut epoch_losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..instances.len()).collect();
        order.shuffle(&mut seed::rng(master, &[phase, epoch as u64]));
        if let Some(cap) = cfg.instances_per_epoch {
            order.truncate(cap.max(1));
        }
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&i| {
                    let s = seed::derive(master, &[phase, epoch as u64, b as u64, i as u64]);
                    model.instance_grad(instances[i], s)
                })
                .collect();
            let mut grad = vec![0.0; params.len()];
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, g) = r?;
                batch_loss += loss;
                for (acc, v) in grad.iter_mut().zip(&g) {
                    *acc += v;
                }
            }
            let n = batch.len() as f64;
            batch_loss /= n;
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite loss in phase {phase}, epoch {epoch}, batch {b}"
                )));
            }
            grad.iter_mut().for_each(|g| *g /= n);
            adam_step(&mut params, &grad, &mut adam)?;
            model.load_flat(&params);
            steps.push(batch_loss);
            total += batch_loss * n;
        }
        epoch_losses.push(total / order.len() as f64);
    }
    Ok(epoch_losses)
}

/// Greedy layer-wise training: a per-frame convolutional autoencoder first,
/// then the full recurrent model initialized from it and trained end to end.
/// Parameters are rounded to 32-bit precision at the end.
pub fn train_layerwise(
    bags: &[Bag],
    arch: &Architecture,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(RcaeModel, TrainTrace)> {
    let instances: Vec<&Instance> = bags.iter().flat_map(|b| &b.instances).collect();
    train_on(&instances.iter().map(|i| &i.frames).collect::<Vec<_>>(), arch, cfg, seed)
}

/// Same as [`train_layerwise`] on bare `T × block × block × 1` tensors.
pub fn train_on(
    instances: &[&Tensor4],
    arch: &Architecture,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(RcaeModel, TrainTrace)> {
    if instances.is_empty() {
        return Err(Error::arg("no training instances"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::Config(format!("dropout {} outside [0, 1)", cfg.dropout)));
    }
    let mut trace = TrainTrace::default();
    let mut ae = ConvAutoencoder::init(arch, &mut seed::rng(seed, &[1]))?;
    let mut pre_steps = Vec::new();
    trace.pretrain_epochs = run_phase(&mut ae, instances, cfg, cfg.pretrain_epochs, seed, 1, &mut pre_steps)?;
    let mut model = RcaeModel::from_pretrained(&ae, &mut seed::rng(seed, &[2]))?;
    model.dropout = cfg.dropout;
    trace.epochs = run_phase(&mut model, instances, cfg, cfg.epochs, seed, 2, &mut trace.steps)?;
    model.round_to_f32();
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rcae::reconstruction_loss;

    fn tiny() -> Architecture {
        Architecture {
            block: 8,
            time_steps: 4,
            conv_filters: 4,
            lstm_filters: 4,
            kernel: 3,
            depth: 2,
        }
    }

    fn pattern(t: usize, phase: f64) -> Tensor4 {
        let mut x = Tensor4::zeros(t, 8, 8, 1);
        for k in 0..t {
            for y in 0..8 {
                for c in 0..8 {
                    let v = 0.5 + 0.4 * ((y as f64 + c as f64) * 0.6 + phase + 0.3 * k as f64).sin();
                    x.set(k, y, c, 0, v);
                }
            }
        }
        x
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(matches!(
            train_on(&[], &tiny(), &TrainConfig::default(), 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn single_instance_is_overfit() {
        let x = pattern(4, 0.0);
        let cfg = TrainConfig {
            pretrain_epochs: 0,
            epochs: 200,
            batch_size: 1,
            dropout: 0.0,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        let (model, trace) = train_on(&[&x], &tiny(), &cfg, 3).unwrap();
        let initial = trace.steps[0];
        let last = reconstruction_loss(&x, &model.reconstruct(&x).unwrap()).unwrap();
        assert!(last < 0.1 * initial, "initial {initial}, final {last}");
    }

    #[test]
    fn constant_images_reconstruct_closely() {
        let xs: Vec<Tensor4> = (0..3).map(|_| Tensor4::filled(4, 8, 8, 1, 0.7)).collect();
        let refs: Vec<&Tensor4> = xs.iter().collect();
        let cfg = TrainConfig {
            pretrain_epochs: 50,
            epochs: 150,
            batch_size: 3,
            dropout: 0.0,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        let (model, _) = train_on(&refs, &tiny(), &cfg, 5).unwrap();
        for x in &xs {
            let mse = reconstruction_loss(x, &model.reconstruct(x).unwrap()).unwrap();
            assert!(mse < 1e-3, "mse {mse}");
        }
    }

    #[test]
    fn phase_two_starts_from_phase_one_weights() {
        let x = pattern(4, 1.0);
        let cfg = TrainConfig {
            pretrain_epochs: 3,
            epochs: 0,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let (model, trace) = train_on(&[&x], &tiny(), &cfg, 9).unwrap();
        let mut ae = ConvAutoencoder::init(&tiny(), &mut seed::rng(9, &[1])).unwrap();
        let mut steps = Vec::new();
        run_phase(&mut ae, &[&x], &cfg, 3, 9, 1, &mut steps).unwrap();
        ae.round_to_f32();
        assert_eq!(model.encoder, ae.encoder);
        assert_eq!(trace.pretrain_epochs.len(), 3);
    }

    #[test]
    fn training_is_deterministic() {
        let xs: Vec<Tensor4> = (0..5).map(|i| pattern(4, i as f64)).collect();
        let refs: Vec<&Tensor4> = xs.iter().collect();
        let cfg = TrainConfig {
            pretrain_epochs: 1,
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let a = train_on(&refs, &tiny(), &cfg, 1).unwrap();
        let b = train_on(&refs, &tiny(), &cfg, 1).unwrap();
        assert_eq!(a, b);
    }
}
