//! Mini-batch Adam training with per-batch loss logging and checkpoint hooks.

use crate::adam::{AdamConfig, AdamState};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::net::{cross_entropy, cross_entropy_grad, LayerParams, Network};
use crate::rng::{child_seed, rng_from_seed};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 3,
            shuffle_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

pub type TrainLog = Vec<BatchRecord>;

/// Mean cross-entropy gradient over a batch, plus the batch loss.
///
/// Per-sample passes run in parallel; the sum is assembled in index order so
/// the result does not depend on the worker count.
pub fn param_gradient_with_loss(
    net: &Network,
    inputs: &[&Tensor],
    labels: &[usize],
) -> Result<(Vec<Option<LayerParams>>, f64)> {
    if inputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let per_sample: Vec<(Vec<Option<LayerParams>>, f64)> = inputs
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, &y)| {
            let cache = net.forward_cached(x)?;
            let loss = cross_entropy(&cache.logits, y);
            let seed = cross_entropy_grad(&cache.logits, y);
            let (_, grads) = net.backward(&cache, &seed, true);
            Ok((grads, loss))
        })
        .collect::<Result<_>>()?;

    let scale = 1.0 / inputs.len() as f64;
    let mut iter = per_sample.into_iter();
    let (mut acc, mut loss_sum) = iter.next().unwrap();
    for (grads, loss) in iter {
        loss_sum += loss;
        for (a, g) in acc.iter_mut().zip(grads) {
            if let (Some(a), Some(g)) = (a.as_mut(), g) {
                a.weight.add_scaled(&g.weight, 1.0);
                a.bias.add_scaled(&g.bias, 1.0);
            }
        }
    }
    for a in acc.iter_mut().flatten() {
        a.weight.scale(scale);
        a.bias.scale(scale);
    }
    Ok((acc, loss_sum * scale))
}

/// Mean cross-entropy gradient over a batch.
pub fn param_gradient(
    net: &Network,
    inputs: &[&Tensor],
    labels: &[usize],
) -> Result<Vec<Option<LayerParams>>> {
    param_gradient_with_loss(net, inputs, labels).map(|(g, _)| g)
}

pub fn train(net: &mut Network, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainLog> {
    train_with_hook(net, data, cfg, |_, _| {})
}

/// Train, invoking `hook(net, global_batch_index)` after every optimizer
/// step. Batch indices start at 1; the untrained state is index 0.
pub fn train_with_hook(
    net: &mut Network,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    mut hook: impl FnMut(&Network, usize),
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if data.num_classes() != net.num_classes() {
        return Err(Error::config(
            "data",
            format!(
                "dataset has {} classes, network {}",
                data.num_classes(),
                net.num_classes()
            ),
        ));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    let adam = AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
    };
    let mut states: Vec<Option<(AdamState, AdamState)>> = net
        .params()
        .iter()
        .map(|p| {
            p.as_ref()
                .map(|p| (AdamState::new(p.weight.len()), AdamState::new(p.bias.len())))
        })
        .collect();

    let mut log = Vec::new();
    let mut global_batch = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = rng_from_seed(child_seed(cfg.shuffle_seed, epoch as u64));
        order.shuffle(&mut rng);

        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<&Tensor> = chunk.iter().map(|&i| data.input(i)).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.label(i)).collect();
            let (grads, loss) = param_gradient_with_loss(net, &inputs, &labels)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, batch });
            }
            for (state, (param, grad)) in states
                .iter_mut()
                .zip(net.params_mut().iter_mut().zip(grads))
            {
                if let (Some((sw, sb)), Some(p), Some(g)) = (state.as_mut(), param.as_mut(), grad) {
                    sw.step_apply(p.weight.data_mut(), g.weight.data(), &adam);
                    sb.step_apply(p.bias.data_mut(), g.bias.data(), &adam);
                }
            }
            global_batch += 1;
            log.push(BatchRecord { epoch, batch, loss });
            hook(net, global_batch);
        }
    }
    Ok(log)
}

/// Fraction of examples whose argmax logit equals the label.
pub fn accuracy(net: &Network, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let hits: Vec<bool> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let logits = net.forward_logits(data.input(i))?;
            Ok(argmax(logits.data()) == data.label(i))
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64)
}

/// Index of the largest value; first index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
