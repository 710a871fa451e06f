//! SGD with momentum and the two-stage training schedule.

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{batch_loss, batch_loss_and_grads, Example};
use super::{ModelConfig, ModelParams, NetError, Weights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 0.01, weight_decay: 1e-5, momentum: 0.9, epochs: 20, batch_size: 16, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(NetError::InvalidConfig(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(NetError::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(NetError::InvalidConfig("momentum must be in [0,1) and weight decay nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Multi-patch branch only: the layout input is held at zero.
    MpOnly,
    /// Whole model, starting from a multi-patch-only checkpoint.
    Fused,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub params: ModelParams,
    /// Mean training loss over the whole set after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Classical momentum with L2 folded into the gradient:
/// `g' = g + wd·p`, `v' = μ·v + g'`, `p' = p − lr·v'`.
pub fn sgd_step(params: &mut ModelParams, grads: &Weights, cfg: &TrainConfig) {
    let g_tensors: Vec<_> = grads.named().into_iter().map(|(_, t)| t).collect();
    for ((p, v), g) in params
        .weights
        .tensors_mut()
        .into_iter()
        .zip(params.velocity.tensors_mut())
        .zip(g_tensors)
    {
        for ((pi, vi), gi) in p.data.iter_mut().zip(v.data.iter_mut()).zip(&g.data) {
            let g = gi + cfg.weight_decay * *pi;
            *vi = cfg.momentum * *vi + g;
            *pi -= cfg.lr * *vi;
        }
    }
}

/// Trains one stage. `MpOnly` starts from a fresh seeded initialization
/// (or `init` when given); `Fused` requires `init`, the multi-patch-only
/// result, and fine-tunes every weight with fresh momentum.
///
/// Runs are reproducible: the shuffle is seeded, batch gradients are reduced
/// in example order, and parameters are rounded to `f32` after every step.
pub fn train(
    data: &[Example],
    model: &ModelConfig,
    cfg: &TrainConfig,
    stage: Stage,
    init: Option<&ModelParams>,
) -> Result<TrainReport, NetError> {
    cfg.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let mut params = match (stage, init) {
        (Stage::Fused, None) => return Err(NetError::MissingStage1Checkpoint),
        (_, Some(p)) => {
            if &p.config != model {
                return Err(NetError::DigestMismatch { found: p.config.digest(), expected: model.digest() });
            }
            let mut p = p.clone();
            p.velocity = Weights::zeros(model);
            p
        }
        (Stage::MpOnly, None) => ModelParams::new(model.clone(), cfg.seed)?,
    };
    let zero_layout = stage == Stage::MpOnly;
    let samples = data.iter().map(|ex| ex.precomputed(&params)).collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i].clone()));
            let (_, grads) = batch_loss_and_grads(&batch, &params, zero_layout)?;
            sgd_step(&mut params, &grads, cfg);
            params.weights.round_to_f32();
            params.velocity.round_to_f32();
        }
        if !params.weights.all_finite() {
            return Err(NetError::NonFinite(format!("weights after epoch {epoch}")));
        }
        let loss = batch_loss(&samples, &params, zero_layout)?;
        debug!("{stage:?} epoch {epoch}: loss {loss:.6}");
        epoch_losses.push(loss);
    }
    Ok(TrainReport { params, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{ExtractorKind, FeatureBlob, Input};
    use crate::layout::LayoutVector;

    fn params_with(value: f64) -> ModelParams {
        let mut p = ModelParams::zeros(ModelConfig::desk(ExtractorKind::Handcrafted)).unwrap();
        for t in p.weights.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = value);
        }
        p
    }

    fn grads_with(cfg: &ModelConfig, value: f64) -> Weights {
        let mut g = Weights::zeros(cfg);
        for t in g.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = value);
        }
        g
    }

    #[test]
    fn plain_sgd_without_momentum() {
        let mut p = params_with(1.0);
        let g = grads_with(&p.config, 0.5);
        let cfg = TrainConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0, ..TrainConfig::default() };
        sgd_step(&mut p, &g, &cfg);
        assert!(p.weights.agg_w.data.iter().all(|&v| v == 1.0 - 0.1 * 0.5));
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = params_with(0.75);
        let before = p.clone();
        let g = grads_with(&p.config, 0.0);
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        sgd_step(&mut p, &g, &cfg);
        assert_eq!(p.weights, before.weights);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = params_with(0.0);
        let g = grads_with(&p.config, 2.0);
        let cfg = TrainConfig { lr: 0.01, momentum: 0.9, weight_decay: 0.0, ..TrainConfig::default() };
        sgd_step(&mut p, &g, &cfg);
        sgd_step(&mut p, &g, &cfg);
        let expected = -0.01 * 2.0 * (1.0 + 1.9);
        assert!(p.weights.head_b.data.iter().all(|&v| (v - expected).abs() < 1e-15));
    }

    #[test]
    fn weight_decay_shrinks() {
        let mut p = params_with(2.0);
        let g = grads_with(&p.config, 0.0);
        let cfg = TrainConfig { lr: 0.5, momentum: 0.0, weight_decay: 0.1, ..TrainConfig::default() };
        sgd_step(&mut p, &g, &cfg);
        assert!(p.weights.mp_w.data.iter().all(|&v| (v - (2.0 - 0.5 * 0.2)).abs() < 1e-15));
    }

    #[test]
    fn fused_requires_checkpoint() {
        let model = ModelConfig::desk(ExtractorKind::Handcrafted);
        let blob = FeatureBlob::new(vec![vec![0.0; 64]]).unwrap();
        let data = vec![Example { input: Input::Blob(blob), layout: LayoutVector::zeros(), label: true }];
        assert!(matches!(
            train(&data, &model, &TrainConfig::default(), Stage::Fused, None),
            Err(NetError::MissingStage1Checkpoint)
        ));
        assert!(matches!(
            train(&[], &model, &TrainConfig::default(), Stage::MpOnly, None),
            Err(NetError::EmptyDataset)
        ));
    }
}
