//! The multi-patch network: per-patch feature extraction, orderless
//! statistics aggregation, the fused classification head, training and
//! gradient verification.
//!
//! All arithmetic is in `f64`. Parameters are kept representable in `f32`
//! (initialization and every training step round them) so checkpoints, which
//! store little-endian `f32`, reload bit-identically.

mod aggregate;
mod checkpoint;
mod extractor;
mod gradcheck;
mod model;
mod train;

pub use aggregate::{stats_aggregate, FeatureBlob};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use extractor::{extract_blob, extract_features, handcrafted_features, HANDCRAFTED_DIM};
pub use gradcheck::{finite_difference_check, grad_check, GradCheckReport};
pub use model::{forward, forward_blob, loss_and_grads, Example, Input};
pub use train::{sgd_step, train, Stage, TrainConfig, TrainReport};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::layout::LAYOUT_DIM;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("feature blob is empty")]
    EmptyBlob,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("fused training needs a multi-patch-only checkpoint")]
    MissingStage1Checkpoint,
    #[error("training data is empty")]
    EmptyDataset,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Parse(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error("checkpoint config digest {found} does not match {expected}")]
    DigestMismatch { found: String, expected: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    /// Fixed histogram and moment features; no trainable weights.
    Handcrafted,
    /// conv3×3(8)-ReLU-pool2-conv3×3(16)-ReLU-pool2-FC.
    TinyConv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    /// Per-patch feature dimension K.
    pub k: usize,
    /// Side length patches are resized to before extraction.
    pub input_side: u32,
}

/// Orderless statistics over the patch axis; enabled ones are applied in
/// declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Max,
    Mean,
    Min,
    Median,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub extractor: ExtractorSpec,
    /// Width of the multi-patch feature fed to the head.
    pub k_stat: usize,
    pub stats: Vec<Statistic>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(ExtractorKind::TinyConv)
    }
}

impl ModelConfig {
    /// K = 64, K_stat = 32, 32 px patches, U = {max, mean}.
    pub fn desk(kind: ExtractorKind) -> Self {
        Self {
            extractor: ExtractorSpec { kind, k: 64, input_side: 32 },
            k_stat: 32,
            stats: vec![Statistic::Max, Statistic::Mean],
        }
    }

    /// K = 4096 on 224 px patches.
    pub fn full_scale(kind: ExtractorKind) -> Self {
        Self { extractor: ExtractorSpec { kind, k: 4096, input_side: 224 }, ..Self::desk(kind) }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let e = &self.extractor;
        if e.k == 0 || self.k_stat == 0 {
            return Err(NetError::InvalidConfig("k and k_stat must be at least 1".into()));
        }
        if self.stats.is_empty() {
            return Err(NetError::InvalidConfig("statistics set is empty".into()));
        }
        if self.stats.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NetError::InvalidConfig("statistics must be distinct and in max, mean, min, median order".into()));
        }
        if e.kind == ExtractorKind::TinyConv && (e.input_side < 4 || e.input_side % 4 != 0) {
            return Err(NetError::InvalidConfig(format!(
                "tiny_conv input_side {} must be a positive multiple of 4",
                e.input_side
            )));
        }
        if e.input_side == 0 {
            return Err(NetError::InvalidConfig("input_side must be at least 1".into()));
        }
        Ok(())
    }

    /// Sorts and dedups `stats` into canonical order.
    pub fn normalized(mut self) -> Self {
        self.stats.sort_unstable();
        self.stats.dedup();
        self
    }

    pub fn stat_dim(&self) -> usize {
        self.stats.len() * self.extractor.k
    }

    pub fn head_dim(&self) -> usize {
        self.k_stat + LAYOUT_DIM
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| round_f32(rng.random_range(-bound..bound))).collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[inline]
pub(crate) fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Weights of the trainable extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights {
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    pub fc_w: Tensor,
    pub fc_b: Tensor,
}

pub(crate) const CONV1_OUT: usize = 8;
pub(crate) const CONV2_OUT: usize = 16;

/// Every trainable tensor of the model. Also used for gradients and momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub extractor: Option<ConvWeights>,
    /// Aggregation layer W: K_stat × U·K.
    pub agg_w: Tensor,
    pub agg_b: Tensor,
    /// Second multi-patch layer: K_stat × K_stat.
    pub mp_w: Tensor,
    pub mp_b: Tensor,
    /// Fusion head over [multi-patch feature; layout vector] → one logit.
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl Weights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let e = &cfg.extractor;
        let extractor = (e.kind == ExtractorKind::TinyConv).then(|| {
            let q = (e.input_side / 4) as usize;
            ConvWeights {
                conv1_w: Tensor::zeros(&[CONV1_OUT, 3, 3, 3]),
                conv1_b: Tensor::zeros(&[CONV1_OUT]),
                conv2_w: Tensor::zeros(&[CONV2_OUT, CONV1_OUT, 3, 3]),
                conv2_b: Tensor::zeros(&[CONV2_OUT]),
                fc_w: Tensor::zeros(&[e.k, CONV2_OUT * q * q]),
                fc_b: Tensor::zeros(&[e.k]),
            }
        });
        Self {
            extractor,
            agg_w: Tensor::zeros(&[cfg.k_stat, cfg.stat_dim()]),
            agg_b: Tensor::zeros(&[cfg.k_stat]),
            mp_w: Tensor::zeros(&[cfg.k_stat, cfg.k_stat]),
            mp_b: Tensor::zeros(&[cfg.k_stat]),
            head_w: Tensor::zeros(&[1, cfg.head_dim()]),
            head_b: Tensor::zeros(&[1]),
        }
    }

    /// Uniform fan-in scaled initialization; biases start at zero.
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut w = Self::zeros(cfg);
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
        let lecun = |fan_in: usize| (3.0 / fan_in as f64).sqrt();
        if let Some(c) = w.extractor.as_mut() {
            c.conv1_w = Tensor::uniform(&c.conv1_w.shape.clone(), he(27), rng);
            c.conv2_w = Tensor::uniform(&c.conv2_w.shape.clone(), he(CONV1_OUT * 9), rng);
            let fan = c.fc_w.shape[1];
            c.fc_w = Tensor::uniform(&c.fc_w.shape.clone(), lecun(fan), rng);
        }
        w.agg_w = Tensor::uniform(&w.agg_w.shape.clone(), he(cfg.stat_dim()), rng);
        w.mp_w = Tensor::uniform(&w.mp_w.shape.clone(), lecun(cfg.k_stat), rng);
        w.head_w = Tensor::uniform(&w.head_w.shape.clone(), lecun(cfg.head_dim()), rng);
        w
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = Vec::with_capacity(12);
        if let Some(c) = &self.extractor {
            out.extend([
                ("conv1_w", &c.conv1_w),
                ("conv1_b", &c.conv1_b),
                ("conv2_w", &c.conv2_w),
                ("conv2_b", &c.conv2_b),
                ("fc_w", &c.fc_w),
                ("fc_b", &c.fc_b),
            ]);
        }
        out.extend([
            ("agg_w", &self.agg_w),
            ("agg_b", &self.agg_b),
            ("mp_w", &self.mp_w),
            ("mp_b", &self.mp_b),
            ("head_w", &self.head_w),
            ("head_b", &self.head_b),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(12);
        if let Some(c) = &mut self.extractor {
            out.extend([&mut c.conv1_w, &mut c.conv1_b, &mut c.conv2_w, &mut c.conv2_b, &mut c.fc_w, &mut c.fc_b]);
        }
        out.extend([
            &mut self.agg_w,
            &mut self.agg_b,
            &mut self.mp_w,
            &mut self.mp_b,
            &mut self.head_w,
            &mut self.head_b,
        ]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += other`, tensor by tensor in a fixed order.
    pub fn add_assign(&mut self, other: &Weights) {
        let theirs: Vec<&Tensor> = other.named().into_iter().map(|(_, t)| t).collect();
        for (mine, theirs) in self.tensors_mut().into_iter().zip(theirs) {
            for (a, b) in mine.data.iter_mut().zip(&theirs.data) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub(crate) fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = round_f32(*v));
        }
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Model weights, their momentum buffers and the config that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Weights,
    pub velocity: Weights,
}

impl ModelParams {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NetError> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = Weights::init(&config, &mut rng);
        let velocity = Weights::zeros(&config);
        Ok(Self { config, weights, velocity })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self, NetError> {
        config.validate()?;
        let weights = Weights::zeros(&config);
        let velocity = Weights::zeros(&config);
        Ok(Self { config, weights, velocity })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_shapes() {
        let p = ModelParams::new(ModelConfig::desk(ExtractorKind::TinyConv), 1).unwrap();
        let names: Vec<_> = p.weights.named().iter().map(|(n, t)| (*n, t.shape.clone())).collect();
        assert_eq!(names[4], ("fc_w", vec![64, 16 * 8 * 8]));
        assert_eq!(names[6], ("agg_w", vec![32, 128]));
        assert_eq!(names[10], ("head_w", vec![1, 32 + 34]));
        let h = ModelParams::new(ModelConfig::desk(ExtractorKind::Handcrafted), 1).unwrap();
        assert!(h.weights.extractor.is_none());
        assert_eq!(h.weights.named().len(), 6);
    }

    #[test]
    fn init_is_f32_representable_and_seeded() {
        let a = ModelParams::new(ModelConfig::default(), 9).unwrap();
        let b = ModelParams::new(ModelConfig::default(), 9).unwrap();
        assert_eq!(a, b);
        for (_, t) in a.weights.named() {
            assert!(t.data.iter().all(|&v| v == round_f32(v)));
        }
        assert_ne!(a, ModelParams::new(ModelConfig::default(), 10).unwrap());
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        c.stats.clear();
        assert!(c.validate().is_err());
        let c = ModelConfig { stats: vec![Statistic::Mean, Statistic::Max], ..ModelConfig::default() };
        assert!(c.validate().is_err());
        assert!(c.normalized().validate().is_ok());
        let mut c = ModelConfig::default();
        c.extractor.input_side = 30;
        assert!(c.validate().is_err());
        assert_ne!(ModelConfig::default().digest(), ModelConfig::desk(ExtractorKind::Handcrafted).digest());
        assert_eq!(ModelConfig::full_scale(ExtractorKind::TinyConv).extractor.k, 4096);
    }
}
