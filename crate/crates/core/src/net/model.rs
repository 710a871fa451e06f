//! Forward pass, binary cross-entropy loss and reverse-mode gradients.

use rayon::prelude::*;

use super::aggregate::{aggregate_backward, aggregate_with_routes, FeatureBlob, Route};
use super::extractor::{conv_backward, conv_forward, handcrafted_features, ConvCache};
use super::{ExtractorKind, ModelParams, NetError, Weights};
use crate::imaging::Image;
use crate::layout::{LayoutVector, LAYOUT_DIM};

/// What the network sees for one image: raw patches, or features already
/// extracted by a weight-free extractor.
#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    Patches(Vec<Image>),
    Blob(FeatureBlob),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Input,
    pub layout: LayoutVector,
    /// `true` for the high-quality class.
    pub label: bool,
}

impl Example {
    pub fn new(patches: Vec<Image>, layout: LayoutVector, label: bool) -> Self {
        Self { input: Input::Patches(patches), layout, label }
    }

    /// Replaces patches by their features when the extractor has no weights,
    /// so repeated passes skip extraction. Trainable extractors are left as is.
    pub fn precomputed(&self, params: &ModelParams) -> Result<Self, NetError> {
        match (&self.input, params.config.extractor.kind) {
            (Input::Patches(p), ExtractorKind::Handcrafted) => Ok(Self {
                input: Input::Blob(super::extract_blob(p, params)?),
                layout: self.layout.clone(),
                label: self.label,
            }),
            _ => Ok(self.clone()),
        }
    }
}

pub(crate) struct Cache {
    conv: Vec<ConvCache>,
    blob: FeatureBlob,
    stats: Vec<f64>,
    routes: Vec<Route>,
    pre_agg: Vec<f64>,
    hidden: Vec<f64>,
    head_in: Vec<f64>,
    pub logit: f64,
}

impl Cache {
    pub fn kink_signature(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for c in &self.conv {
            c.kink_signature(&mut out);
        }
        out.extend(self.routes.iter().map(|r| match *r {
            Route::Pick(i) => i as u64,
            Route::Pair(a, b) => ((a as u64) << 32) | b as u64,
            Route::All => u64::MAX,
        }));
        out.extend(self.pre_agg.iter().map(|&v| (v > 0.0) as u64));
        out
    }
}

fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(j, bias)| bias + w[j * n..(j + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// Accumulates `dw += dy ⊗ x`, `db += dy`; returns `Wᵀ dy`.
fn dense_backward(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let n = x.len();
    let mut dx = vec![0.0; n];
    for (j, &g) in dy.iter().enumerate() {
        db[j] += g;
        if g == 0.0 {
            continue;
        }
        let row = &w[j * n..(j + 1) * n];
        let grow = &mut dw[j * n..(j + 1) * n];
        for i in 0..n {
            grow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
    dx
}

pub(crate) fn forward_cache(input: &Input, layout: &[f64], params: &ModelParams) -> Result<Cache, NetError> {
    let cfg = &params.config;
    if layout.len() != LAYOUT_DIM {
        return Err(NetError::ShapeMismatch(format!("layout vector of {} entries", layout.len())));
    }
    let mut conv = Vec::new();
    let blob = match input {
        Input::Blob(b) => {
            if cfg.extractor.kind != ExtractorKind::Handcrafted {
                return Err(NetError::ShapeMismatch("precomputed features need a weight-free extractor".into()));
            }
            b.clone()
        }
        Input::Patches(patches) => {
            let side = cfg.extractor.input_side;
            if let Some(p) = patches.iter().find(|p| p.dims() != (side, side)) {
                return Err(NetError::ShapeMismatch(format!(
                    "patch is {}x{}, extractor expects {side}x{side}",
                    p.width(),
                    p.height()
                )));
            }
            let rows = match cfg.extractor.kind {
                ExtractorKind::Handcrafted => {
                    patches.iter().map(|p| handcrafted_features(p, cfg.extractor.k)).collect()
                }
                ExtractorKind::TinyConv => {
                    let w = params
                        .weights
                        .extractor
                        .as_ref()
                        .ok_or_else(|| NetError::ShapeMismatch("tiny_conv extractor has no weights".into()))?;
                    conv = patches.iter().map(|p| conv_forward(p, w, &cfg.extractor)).collect::<Vec<_>>();
                    conv.iter().map(|c| c.features.clone()).collect()
                }
            };
            FeatureBlob::new(rows)?
        }
    };
    if blob.cols() != cfg.extractor.k {
        return Err(NetError::ShapeMismatch(format!("blob has {} features, config K = {}", blob.cols(), cfg.extractor.k)));
    }
    let (stats, routes) = aggregate_with_routes(&blob, &cfg.stats)?;
    let w = &params.weights;
    let pre_agg = dense(&w.agg_w.data, &w.agg_b.data, &stats);
    let hidden: Vec<f64> = pre_agg.iter().map(|&v| v.max(0.0)).collect();
    let mut head_in = dense(&w.mp_w.data, &w.mp_b.data, &hidden);
    head_in.extend_from_slice(layout);
    let logit = dense(&w.head_w.data, &w.head_b.data, &head_in)[0];
    Ok(Cache { conv, blob, stats, routes, pre_agg, hidden, head_in, logit })
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `-[y ln σ(z) + (1−y) ln(1−σ(z))]`.
pub(crate) fn bce_with_logit(z: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Probability of the high-quality class.
pub fn forward(patches: &[Image], layout: &LayoutVector, params: &ModelParams) -> Result<f64, NetError> {
    let cache = forward_cache(&Input::Patches(patches.to_vec()), layout.as_slice(), params)?;
    Ok(sigmoid(cache.logit))
}

pub fn forward_blob(blob: &FeatureBlob, layout: &LayoutVector, params: &ModelParams) -> Result<f64, NetError> {
    let cache = forward_cache(&Input::Blob(blob.clone()), layout.as_slice(), params)?;
    Ok(sigmoid(cache.logit))
}

pub(crate) fn example_layout(ex: &Example, zero_layout: bool) -> Vec<f64> {
    if zero_layout {
        vec![0.0; LAYOUT_DIM]
    } else {
        ex.layout.as_slice().to_vec()
    }
}

/// Loss and gradients of one example, scaled by `scale`.
fn example_grads(cache: &Cache, label: bool, params: &ModelParams, scale: f64) -> Weights {
    let cfg = &params.config;
    let w = &params.weights;
    let mut g = Weights::zeros(cfg);
    let y = if label { 1.0 } else { 0.0 };
    let dz = (sigmoid(cache.logit) - y) * scale;

    let dhead = dense_backward(&w.head_w.data, &cache.head_in, &[dz], &mut g.head_w.data, &mut g.head_b.data);
    let dmp = &dhead[..cfg.k_stat];
    let dhidden = dense_backward(&w.mp_w.data, &cache.hidden, dmp, &mut g.mp_w.data, &mut g.mp_b.data);
    let dpre: Vec<f64> = dhidden.iter().zip(&cache.pre_agg).map(|(d, &p)| if p > 0.0 { *d } else { 0.0 }).collect();
    let dstats = dense_backward(&w.agg_w.data, &cache.stats, &dpre, &mut g.agg_w.data, &mut g.agg_b.data);

    if let (Some(cw), Some(cg)) = (w.extractor.as_ref(), g.extractor.as_mut()) {
        let dblob = aggregate_backward(&cache.routes, &dstats, cache.blob.rows(), cache.blob.cols());
        for (conv, drow) in cache.conv.iter().zip(&dblob) {
            conv_backward(conv, cw, drow, cg);
        }
    }
    g
}

/// Mean loss over a batch and its gradient. Examples are evaluated in
/// parallel; gradients are summed in batch order so results are reproducible.
pub fn loss_and_grads(batch: &[Example], params: &ModelParams) -> Result<(f64, Weights), NetError> {
    batch_loss_and_grads(batch, params, false)
}

pub(crate) fn batch_loss_and_grads(
    batch: &[Example],
    params: &ModelParams,
    zero_layout: bool,
) -> Result<(f64, Weights), NetError> {
    if batch.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let scale = 1.0 / batch.len() as f64;
    let per_example = batch
        .par_iter()
        .map(|ex| {
            let cache = forward_cache(&ex.input, &example_layout(ex, zero_layout), params)?;
            let loss = bce_with_logit(cache.logit, ex.label);
            Ok((loss, example_grads(&cache, ex.label, params, scale)))
        })
        .collect::<Result<Vec<_>, NetError>>()?;
    let mut total = Weights::zeros(&params.config);
    let mut loss = 0.0;
    for (l, g) in &per_example {
        loss += l;
        total.add_assign(g);
    }
    Ok((loss * scale, total))
}

/// Mean loss only.
pub(crate) fn batch_loss(batch: &[Example], params: &ModelParams, zero_layout: bool) -> Result<f64, NetError> {
    let mut loss = 0.0;
    for ex in batch {
        let cache = forward_cache(&ex.input, &example_layout(ex, zero_layout), params)?;
        loss += bce_with_logit(cache.logit, ex.label);
    }
    Ok(loss / batch.len() as f64)
}

/// Loss plus the concatenated kink signatures of every example.
pub(crate) fn batch_loss_with_signature(batch: &[Example], params: &ModelParams) -> Result<(f64, Vec<u64>), NetError> {
    let mut loss = 0.0;
    let mut sig = Vec::new();
    for ex in batch {
        let cache = forward_cache(&ex.input, ex.layout.as_slice(), params)?;
        loss += bce_with_logit(cache.logit, ex.label);
        sig.extend(cache.kink_signature());
    }
    Ok((loss / batch.len() as f64, sig))
}
