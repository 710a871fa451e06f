//! Per-patch feature extractors.

use super::aggregate::FeatureBlob;
use super::{ConvWeights, ExtractorKind, ExtractorSpec, ModelParams, NetError, CONV1_OUT, CONV2_OUT};
use crate::imaging::{central_gradients, rgb_to_ycbcr, Image, Plane};

const HIST_BINS: usize = 16;
/// Largest central-difference gradient magnitude on 8-bit luma.
const MAX_GRAD: f64 = 127.5 * std::f64::consts::SQRT_2;
/// Luma histogram, gradient-magnitude histogram, RGB means and variances.
pub const HANDCRAFTED_DIM: usize = 2 * HIST_BINS + 6;

/// Histogram and moment features scaled to roughly unit range, zero-padded or
/// truncated to `k`.
pub fn handcrafted_features(patch: &Image, k: usize) -> Vec<f64> {
    let (w, h) = patch.dims();
    let n = (w as usize * h as usize) as f64;
    let luma = Plane::new(w, h, patch.pixels().iter().map(|&p| rgb_to_ycbcr(p)[0]).collect());
    let (gx, gy) = central_gradients(&luma);

    let mut feats = vec![0.0; HANDCRAFTED_DIM];
    for &y in luma.data() {
        let bin = ((y / 256.0 * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        feats[bin] += 1.0;
    }
    for (&dx, &dy) in gx.data().iter().zip(gy.data()) {
        let mag = dx.hypot(dy);
        let bin = ((mag / MAX_GRAD * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        feats[HIST_BINS + bin] += 1.0;
    }
    for v in &mut feats[..2 * HIST_BINS] {
        *v /= n;
    }
    for c in 0..3 {
        let mean = patch.pixels().iter().map(|p| p[c] as f64).sum::<f64>() / n;
        let var = patch.pixels().iter().map(|p| (p[c] as f64 - mean).powi(2)).sum::<f64>() / n;
        feats[2 * HIST_BINS + c] = mean / 255.0;
        feats[2 * HIST_BINS + 3 + c] = var / (255.0 * 255.0);
    }
    feats.resize(k, 0.0);
    feats
}

fn check_patch(patch: &Image, spec: &ExtractorSpec) -> Result<(), NetError> {
    if patch.dims() != (spec.input_side, spec.input_side) {
        return Err(NetError::ShapeMismatch(format!(
            "patch is {}x{}, extractor expects {}x{}",
            patch.width(),
            patch.height(),
            spec.input_side,
            spec.input_side
        )));
    }
    Ok(())
}

pub fn extract_features(patch: &Image, params: &ModelParams) -> Result<Vec<f64>, NetError> {
    let spec = &params.config.extractor;
    check_patch(patch, spec)?;
    match spec.kind {
        ExtractorKind::Handcrafted => Ok(handcrafted_features(patch, spec.k)),
        ExtractorKind::TinyConv => {
            let w = params.weights.extractor.as_ref().ok_or_else(|| {
                NetError::ShapeMismatch("tiny_conv extractor has no weights".into())
            })?;
            Ok(conv_forward(patch, w, spec).features)
        }
    }
}

pub fn extract_blob(patches: &[Image], params: &ModelParams) -> Result<FeatureBlob, NetError> {
    let rows = patches.iter().map(|p| extract_features(p, params)).collect::<Result<Vec<_>, _>>()?;
    FeatureBlob::new(rows)
}

/// Channel-major activation volume.
#[derive(Clone, Debug)]
pub(crate) struct Volume {
    pub channels: usize,
    pub side: usize,
    pub data: Vec<f64>,
}

impl Volume {
    fn zeros(channels: usize, side: usize) -> Self {
        Self { channels, side, data: vec![0.0; channels * side * side] }
    }

    #[inline]
    fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.side + y) * self.side + x
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct ConvCache {
    input: Volume,
    pre1: Volume,
    pool1: Volume,
    arg1: Vec<usize>,
    pre2: Volume,
    pool2: Volume,
    arg2: Vec<usize>,
    pub features: Vec<f64>,
}

impl ConvCache {
    /// ReLU signs and pooling winners: the piecewise-linear region this
    /// forward pass landed in.
    pub fn kink_signature(&self, out: &mut Vec<u64>) {
        for pre in [&self.pre1, &self.pre2] {
            out.extend(pre.data.chunks(64).map(|c| {
                c.iter().enumerate().fold(0u64, |acc, (i, &v)| acc | (((v > 0.0) as u64) << i))
            }));
        }
        out.extend(self.arg1.iter().chain(&self.arg2).map(|&a| a as u64));
    }
}

fn image_volume(patch: &Image) -> Volume {
    let side = patch.width() as usize;
    let mut v = Volume::zeros(3, side);
    for y in 0..side {
        for x in 0..side {
            let px = patch.get(x as u32, y as u32);
            for (c, &value) in px.iter().enumerate() {
                let i = v.idx(c, y, x);
                v.data[i] = value as f64 / 255.0 - 0.5;
            }
        }
    }
    v
}

/// 3×3 convolution, zero padding 1, stride 1.
fn conv3x3(input: &Volume, w: &[f64], b: &[f64], out_channels: usize) -> Volume {
    let (cin, s) = (input.channels, input.side);
    let mut out = Volume::zeros(out_channels, s);
    for o in 0..out_channels {
        let plane = &mut out.data[o * s * s..(o + 1) * s * s];
        plane.fill(b[o]);
        for c in 0..cin {
            let src = &input.data[c * s * s..(c + 1) * s * s];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wt = w[((o * cin + c) * 3 + ky) * 3 + kx];
                    for y in 0..s {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= s as isize {
                            continue;
                        }
                        let src_row = &src[sy as usize * s..(sy as usize + 1) * s];
                        let dst_row = &mut plane[y * s..(y + 1) * s];
                        let (x0, x1) = (if kx == 0 { 1 } else { 0 }, if kx == 2 { s - 1 } else { s });
                        for x in x0..x1 {
                            dst_row[x] += wt * src_row[x + kx - 1];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `want_input` is set.
fn conv3x3_backward(
    input: &Volume,
    w: &[f64],
    dout: &Volume,
    dw: &mut [f64],
    db: &mut [f64],
    want_input: bool,
) -> Option<Volume> {
    let (cin, s, cout) = (input.channels, input.side, dout.channels);
    let mut din = want_input.then(|| Volume::zeros(cin, s));
    for (o, bias_grad) in db.iter_mut().enumerate().take(cout) {
        let g = &dout.data[o * s * s..(o + 1) * s * s];
        *bias_grad += g.iter().sum::<f64>();
        for c in 0..cin {
            let src = &input.data[c * s * s..(c + 1) * s * s];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((o * cin + c) * 3 + ky) * 3 + kx;
                    let wt = w[widx];
                    let mut acc = 0.0;
                    for y in 0..s {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= s as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        let (x0, x1) = (if kx == 0 { 1 } else { 0 }, if kx == 2 { s - 1 } else { s });
                        for x in x0..x1 {
                            let gv = g[y * s + x];
                            acc += gv * src[sy * s + x + kx - 1];
                            if let Some(d) = din.as_mut() {
                                d.data[(c * s + sy) * s + x + kx - 1] += wt * gv;
                            }
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    din
}

/// ReLU followed by 2×2 max pooling; records the winning input index of
/// each output cell.
fn relu_pool(pre: &Volume) -> (Volume, Vec<usize>) {
    let (c, s) = (pre.channels, pre.side);
    let half = s / 2;
    let mut out = Volume::zeros(c, half);
    let mut arg = vec![0; c * half * half];
    for ch in 0..c {
        for y in 0..half {
            for x in 0..half {
                let mut best_i = pre.idx(ch, 2 * y, 2 * x);
                let mut best = pre.data[best_i].max(0.0);
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = pre.idx(ch, 2 * y + dy, 2 * x + dx);
                    let v = pre.data[i].max(0.0);
                    if v > best {
                        best = v;
                        best_i = i;
                    }
                }
                let o = out.idx(ch, y, x);
                out.data[o] = best;
                arg[o] = best_i;
            }
        }
    }
    (out, arg)
}

fn relu_pool_backward(pre: &Volume, arg: &[usize], dout: &Volume) -> Volume {
    let mut d = Volume::zeros(pre.channels, pre.side);
    for (o, &i) in arg.iter().enumerate() {
        if pre.data[i] > 0.0 {
            d.data[i] += dout.data[o];
        }
    }
    d
}

pub(crate) fn conv_forward(patch: &Image, w: &ConvWeights, spec: &ExtractorSpec) -> ConvCache {
    let input = image_volume(patch);
    let pre1 = conv3x3(&input, &w.conv1_w.data, &w.conv1_b.data, CONV1_OUT);
    let (pool1, arg1) = relu_pool(&pre1);
    let pre2 = conv3x3(&pool1, &w.conv2_w.data, &w.conv2_b.data, CONV2_OUT);
    let (pool2, arg2) = relu_pool(&pre2);
    let flat = &pool2.data;
    let features = (0..spec.k)
        .map(|j| {
            let row = &w.fc_w.data[j * flat.len()..(j + 1) * flat.len()];
            w.fc_b.data[j] + row.iter().zip(flat).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    ConvCache { input, pre1, pool1, arg1, pre2, pool2, arg2, features }
}

/// Backpropagates `dfeat` through one extractor column into `grads`.
pub(crate) fn conv_backward(cache: &ConvCache, w: &ConvWeights, dfeat: &[f64], grads: &mut ConvWeights) {
    let flat = &cache.pool2.data;
    let n = flat.len();
    let mut dpool2 = Volume::zeros(cache.pool2.channels, cache.pool2.side);
    for (j, &g) in dfeat.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grads.fc_b.data[j] += g;
        let row = &w.fc_w.data[j * n..(j + 1) * n];
        let grow = &mut grads.fc_w.data[j * n..(j + 1) * n];
        for i in 0..n {
            grow[i] += g * flat[i];
            dpool2.data[i] += g * row[i];
        }
    }
    let dpre2 = relu_pool_backward(&cache.pre2, &cache.arg2, &dpool2);
    let dpool1 = conv3x3_backward(&cache.pool1, &w.conv2_w.data, &dpre2, &mut grads.conv2_w.data, &mut grads.conv2_b.data, true)
        .expect("input gradient requested");
    let dpre1 = relu_pool_backward(&cache.pre1, &cache.arg1, &dpool1);
    conv3x3_backward(&cache.input, &w.conv1_w.data, &dpre1, &mut grads.conv1_w.data, &mut grads.conv1_b.data, false);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{ModelConfig, ModelParams};

    #[test]
    fn black_patch_handcrafted() {
        let patch = Image::filled(32, 32, [0, 0, 0]).unwrap();
        let f = handcrafted_features(&patch, 64);
        assert_eq!(f.len(), 64);
        assert_eq!(f[0], 1.0);
        assert!(f[1..HIST_BINS].iter().all(|&v| v == 0.0));
        assert_eq!(f[HIST_BINS], 1.0);
        assert!(f[2 * HIST_BINS..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn handcrafted_truncates_and_is_deterministic() {
        let patch = Image::from_fn(16, 16, |x, y| [(x * 13) as u8, (y * 7) as u8, ((x ^ y) * 9) as u8]).unwrap();
        let a = handcrafted_features(&patch, 64);
        assert_eq!(a, handcrafted_features(&patch, 64));
        assert_eq!(&handcrafted_features(&patch, 10)[..], &a[..10]);
        let hist: f64 = a[..HIST_BINS].iter().sum();
        assert!((hist - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_conv_shape_contract() {
        let params = ModelParams::new(ModelConfig::default(), 3).unwrap();
        let patch = Image::from_fn(32, 32, |x, y| [(x * 8) as u8, (y * 8) as u8, 77]).unwrap();
        let f = extract_features(&patch, &params).unwrap();
        assert_eq!(f.len(), 64);
        assert_eq!(f, extract_features(&patch, &params).unwrap());
        let wrong = Image::filled(16, 16, [0, 0, 0]).unwrap();
        assert!(matches!(extract_features(&wrong, &params), Err(NetError::ShapeMismatch(_))));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let params = ModelParams::new(ModelConfig::default(), 4).unwrap();
        let w = params.weights.extractor.as_ref().unwrap();
        let patch = Image::from_fn(32, 32, |x, y| [(x * 5 + y) as u8, (y * 3) as u8, (x * y) as u8]).unwrap();
        let input = image_volume(&patch);
        let pre = conv3x3(&input, &w.conv1_w.data, &w.conv1_b.data, CONV1_OUT);
        for &(o, y, x) in &[(0usize, 0usize, 0usize), (3, 5, 31), (7, 31, 12), (2, 16, 16)] {
            let mut acc = w.conv1_b.data[o];
            for c in 0..3 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (sy, sx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                        if (0..32).contains(&sy) && (0..32).contains(&sx) {
                            acc += w.conv1_w.data[((o * 3 + c) * 3 + ky) * 3 + kx]
                                * input.data[input.idx(c, sy as usize, sx as usize)];
                        }
                    }
                }
            }
            assert!((pre.data[pre.idx(o, y, x)] - acc).abs() < 1e-12);
        }
    }
}
