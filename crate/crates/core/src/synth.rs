//! Seeded synthetic images and detections for tests, benchmarks and the toy
//! two-class dataset.
//!
//! In the toy set an image is high quality when it contains a textured
//! square *and* its detections are spread apart. Negatives are split evenly
//! between the three other combinations, so the texture alone explains only
//! part of the labels.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::{Image, ImagingError, Rect};
use crate::layout::Detection;

pub const TOY_SIDE: u32 = 128;
pub const TEXTURE_SIDE: u32 = 48;

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Smooth colour gradient with a few soft blobs and mild pixel noise.
pub fn random_scene<R: Rng>(rng: &mut R, width: u32, height: u32) -> Image {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(40.0..200.0));
    let slope: [f64; 3] = std::array::from_fn(|_| rng.random_range(-60.0..60.0));
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..rng.random_range(1..4))
        .map(|_| {
            let c = [rng.random_range(0.0..width as f64), rng.random_range(0.0..height as f64)];
            let r = rng.random_range(6.0..(width.min(height) as f64 / 3.0).max(7.0));
            let amp = std::array::from_fn(|_| rng.random_range(-120.0..120.0));
            (c, r, amp)
        })
        .collect();
    let noise: Vec<f64> = (0..width as usize * height as usize).map(|_| rng.random_range(-4.0..4.0)).collect();
    Image::from_fn(width, height, |x, y| {
        let u = x as f64 / width.max(1) as f64;
        let mut px = [0u8; 3];
        for (ch, out) in px.iter_mut().enumerate() {
            let mut v = base[ch] + slope[ch] * u;
            for (c, r, amp) in &blobs {
                let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2);
                v += amp[ch] * (-d2 / (2.0 * r * r)).exp();
            }
            *out = clamp_u8(v + noise[(y * width + x) as usize]);
        }
        px
    })
    .expect("non-empty scene")
}

/// `n` detections with boxes inside the image and scores in [0,1].
pub fn random_detections<R: Rng>(rng: &mut R, n: usize, dims: (u32, u32)) -> Vec<Detection> {
    let (w, h) = dims;
    (0..n)
        .map(|_| {
            let bw = rng.random_range(1..=w);
            let bh = rng.random_range(1..=h);
            let x = rng.random_range(0..=w - bw);
            let y = rng.random_range(0..=h - bh);
            Detection::new(Rect::new(x, y, bw, bh), rng.random_range(0.0..=1.0))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ToyItem {
    pub image: Image,
    pub detections: Vec<Detection>,
    pub textured: bool,
    pub spread_layout: bool,
}

impl ToyItem {
    pub fn label(&self) -> bool {
        self.textured && self.spread_layout
    }
}

/// Boxes in distinct quadrants (spread) or stacked on one spot (clustered).
fn toy_detections<R: Rng>(rng: &mut R, spread: bool) -> Vec<Detection> {
    let n = rng.random_range(2..=4);
    let half = TOY_SIDE / 2;
    let mut quads = [(0, 0), (half, 0), (0, half), (half, half)];
    quads.shuffle(rng);
    let anchor = (rng.random_range(8..TOY_SIDE - 56), rng.random_range(8..TOY_SIDE - 56));
    (0..n)
        .map(|i| {
            let side = rng.random_range(20..40);
            let rect = if spread {
                let (qx, qy) = quads[i];
                Rect::new(qx + rng.random_range(0..half - side), qy + rng.random_range(0..half - side), side, side)
            } else {
                Rect::new(anchor.0 + rng.random_range(0..8), anchor.1 + rng.random_range(0..8), side, side)
            };
            Detection::new(rect, rng.random_range(0.3..1.0))
        })
        .collect()
}

pub fn toy_item<R: Rng>(rng: &mut R, textured: bool, spread_layout: bool) -> ToyItem {
    let mut image = random_scene(rng, TOY_SIDE, TOY_SIDE);
    if textured {
        let x0 = rng.random_range(0..=TOY_SIDE - TEXTURE_SIDE);
        let y0 = rng.random_range(0..=TOY_SIDE - TEXTURE_SIDE);
        let period = rng.random_range(2..5);
        let a: [u8; 3] = std::array::from_fn(|_| rng.random_range(0..60));
        let b: [u8; 3] = std::array::from_fn(|_| rng.random_range(195..=255));
        for y in y0..y0 + TEXTURE_SIDE {
            for x in x0..x0 + TEXTURE_SIDE {
                let on = ((x - x0) / period + (y - y0) / period) % 2 == 0;
                image.set(x, y, if on { a } else { b });
            }
        }
    }
    let detections = toy_detections(rng, spread_layout);
    ToyItem { image, detections, textured, spread_layout }
}

/// `n` toy items: half positive, negatives split over the other three
/// texture/layout combinations, in shuffled order.
pub fn toy_dataset(n: usize, seed: u64) -> Vec<ToyItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds: Vec<(bool, bool)> = (0..n)
        .map(|i| {
            if i < n / 2 {
                (true, true)
            } else {
                [(true, false), (false, true), (false, false)][(i - n / 2) % 3]
            }
        })
        .collect();
    kinds.shuffle(&mut rng);
    kinds.into_iter().map(|(t, s)| toy_item(&mut rng, t, s)).collect()
}

/// Writes `img_XXXX.png`, `img_XXXX.dets.json` and a `manifest.csv` with
/// mean ratings 7.0 / 3.0 into `dir`, returning the manifest path.
pub fn write_toy_dataset(dir: &Path, items: &[ToyItem]) -> Result<PathBuf, ImagingError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source: std::io::Error| ImagingError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let manifest = dir.join("manifest.csv");
    let mut csv = fs::File::create(&manifest).map_err(io(&manifest))?;
    writeln!(csv, "path,mean_rating").map_err(io(&manifest))?;
    for (i, item) in items.iter().enumerate() {
        let png = dir.join(format!("img_{i:04}.png"));
        item.image
            .to_rgb_image()
            .save(&png)
            .map_err(|e| ImagingError::CorruptData { path: png.clone(), reason: e.to_string() })?;
        let dets = dir.join(format!("img_{i:04}.dets.json"));
        let json = serde_json::to_string(&item.detections).expect("detections serialize");
        fs::write(&dets, json).map_err(io(&dets))?;
        let rating = if item.label() { 7.0 } else { 3.0 };
        writeln!(csv, "img_{i:04}.png,{rating:.1}").map_err(io(&manifest))?;
    }
    Ok(manifest)
}
