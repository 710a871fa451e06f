//! Normalized saliency maps and per-patch saliency scores.
//!
//! The shipped estimator is a global-contrast measure: each pixel's saliency is
//! the distance, in YCbCr, between a Gaussian-blurred version of the image and
//! the image-wide mean colour. Other estimators can be plugged in through
//! [`SaliencyEstimator`].

use std::path::Path;

use crate::imaging::{derive_planes, Image, ImagingError, IntegralPlane, Plane, PlaneSet, Rect};

/// Per-pixel saliency in `[0, 1]` with its summed-area table.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    plane: Plane,
    integral: IntegralPlane,
}

impl SaliencyMap {
    /// Wraps a plane whose values are already in `[0, 1]`.
    pub fn from_plane(plane: Plane) -> Result<Self, ImagingError> {
        if let Some(v) = plane.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImagingError::Invalid(format!("saliency value {v} outside [0,1]")));
        }
        let integral = IntegralPlane::new(&plane);
        Ok(Self { plane, integral })
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn width(&self) -> u32 {
        self.plane.width()
    }

    pub fn height(&self) -> u32 {
        self.plane.height()
    }

    pub fn rect_sum(&self, r: &Rect) -> Result<f64, ImagingError> {
        self.integral.rect_sum(r)
    }

    /// Writes the map as 8-bit grayscale (value·255, rounded).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImagingError> {
        let path = path.as_ref();
        let raw: Vec<u8> = self.plane.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        let gray = image::GrayImage::from_raw(self.width(), self.height(), raw)
            .expect("plane length matches its dimensions");
        gray.save_with_format(path, image::ImageFormat::Png).map_err(|e| ImagingError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })
    }
}

pub trait SaliencyEstimator {
    fn estimate(&self, img: &Image, planes: &PlaneSet) -> SaliencyMap;
}

/// Blurred-colour distance to the global mean colour, min-max normalized.
#[derive(Clone, Copy, Debug, Default)]
pub struct GlobalContrast;

impl SaliencyEstimator for GlobalContrast {
    fn estimate(&self, img: &Image, planes: &PlaneSet) -> SaliencyMap {
        let (w, h) = img.dims();
        let sigma = w.min(h) as f64 / 16.0;
        let channels = [&planes.y, &planes.cb, &planes.cr];
        let means = channels.map(|p| p.data().iter().sum::<f64>() / p.data().len() as f64);
        let blurred = channels.map(|p| gaussian_blur(p, sigma));
        let n = w as usize * h as usize;
        let mut raw = Vec::with_capacity(n);
        for i in 0..n {
            let d2: f64 = (0..3).map(|c| (blurred[c].data()[i] - means[c]).powi(2)).sum();
            raw.push(d2.sqrt());
        }
        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let normalized = if hi > lo {
            raw.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
        } else {
            vec![0.0; n]
        };
        SaliencyMap::from_plane(Plane::new(w, h, normalized)).expect("normalized into [0,1]")
    }
}

pub fn compute_saliency(img: &Image) -> SaliencyMap {
    GlobalContrast.estimate(img, &derive_planes(img))
}

/// Mean saliency over `r`.
pub fn patch_saliency(map: &SaliencyMap, r: &Rect) -> Result<f64, ImagingError> {
    let s = map.rect_sum(r)?;
    Ok((s / r.area() as f64).clamp(0.0, 1.0))
}

/// Normalized Gaussian taps over radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(p: &Plane, sigma: f64) -> Plane {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (p.width() as i64, p.height() as i64);
    let horiz = Plane::from_fn(p.width(), p.height(), |x, y| {
        k.iter()
            .enumerate()
            .map(|(i, t)| t * p.get((x as i64 + i as i64 - r).clamp(0, w - 1) as u32, y))
            .sum()
    });
    Plane::from_fn(p.width(), p.height(), |x, y| {
        k.iter()
            .enumerate()
            .map(|(i, t)| t * horiz.get(x, (y as i64 + i as i64 - r).clamp(0, h - 1) as u32))
            .sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct 2-D evaluation of the estimator formula: non-separable
    /// convolution with clamped indices.
    fn oracle_saliency(img: &Image) -> Vec<f64> {
        let (w, h) = (img.width() as i64, img.height() as i64);
        let sigma = w.min(h) as f64 / 16.0;
        let radius = (3.0 * sigma).ceil().max(1.0) as i64;
        let planes = derive_planes(img);
        let ch = [&planes.y, &planes.cb, &planes.cr];
        let mut norm = 0.0;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                norm += (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            }
        }
        let mean: Vec<f64> = ch.iter().map(|p| p.data().iter().sum::<f64>() / (w * h) as f64).collect();
        let mut raw = vec![0.0; (w * h) as usize];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        let wt = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp() / norm;
                        let sx = (x + dx).clamp(0, w - 1) as u32;
                        let sy = (y + dy).clamp(0, h - 1) as u32;
                        for c in 0..3 {
                            acc[c] += wt * ch[c].get(sx, sy);
                        }
                    }
                }
                raw[(y * w + x) as usize] =
                    (0..3).map(|c| (acc[c] - mean[c]).powi(2)).sum::<f64>().sqrt();
            }
        }
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        raw.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }).collect()
    }

    #[test]
    fn constant_image_gives_zero_map() {
        let img = Image::filled(40, 30, [90, 10, 200]).unwrap();
        let map = compute_saliency(&img);
        assert!(map.plane().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bright_square_is_most_salient() {
        let img = Image::from_fn(64, 64, |x, y| {
            if (20..28).contains(&x) && (36..44).contains(&y) {
                [250, 250, 250]
            } else {
                [15, 15, 20]
            }
        })
        .unwrap();
        let map = compute_saliency(&img);
        let oracle = oracle_saliency(&img);
        for (a, b) in map.plane().data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| ((i % 64) as u32, (i / 64) as u32))
                .unwrap()
        };
        for (x, y) in [argmax(map.plane().data()), argmax(&oracle)] {
            assert!((20..28).contains(&x) && (36..44).contains(&y), "argmax at ({x},{y})");
        }
    }

    #[test]
    fn random_image_stays_in_unit_range_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = Image::from_fn(37, 23, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap();
        let a = compute_saliency(&img);
        let b = compute_saliency(&img);
        assert_eq!(a, b);
        let d = a.plane().data();
        assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(d.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
        assert_eq!(d.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
    }

    #[test]
    fn uniform_map_patch_saliency_is_position_invariant() {
        let map = SaliencyMap::from_plane(Plane::from_fn(20, 20, |_, _| 0.5)).unwrap();
        for r in [Rect::new(0, 0, 20, 20), Rect::new(3, 7, 5, 2), Rect::new(19, 19, 1, 1)] {
            assert!((patch_saliency(&map, &r).unwrap() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn patch_saliency_matches_naive_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let plane = Plane::from_fn(30, 25, |_, _| rng.random_range(0.0..=1.0));
        let map = SaliencyMap::from_plane(plane.clone()).unwrap();
        let full = patch_saliency(&map, &Rect::new(0, 0, 30, 25)).unwrap();
        let global = plane.data().iter().sum::<f64>() / plane.data().len() as f64;
        assert!((full - global).abs() < 1e-12);
        for _ in 0..100 {
            let x = rng.random_range(0..30);
            let y = rng.random_range(0..25);
            let r = Rect::new(x, y, rng.random_range(1..=30 - x), rng.random_range(1..=25 - y));
            let naive = plane.rect_values(&r).sum::<f64>() / r.area() as f64;
            let got = patch_saliency(&map, &r).unwrap();
            assert!((got - naive).abs() < 1e-12, "{r:?}");
            assert!((0.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn nested_rect_sums_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let map = SaliencyMap::from_plane(Plane::from_fn(16, 16, |_, _| rng.random_range(0.0..=1.0))).unwrap();
        let inner = map.rect_sum(&Rect::new(4, 4, 4, 4)).unwrap();
        let mid = map.rect_sum(&Rect::new(2, 3, 9, 8)).unwrap();
        let outer = map.rect_sum(&Rect::new(0, 0, 16, 16)).unwrap();
        assert!(inner <= mid && mid <= outer);
    }

    #[test]
    fn patch_saliency_out_of_bounds() {
        let map = SaliencyMap::from_plane(Plane::zeros(8, 8)).unwrap();
        assert!(matches!(
            patch_saliency(&map, &Rect::new(6, 0, 4, 4)),
            Err(ImagingError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn rejects_values_outside_unit_interval() {
        assert!(SaliencyMap::from_plane(Plane::from_fn(2, 2, |_, _| 1.5)).is_err());
    }
}
