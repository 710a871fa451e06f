//! Raster decoding and the derived real-valued planes (luma, chroma, gradients,
//! integral images) consumed by saliency, pattern fitting and the network.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use image::ImageFormat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(PathBuf),
    #[error("corrupt image data in {path}: {reason}")]
    CorruptData { path: PathBuf, reason: String },
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("rect {rect:?} outside {width}x{height} plane")]
    OutOfBounds { rect: Rect, width: u32, height: u32 },
    #[error("invalid image: {0}")]
    Invalid(String),
}

/// 8-bit RGB raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::Invalid(format!("zero dimension {width}x{height}")));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(ImagingError::Invalid(format!(
                "{} pixels for {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, ImagingError> {
        Self::new(width, height, vec![rgb; width as usize * height as usize])
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self, ImagingError> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = rgb;
    }

    pub fn full_rect(&self) -> Rect {
        Rect { x: 0, y: 0, w: self.width, h: self.height }
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        image::RgbImage::from_raw(self.width, self.height, raw).expect("dimensions checked at construction")
    }
}

/// Axis-aligned pixel rectangle; `(x, y)` is the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn centroid(&self) -> [f64; 2] {
        [
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        ]
    }

    /// True when the rect is non-empty and lies fully inside a `width`×`height` frame.
    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.w >= 1 && self.h >= 1 && self.right() <= width as u64 && self.bottom() <= height as u64
    }

    pub fn check_within(&self, width: u32, height: u32) -> Result<(), ImagingError> {
        if self.fits(width, height) {
            Ok(())
        } else {
            Err(ImagingError::OutOfBounds { rect: *self, width, height })
        }
    }

    pub fn intersection_area(&self, other: &Rect) -> u64 {
        let x0 = self.x.max(other.x) as u64;
        let y0 = self.y.max(other.y) as u64;
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 || y1 <= y0 {
            0
        } else {
            (x1 - x0) * (y1 - y0)
        }
    }

    /// Intersection area over the smaller rect's area; 1 under containment.
    pub fn overlap_ratio(&self, other: &Rect) -> f64 {
        let smaller = self.area().min(other.area());
        if smaller == 0 {
            return 0.0;
        }
        self.intersection_area(other) as f64 / smaller as f64
    }
}

/// Decodes a PNG or JPEG file into 8-bit RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImagingError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => ImagingError::NotFound(path.to_path_buf()),
        _ => ImagingError::Io { path: path.to_path_buf(), source: e },
    })?;
    decode_image(&bytes, path)
}

/// Decodes in-memory PNG/JPEG bytes; `origin` names the source in errors and
/// supplies the extension hint.
pub fn decode_image(bytes: &[u8], origin: &Path) -> Result<Image, ImagingError> {
    let by_extension = origin
        .extension()
        .and_then(|e| e.to_str())
        .and_then(ImageFormat::from_extension)
        .filter(is_supported);
    let format = match by_extension {
        Some(f) => f,
        None => match image::guess_format(bytes) {
            Ok(f) if is_supported(&f) => f,
            _ => return Err(ImagingError::UnsupportedFormat(origin.to_path_buf())),
        },
    };
    let decoded = image::load_from_memory_with_format(bytes, format).map_err(|e| {
        ImagingError::CorruptData { path: origin.to_path_buf(), reason: e.to_string() }
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let pixels = rgb.pixels().map(|p| p.0).collect();
    Image::new(w, h, pixels)
}

fn is_supported(f: &ImageFormat) -> bool {
    matches!(f, ImageFormat::Png | ImageFormat::Jpeg)
}

/// Real-valued single-channel plane, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize, "plane data length");
        Self { width, height, data }
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self::new(width, height, vec![0.0; width as usize * height as usize])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f64) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Values within `r`, row by row.
    pub fn rect_values<'a>(&'a self, r: &Rect) -> impl Iterator<Item = f64> + Clone + 'a {
        let w = self.width as usize;
        let (x0, x1) = (r.x as usize, r.x as usize + r.w as usize);
        (r.y as usize..r.y as usize + r.h as usize)
            .flat_map(move |y| self.data[y * w + x0..y * w + x1].iter().copied())
    }
}

/// Luma, chroma and luma-gradient planes of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneSet {
    pub y: Plane,
    pub cb: Plane,
    pub cr: Plane,
    pub gx: Plane,
    pub gy: Plane,
}

impl PlaneSet {
    pub fn width(&self) -> u32 {
        self.y.width()
    }

    pub fn height(&self) -> u32 {
        self.y.height()
    }
}

/// Full-range BT.601 YCbCr, unclamped.
#[inline]
pub fn rgb_to_ycbcr([r, g, b]: [u8; 3]) -> [f64; 3] {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    // Written as 128 + k·(B − G) + … so that R = G = B yields exactly 128.
    let cb = 128.0 - 0.168736 * (r - g) + 0.5 * (b - g);
    let cr = 128.0 + 0.5 * (r - g) - 0.081312 * (b - g);
    [y, cb, cr]
}

pub fn derive_planes(img: &Image) -> PlaneSet {
    let (w, h) = img.dims();
    let n = w as usize * h as usize;
    let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for &px in img.pixels() {
        let [py, pb, pr] = rgb_to_ycbcr(px);
        y.push(py);
        cb.push(pb);
        cr.push(pr);
    }
    let y = Plane::new(w, h, y);
    let (gx, gy) = central_gradients(&y);
    PlaneSet { y, cb: Plane::new(w, h, cb), cr: Plane::new(w, h, cr), gx, gy }
}

/// Central differences with replicated borders.
pub fn central_gradients(p: &Plane) -> (Plane, Plane) {
    let (w, h) = (p.width(), p.height());
    let gx = Plane::from_fn(w, h, |x, y| {
        let l = x.saturating_sub(1);
        let r = (x + 1).min(w - 1);
        (p.get(r, y) - p.get(l, y)) / 2.0
    });
    let gy = Plane::from_fn(w, h, |x, y| {
        let u = y.saturating_sub(1);
        let d = (y + 1).min(h - 1);
        (p.get(x, d) - p.get(x, u)) / 2.0
    });
    (gx, gy)
}

/// Summed-area table with a zero first row and column.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegralPlane {
    width: u32,
    height: u32,
    sums: Vec<f64>,
}

impl IntegralPlane {
    pub fn new(plane: &Plane) -> Self {
        let (w, h) = (plane.width() as usize, plane.height() as usize);
        let stride = w + 1;
        let mut sums = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += plane.data()[y * w + x];
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { width: plane.width(), height: plane.height(), sums }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn rect_sum(&self, r: &Rect) -> Result<f64, ImagingError> {
        r.check_within(self.width, self.height)?;
        let stride = self.width as usize + 1;
        let (x0, y0) = (r.x as usize, r.y as usize);
        let (x1, y1) = (x0 + r.w as usize, y0 + r.h as usize);
        let s = &self.sums;
        Ok(s[y1 * stride + x1] - s[y0 * stride + x1] - s[y1 * stride + x0] + s[y0 * stride + x0])
    }
}

pub fn integral(plane: &Plane) -> IntegralPlane {
    IntegralPlane::new(plane)
}

/// Bilinear resample of `r` to an `out_side`×`out_side` image. Samples are
/// taken at pixel centres and clamped to the crop, so a crop that already has
/// the target size is reproduced exactly.
pub fn crop_resize(img: &Image, r: &Rect, out_side: u32) -> Result<Image, ImagingError> {
    r.check_within(img.width(), img.height())?;
    if out_side == 0 {
        return Err(ImagingError::Invalid("out_side must be at least 1".into()));
    }
    let sx = r.w as f64 / out_side as f64;
    let sy = r.h as f64 / out_side as f64;
    let x_max = (r.w - 1) as f64;
    let y_max = (r.h - 1) as f64;
    Image::from_fn(out_side, out_side, |i, j| {
        let fx = ((i as f64 + 0.5) * sx - 0.5).clamp(0.0, x_max);
        let fy = ((j as f64 + 0.5) * sy - 0.5).clamp(0.0, y_max);
        let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(r.w - 1), (y0 + 1).min(r.h - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let p00 = img.get(r.x + x0, r.y + y0);
        let p10 = img.get(r.x + x1, r.y + y0);
        let p01 = img.get(r.x + x0, r.y + y1);
        let p11 = img.get(r.x + x1, r.y + y1);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = p00[c] as f64 * (1.0 - tx) + p10[c] as f64 * tx;
            let bot = p01[c] as f64 * (1.0 - tx) + p11[c] as f64 * tx;
            out[c] = (top * (1.0 - ty) + bot * ty).round().clamp(0.0, 255.0) as u8;
        }
        out
    })
}
