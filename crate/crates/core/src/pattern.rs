//! Bivariate Gaussian pattern models and the Gaussian 2-Wasserstein distance.

use std::cmp::Ordering;

use thiserror::Error;

use crate::imaging::{ImagingError, PlaneSet, Rect};

/// Regularization added to every fitted covariance diagonal.
pub const COV_FLOOR: f64 = 1e-6;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("cannot fit a Gaussian to zero samples")]
    EmptySamples,
    #[error("covariance is not symmetric positive definite: {0:?}")]
    NonPsdInput([[f64; 2]; 2]),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

pub type Mat2 = [[f64; 2]; 2];

/// Symmetric 2×2 eigendecomposition: eigenvalues ascending, eigenvectors as
/// the columns of the returned rotation.
pub fn sym_eigen2(m: &Mat2) -> ([f64; 2], Mat2) {
    let (a, b, c) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    if b == 0.0 {
        return if a <= c {
            ([a, c], [[1.0, 0.0], [0.0, 1.0]])
        } else {
            ([c, a], [[0.0, 1.0], [1.0, 0.0]])
        };
    }
    // Jacobi rotation annihilating the off-diagonal term.
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (s, co) = theta.sin_cos();
    let l1 = a * co * co + 2.0 * b * s * co + c * s * s;
    let l2 = a * s * s - 2.0 * b * s * co + c * co * co;
    let v1 = [co, s];
    let v2 = [-s, co];
    if l1 <= l2 {
        ([l1, l2], [[v1[0], v2[0]], [v1[1], v2[1]]])
    } else {
        ([l2, l1], [[v2[0], v1[0]], [v2[1], v1[1]]])
    }
}

/// Principal square root of a symmetric PSD matrix via its eigendecomposition.
/// Eigenvalues slightly below zero from rounding are treated as zero.
pub fn sym_sqrt2(m: &Mat2) -> Mat2 {
    let ([l1, l2], v) = sym_eigen2(m);
    let (s1, s2) = (l1.max(0.0).sqrt(), l2.max(0.0).sqrt());
    let mut out = [[0.0; 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = s1 * v[i][0] * v[j][0] + s2 * v[i][1] * v[j][1];
        }
    }
    out[0][1] = 0.5 * (out[0][1] + out[1][0]);
    out[1][0] = out[0][1];
    out
}

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn trace(m: &Mat2) -> f64 {
    m[0][0] + m[1][1]
}

/// Bivariate normal with a validated SPD covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian2 {
    mean: [f64; 2],
    cov: Mat2,
}

impl Gaussian2 {
    pub fn new(mean: [f64; 2], cov: Mat2) -> Result<Self, PatternError> {
        let finite = mean.iter().chain(cov.iter().flatten()).all(|v| v.is_finite());
        let asym = (cov[0][1] - cov[1][0]).abs();
        let scale = cov[0][0].abs().max(cov[1][1].abs()).max(1.0);
        if !finite || asym > SYMMETRY_TOL * scale {
            return Err(PatternError::NonPsdInput(cov));
        }
        let ([lo, _], _) = sym_eigen2(&cov);
        if lo <= 0.0 {
            return Err(PatternError::NonPsdInput(cov));
        }
        Ok(Self { mean, cov })
    }

    pub fn isotropic(mean: [f64; 2], variance: f64) -> Result<Self, PatternError> {
        Self::new(mean, [[variance, 0.0], [0.0, variance]])
    }

    pub fn mean(&self) -> [f64; 2] {
        self.mean
    }

    pub fn cov(&self) -> Mat2 {
        self.cov
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        let a = self.mean.iter().chain(self.cov.iter().flatten());
        let b = other.mean.iter().chain(other.cov.iter().flatten());
        a.zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

/// Sample mean and population covariance plus [`COV_FLOOR`]·I.
pub fn fit_gaussian2(samples: &[[f64; 2]]) -> Result<Gaussian2, PatternError> {
    fit_gaussian2_iter(samples.iter().copied())
}

fn fit_gaussian2_iter<I>(samples: I) -> Result<Gaussian2, PatternError>
where
    I: Iterator<Item = [f64; 2]> + Clone,
{
    let mut n = 0usize;
    let mut sum = [0.0; 2];
    for [a, b] in samples.clone() {
        n += 1;
        sum[0] += a;
        sum[1] += b;
    }
    if n == 0 {
        return Err(PatternError::EmptySamples);
    }
    let nf = n as f64;
    let mean = [sum[0] / nf, sum[1] / nf];
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for [a, b] in samples {
        let (da, db) = (a - mean[0], b - mean[1]);
        sxx += da * da;
        sxy += da * db;
        syy += db * db;
    }
    let cov = [[sxx / nf + COV_FLOOR, sxy / nf], [sxy / nf, syy / nf + COV_FLOOR]];
    Gaussian2::new(mean, cov)
}

/// Closed-form 2-Wasserstein distance between two Gaussians:
/// `sqrt(‖μa−μb‖² + tr(Σa + Σb − 2(Σa^½ Σb Σa^½)^½))`.
///
/// Arguments are put in a canonical order first so the result is exactly
/// symmetric; identical covariances contribute an exact zero trace term.
pub fn gaussian_w2(a: &Gaussian2, b: &Gaussian2) -> f64 {
    let (a, b) = if a.canonical_cmp(b) == Ordering::Greater { (b, a) } else { (a, b) };
    let dm = (a.mean[0] - b.mean[0]).powi(2) + (a.mean[1] - b.mean[1]).powi(2);
    let tr = if a.cov == b.cov {
        0.0
    } else {
        let ra = sym_sqrt2(&a.cov);
        let cross = sym_sqrt2(&mat_mul(&mat_mul(&ra, &b.cov), &ra));
        // Rounding residue can push the trace term a hair below zero.
        (trace(&a.cov) + trace(&b.cov) - 2.0 * trace(&cross)).max(0.0)
    };
    (dm + tr).sqrt()
}

/// Edge (gx, gy) and chrominance (Cb, Cr) distributions of one patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatternModel {
    pub edge: Gaussian2,
    pub chroma: Gaussian2,
}

pub fn patch_pattern(planes: &PlaneSet, r: &Rect) -> Result<PatternModel, PatternError> {
    r.check_within(planes.width(), planes.height())?;
    let edge = fit_gaussian2_iter(planes.gx.rect_values(r).zip(planes.gy.rect_values(r)).map(|(a, b)| [a, b]))?;
    let chroma =
        fit_gaussian2_iter(planes.cb.rect_values(r).zip(planes.cr.rect_values(r)).map(|(a, b)| [a, b]))?;
    Ok(PatternModel { edge, chroma })
}

/// Unweighted sum of the edge and chroma W2 terms.
pub fn pattern_distance(m1: &PatternModel, m2: &PatternModel) -> f64 {
    gaussian_w2(&m1.edge, &m2.edge) + gaussian_w2(&m1.chroma, &m2.chroma)
}
