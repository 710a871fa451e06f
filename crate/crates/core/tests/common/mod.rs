//! Oracles written independently of the library code paths.

#![allow(dead_code)]

use lamp_core::imaging::{derive_planes, Image, Rect};
use lamp_core::pattern::{Gaussian2, PatternModel};
use lamp_core::saliency::{GlobalContrast, SaliencyEstimator};
use lamp_core::selector::{generate_candidates, Candidate, SelectionProblem, SelectorConfig};
use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use rand::Rng;

pub fn mat(m: [[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

pub fn sqrtm(m: Matrix2<f64>) -> Matrix2<f64> {
    let e = SymmetricEigen::new(m);
    let d = Matrix2::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    e.eigenvectors * d * e.eigenvectors.transpose()
}

/// W2 between Gaussians via a general symmetric eigensolver.
pub fn w2_oracle(a: &Gaussian2, b: &Gaussian2) -> f64 {
    let (ma, mb) = (Vector2::from(a.mean()), Vector2::from(b.mean()));
    let (ca, cb) = (mat(a.cov()), mat(b.cov()));
    let ra = sqrtm(ca);
    let cross = sqrtm(ra * cb * ra);
    let tr = (ca + cb - 2.0 * cross).trace().max(0.0);
    ((ma - mb).norm_squared() + tr).sqrt()
}

pub fn random_spd<R: Rng>(rng: &mut R) -> [[f64; 2]; 2] {
    let scale = 10f64.powf(rng.random_range(-1.0..2.0));
    let l = Matrix2::from_fn(|_, _| rng.random_range(-1.0..1.0) * scale);
    let m = l * l.transpose() + Matrix2::identity() * (0.05 * scale * scale);
    let m = (m + m.transpose()) / 2.0;
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

pub fn random_gaussian<R: Rng>(rng: &mut R) -> Gaussian2 {
    let mean = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
    Gaussian2::new(mean, random_spd(rng)).unwrap()
}

fn pattern_oracle(a: &PatternModel, b: &PatternModel) -> f64 {
    w2_oracle(&a.edge, &b.edge) + w2_oracle(&a.chroma, &b.chroma)
}

fn overlap_oracle(a: &Rect, b: &Rect) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w).saturating_sub(a.x.max(b.x)) as f64;
    let iy = (a.y + a.h).min(b.y + b.h).saturating_sub(a.y.max(b.y)) as f64;
    ix * iy / ((a.w * a.h).min(b.w * b.h)) as f64
}

/// Plain brute-force subset search over every m-combination, scored from
/// scratch. Returns the first best set in lexicographic order.
pub struct BruteForce {
    n: usize,
    sal: Vec<f64>,
    pat: Vec<f64>,
    spa: Vec<f64>,
    ok: Vec<bool>,
    cfg: SelectorConfig,
}

impl BruteForce {
    pub fn new(cands: &[Candidate], cfg: &SelectorConfig, dims: (u32, u32)) -> Self {
        let n = cands.len();
        let diag = ((dims.0 as f64).powi(2) + (dims.1 as f64).powi(2)).sqrt();
        let mut pat = vec![0.0; n * n];
        let mut spa = vec![0.0; n * n];
        let mut ok = vec![true; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    pat[i * n + j] = pattern_oracle(&cands[i].pattern, &cands[j].pattern);
                    let (ci, cj) = (cands[i].rect.centroid(), cands[j].rect.centroid());
                    spa[i * n + j] = ((ci[0] - cj[0]).powi(2) + (ci[1] - cj[1]).powi(2)).sqrt() / diag;
                    ok[i * n + j] = overlap_oracle(&cands[i].rect, &cands[j].rect) <= cfg.tau_overlap;
                }
            }
        }
        let max = pat.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            pat.iter_mut().for_each(|v| *v /= max);
        }
        Self { n, sal: cands.iter().map(|c| c.saliency).collect(), pat, spa, ok, cfg: cfg.clone() }
    }

    pub fn objective(&self, set: &[usize]) -> f64 {
        let mut f = self.cfg.lambda_s * set.iter().map(|&i| self.sal[i]).sum::<f64>();
        for a in 0..set.len() {
            for b in a + 1..set.len() {
                let (i, j) = (set[a], set[b]);
                f += self.cfg.lambda_p * self.pat[i * self.n + j] + self.cfg.lambda_d * self.spa[i * self.n + j];
            }
        }
        f
    }

    pub fn feasible(&self, set: &[usize]) -> bool {
        (0..set.len()).all(|a| (a + 1..set.len()).all(|b| self.ok[set[a] * self.n + set[b]]))
    }

    pub fn solve(&self) -> Option<(Vec<usize>, f64)> {
        let m = self.cfg.m;
        if m > self.n {
            return None;
        }
        let mut idx: Vec<usize> = (0..m).collect();
        let mut best: Option<(Vec<usize>, f64)> = None;
        loop {
            if self.feasible(&idx) {
                let f = self.objective(&idx);
                if best.as_ref().is_none_or(|(_, b)| f > *b) {
                    best = Some((idx.clone(), f));
                }
            }
            // Next combination in lexicographic order.
            let mut k = m;
            while k > 0 && idx[k - 1] == self.n - m + k - 1 {
                k -= 1;
            }
            if k == 0 {
                return best;
            }
            idx[k - 1] += 1;
            for t in k..m {
                idx[t] = idx[t - 1] + 1;
            }
        }
    }
}

pub fn problem_for(img: &Image, cfg: &SelectorConfig) -> SelectionProblem {
    let planes = derive_planes(img);
    let map = GlobalContrast.estimate(img, &planes);
    let cands = generate_candidates(img.width(), img.height(), cfg, &map, &planes).unwrap();
    SelectionProblem::new(cands, cfg.clone(), img.dims()).unwrap()
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            let j = if k % 2 == 0 { i } else { 0 };
            if i + 1 < k {
                a.swap(j, k - 1);
            }
        }
    }
    let mut out = Vec::new();
    heap(n, &mut (0..n).collect(), &mut out);
    out
}

pub fn random_patch<R: Rng>(rng: &mut R, side: u32) -> Image {
    let px: Vec<[u8; 3]> = (0..side * side).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    Image::new(side, side, px).unwrap()
}
