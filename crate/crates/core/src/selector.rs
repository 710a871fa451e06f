//! Candidate patch generation and subset selection.
//!
//! A selection maximizes
//!
//! ```text
//! F(S) = λs·Σ Sᵢ + λp·Σ_{i<j} D̂p(i, j) + λd·Σ_{i<j} D̂s(i, j)
//! ```
//!
//! over feasible m-subsets of a sliding-window candidate pool, where `D̂p` is
//! the pattern distance scaled by its maximum over the pool and `D̂s` is the
//! centre distance scaled by the image diagonal. A subset is feasible when
//! every pairwise overlap ratio is at most `tau_overlap`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{ImagingError, PlaneSet, Rect};
use crate::pattern::{patch_pattern, pattern_distance, PatternError, PatternModel};
use crate::saliency::{patch_saliency, SaliencyMap};

/// Upper bound on the number of subsets `select_exhaustive` will enumerate.
pub const MAX_COMBINATIONS: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("window {window} does not fit a {width}x{height} image")]
    WindowTooLarge { window: u32, width: u32, height: u32 },
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("invalid selector config: {0}")]
    InvalidConfig(String),
    #[error("objective of an empty set is undefined")]
    EmptySet,
    #[error("no feasible set of {m} patches under overlap limit {tau}")]
    NoFeasibleSet { m: usize, tau: f64 },
    #[error("C({n}, {m}) = {count} subsets exceeds the exhaustive limit")]
    TooManyCombinations { n: usize, m: usize, count: u128 },
    #[error("candidate index {0} out of range")]
    BadIndex(usize),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub m: usize,
    pub window: u32,
    pub stride: u32,
    pub lambda_s: f64,
    pub lambda_p: f64,
    pub lambda_d: f64,
    pub tau_overlap: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            m: 5,
            window: 224,
            stride: 112,
            lambda_s: 1.0,
            lambda_p: 1.0,
            lambda_d: 1.0,
            tau_overlap: 0.3,
        }
    }
}

impl SelectorConfig {
    /// Small-image configuration: 32 px windows, stride 16, three patches.
    pub fn desk() -> Self {
        Self { m: 3, window: 32, stride: 16, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SelectError> {
        if self.stride == 0 {
            return Err(SelectError::ZeroStride);
        }
        if self.m == 0 {
            return Err(SelectError::InvalidConfig("m must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(SelectError::InvalidConfig("window must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau_overlap) {
            return Err(SelectError::InvalidConfig(format!("tau_overlap {} outside [0,1]", self.tau_overlap)));
        }
        for (name, v) in [("lambda_s", self.lambda_s), ("lambda_p", self.lambda_p), ("lambda_d", self.lambda_d)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SelectError::InvalidConfig(format!("{name} must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub rect: Rect,
    pub center: [f64; 2],
    pub saliency: f64,
    pub pattern: PatternModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Exhaustive,
    Greedy,
    LocalSearch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    /// Indices into the candidate pool, ascending.
    pub indices: Vec<usize>,
    pub members: Vec<Candidate>,
    pub objective: f64,
    pub solver: Solver,
}

impl PatchSet {
    pub fn rects(&self) -> Vec<Rect> {
        self.members.iter().map(|c| c.rect).collect()
    }
}

/// Window offsets along one axis: every `stride` step plus a final flush
/// position when the grid does not end on the border.
pub fn window_positions(extent: u32, window: u32, stride: u32) -> Vec<u32> {
    let last = extent - window;
    let mut pos: Vec<u32> = (0..=last).step_by(stride as usize).collect();
    if *pos.last().expect("0 is always a position") != last {
        pos.push(last);
    }
    pos
}

pub fn generate_candidates(
    width: u32,
    height: u32,
    cfg: &SelectorConfig,
    map: &SaliencyMap,
    planes: &PlaneSet,
) -> Result<Vec<Candidate>, SelectError> {
    cfg.validate()?;
    if cfg.window > width.min(height) {
        return Err(SelectError::WindowTooLarge { window: cfg.window, width, height });
    }
    let xs = window_positions(width, cfg.window, cfg.stride);
    let ys = window_positions(height, cfg.window, cfg.stride);
    let rects: Vec<Rect> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| Rect::new(x, y, cfg.window, cfg.window)))
        .collect();
    rects
        .par_iter()
        .map(|r| {
            Ok(Candidate {
                rect: *r,
                center: r.centroid(),
                saliency: patch_saliency(map, r)?,
                pattern: patch_pattern(planes, r)?,
            })
        })
        .collect()
}

/// A candidate pool with its pairwise terms precomputed.
#[derive(Clone, Debug)]
pub struct SelectionProblem {
    candidates: Vec<Candidate>,
    cfg: SelectorConfig,
    /// Normalized pattern distance, row-major n×n.
    pattern: Vec<f64>,
    /// Normalized centre distance, row-major n×n.
    spatial: Vec<f64>,
    overlap: Vec<f64>,
}

impl SelectionProblem {
    /// `dims` is the image size used to normalize centre distances.
    pub fn new(candidates: Vec<Candidate>, cfg: SelectorConfig, dims: (u32, u32)) -> Result<Self, SelectError> {
        cfg.validate()?;
        let n = candidates.len();
        let diag = (dims.0 as f64).hypot(dims.1 as f64);
        let raw: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k / n, k % n);
                if i < j {
                    pattern_distance(&candidates[i].pattern, &candidates[j].pattern)
                } else {
                    0.0
                }
            })
            .collect();
        let max = raw.iter().cloned().fold(0.0, f64::max);
        let mut pattern = vec![0.0; n * n];
        let mut spatial = vec![0.0; n * n];
        let mut overlap = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (i.min(j), i.max(j));
                pattern[i * n + j] = if max > 0.0 { raw[a * n + b] / max } else { 0.0 };
                let (ca, cb) = (candidates[a].center, candidates[b].center);
                spatial[i * n + j] = (ca[0] - cb[0]).hypot(ca[1] - cb[1]) / diag;
                overlap[i * n + j] = candidates[a].rect.overlap_ratio(&candidates[b].rect);
            }
        }
        Ok(Self { candidates, cfg, pattern, spatial, overlap })
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn config(&self) -> &SelectorConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Normalized pattern distance D̂p between two candidates.
    pub fn pattern_term(&self, i: usize, j: usize) -> f64 {
        self.pattern[i * self.len() + j]
    }

    /// Normalized centre distance D̂s between two candidates.
    pub fn spatial_term(&self, i: usize, j: usize) -> f64 {
        self.spatial[i * self.len() + j]
    }

    pub fn overlap(&self, i: usize, j: usize) -> f64 {
        self.overlap[i * self.len() + j]
    }

    fn compatible(&self, i: usize, j: usize) -> bool {
        self.overlap(i, j) <= self.cfg.tau_overlap
    }

    fn pair_value(&self, i: usize, j: usize) -> f64 {
        self.cfg.lambda_p * self.pattern_term(i, j) + self.cfg.lambda_d * self.spatial_term(i, j)
    }

    pub fn is_feasible(&self, set: &[usize]) -> bool {
        set.iter()
            .enumerate()
            .all(|(a, &i)| set[a + 1..].iter().all(|&j| self.compatible(i, j)))
    }

    /// Objective F of a subset. The value depends only on the set, not on
    /// the order of `set`.
    pub fn objective(&self, set: &[usize]) -> Result<f64, SelectError> {
        if set.is_empty() {
            return Err(SelectError::EmptySet);
        }
        if let Some(&bad) = set.iter().find(|&&i| i >= self.len()) {
            return Err(SelectError::BadIndex(bad));
        }
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        Ok(self.objective_sorted(&sorted))
    }

    fn objective_sorted(&self, set: &[usize]) -> f64 {
        let sal: f64 = set.iter().map(|&i| self.candidates[i].saliency).sum();
        let mut pattern = 0.0;
        let mut spatial = 0.0;
        for (a, &i) in set.iter().enumerate() {
            for &j in &set[a + 1..] {
                pattern += self.pattern_term(i, j);
                spatial += self.spatial_term(i, j);
            }
        }
        self.cfg.lambda_s * sal + self.cfg.lambda_p * pattern + self.cfg.lambda_d * spatial
    }

    fn patch_set(&self, mut indices: Vec<usize>, solver: Solver) -> PatchSet {
        indices.sort_unstable();
        let objective = self.objective_sorted(&indices);
        let members = indices.iter().map(|&i| self.candidates[i].clone()).collect();
        PatchSet { indices, members, objective, solver }
    }

    fn no_feasible(&self) -> SelectError {
        SelectError::NoFeasibleSet { m: self.cfg.m, tau: self.cfg.tau_overlap }
    }

    /// Best feasible m-subset by enumeration in lexicographic index order; the
    /// first maximizer found wins ties.
    pub fn select_exhaustive(&self) -> Result<PatchSet, SelectError> {
        let (n, m) = (self.len(), self.cfg.m);
        let count = binomial(n, m);
        if count > MAX_COMBINATIONS {
            return Err(SelectError::TooManyCombinations { n, m, count });
        }
        if m > n {
            return Err(self.no_feasible());
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut current = Vec::with_capacity(m);
        self.enumerate(0, &mut current, &mut best);
        best.map(|(_, set)| self.patch_set(set, Solver::Exhaustive))
            .ok_or_else(|| self.no_feasible())
    }

    fn enumerate(&self, start: usize, current: &mut Vec<usize>, best: &mut Option<(f64, Vec<usize>)>) {
        let m = self.cfg.m;
        if current.len() == m {
            let value = self.objective_sorted(current);
            if best.as_ref().is_none_or(|(b, _)| value > *b) {
                *best = Some((value, current.clone()));
            }
            return;
        }
        let remaining = m - current.len();
        for i in start..=self.len() - remaining {
            if current.iter().all(|&j| self.compatible(i, j)) {
                current.push(i);
                self.enumerate(i + 1, current, best);
                current.pop();
            }
        }
    }

    /// Adds the feasible candidate with the largest marginal gain until m
    /// members are chosen; ties go to the lowest index.
    pub fn select_greedy(&self) -> Result<PatchSet, SelectError> {
        if self.is_empty() {
            return Err(self.no_feasible());
        }
        let mut chosen: Vec<usize> = Vec::with_capacity(self.cfg.m);
        while chosen.len() < self.cfg.m {
            let mut best: Option<(f64, usize)> = None;
            for c in 0..self.len() {
                if chosen.contains(&c) || !chosen.iter().all(|&j| self.compatible(c, j)) {
                    continue;
                }
                let gain = self.cfg.lambda_s * self.candidates[c].saliency
                    + chosen.iter().map(|&j| self.pair_value(c, j)).sum::<f64>();
                if best.is_none_or(|(g, _)| gain > g) {
                    best = Some((gain, c));
                }
            }
            match best {
                Some((_, c)) => chosen.push(c),
                None => return Err(self.no_feasible()),
            }
        }
        Ok(self.patch_set(chosen, Solver::Greedy))
    }

    /// Best-improvement single-swap hill climbing from a feasible seed.
    pub fn select_local_search(&self, seed: &PatchSet) -> Result<PatchSet, SelectError> {
        let mut current = seed.indices.clone();
        current.sort_unstable();
        if current.is_empty() {
            return Err(SelectError::EmptySet);
        }
        if let Some(&bad) = current.iter().find(|&&i| i >= self.len()) {
            return Err(SelectError::BadIndex(bad));
        }
        if !self.is_feasible(&current) {
            return Err(self.no_feasible());
        }
        let mut value = self.objective_sorted(&current);
        loop {
            let mut best: Option<(f64, Vec<usize>)> = None;
            for pos in 0..current.len() {
                for c in 0..self.len() {
                    if current.contains(&c) {
                        continue;
                    }
                    let mut trial = current.clone();
                    trial[pos] = c;
                    trial.sort_unstable();
                    if !self.is_feasible(&trial) {
                        continue;
                    }
                    let v = self.objective_sorted(&trial);
                    if v > best.as_ref().map_or(value, |(b, _)| *b) {
                        best = Some((v, trial));
                    }
                }
            }
            match best {
                Some((v, trial)) => {
                    value = v;
                    current = trial;
                }
                None => break,
            }
        }
        Ok(self.patch_set(current, Solver::LocalSearch))
    }

    /// Greedy construction refined by local search.
    pub fn select_default(&self) -> Result<PatchSet, SelectError> {
        let seed = self.select_greedy()?;
        self.select_local_search(&seed)
    }

    pub fn select(&self, solver: Solver) -> Result<PatchSet, SelectError> {
        match solver {
            Solver::Exhaustive => self.select_exhaustive(),
            Solver::Greedy => self.select_greedy(),
            Solver::LocalSearch => self.select_default(),
        }
    }
}

/// `C(n, k)`, saturating.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{derive_planes, Image};
    use crate::pattern::Gaussian2;
    use crate::saliency::compute_saliency;

    fn pool(img: &Image, cfg: &SelectorConfig) -> Result<Vec<Candidate>, SelectError> {
        let planes = derive_planes(img);
        let map = compute_saliency(img);
        generate_candidates(img.width(), img.height(), cfg, &map, &planes)
    }

    fn flat_pattern() -> PatternModel {
        let g = Gaussian2::isotropic([0.0, 0.0], 1.0).unwrap();
        PatternModel { edge: g, chroma: g }
    }

    fn cand(x: u32, y: u32, side: u32, saliency: f64) -> Candidate {
        let rect = Rect::new(x, y, side, side);
        Candidate { rect, center: rect.centroid(), saliency, pattern: flat_pattern() }
    }

    #[test]
    fn grid_counts() {
        let img = Image::filled(100, 100, [1, 2, 3]).unwrap();
        let cfg = SelectorConfig { window: 50, stride: 25, ..SelectorConfig::desk() };
        assert_eq!(pool(&img, &cfg).unwrap().len(), 9);
        let cfg = SelectorConfig { window: 200, stride: 25, ..SelectorConfig::desk() };
        assert!(matches!(pool(&img, &cfg), Err(SelectError::WindowTooLarge { .. })));
        let cfg = SelectorConfig { stride: 0, ..SelectorConfig::desk() };
        assert!(matches!(pool(&img, &cfg), Err(SelectError::ZeroStride)));
    }

    #[test]
    fn whole_image_window_gives_single_candidate() {
        let img = Image::filled(224, 224, [9, 9, 9]).unwrap();
        let cands = pool(&img, &SelectorConfig::default()).unwrap();
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].rect, Rect::new(0, 0, 224, 224));
    }

    #[test]
    fn flush_column_added_when_unaligned() {
        assert_eq!(window_positions(100, 30, 25), vec![0, 25, 50, 70]);
        assert_eq!(window_positions(100, 50, 25), vec![0, 25, 50]);
        assert_eq!(window_positions(30, 30, 7), vec![0]);
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(49, 3), 18424);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn singleton_and_term_isolation() {
        let cands = vec![cand(0, 0, 10, 0.2), cand(20, 0, 10, 0.7), cand(0, 20, 10, 0.4)];
        let cfg = SelectorConfig { m: 1, lambda_s: 2.0, ..SelectorConfig::desk() };
        let p = SelectionProblem::new(cands.clone(), cfg, (40, 40)).unwrap();
        assert_eq!(p.objective(&[1]).unwrap(), 2.0 * 0.7);
        assert!(matches!(p.objective(&[]), Err(SelectError::EmptySet)));
        let cfg = SelectorConfig { m: 3, lambda_p: 0.0, lambda_d: 0.0, ..SelectorConfig::desk() };
        let p = SelectionProblem::new(cands, cfg, (40, 40)).unwrap();
        assert_eq!(p.objective(&[0, 1, 2]).unwrap(), 0.2 + 0.7 + 0.4);
        assert_eq!(p.objective(&[2, 0, 1]).unwrap(), p.objective(&[0, 1, 2]).unwrap());
    }

    #[test]
    fn m1_picks_most_salient() {
        let cands = vec![cand(0, 0, 10, 0.2), cand(20, 0, 10, 0.9), cand(0, 20, 10, 0.4)];
        let cfg = SelectorConfig { m: 1, ..SelectorConfig::desk() };
        let p = SelectionProblem::new(cands, cfg, (40, 40)).unwrap();
        assert_eq!(p.select_exhaustive().unwrap().indices, vec![1]);
        assert_eq!(p.select_greedy().unwrap().indices, vec![1]);
    }

    #[test]
    fn all_overlapping_with_zero_tau_is_infeasible() {
        let cands = vec![cand(0, 0, 10, 0.2), cand(5, 0, 10, 0.9), cand(2, 3, 10, 0.4)];
        let cfg = SelectorConfig { m: 2, tau_overlap: 0.0, ..SelectorConfig::desk() };
        let p = SelectionProblem::new(cands, cfg, (40, 40)).unwrap();
        assert!(matches!(p.select_exhaustive(), Err(SelectError::NoFeasibleSet { .. })));
        assert!(matches!(p.select_greedy(), Err(SelectError::NoFeasibleSet { .. })));
    }

    #[test]
    fn exhaustive_guard() {
        let cands: Vec<Candidate> = (0..200).map(|i| cand(i % 20, i / 20, 1, 0.1)).collect();
        let cfg = SelectorConfig { m: 5, ..SelectorConfig::desk() };
        let p = SelectionProblem::new(cands, cfg, (40, 40)).unwrap();
        assert!(matches!(p.select_exhaustive(), Err(SelectError::TooManyCombinations { .. })));
    }

    #[test]
    fn local_search_keeps_optimum_and_never_worsens() {
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let cands: Vec<Candidate> =
            (0..16).map(|i| cand((i % 4) * 10, (i / 4) * 10, 10, next())).collect();
        let cfg = SelectorConfig::desk();
        let p = SelectionProblem::new(cands, cfg, (40, 40)).unwrap();
        let best = p.select_exhaustive().unwrap();
        let again = p.select_local_search(&best).unwrap();
        assert_eq!(again.indices, best.indices);
        let greedy = p.select_greedy().unwrap();
        let refined = p.select_local_search(&greedy).unwrap();
        assert!(refined.objective >= greedy.objective);
        assert!(best.objective >= refined.objective);
    }

    #[test]
    fn local_search_rejects_infeasible_seed() {
        let cands = vec![cand(0, 0, 10, 0.2), cand(5, 0, 10, 0.9), cand(25, 25, 10, 0.4)];
        let cfg = SelectorConfig { m: 2, ..SelectorConfig::desk() };
        let p = SelectionProblem::new(cands, cfg, (40, 40)).unwrap();
        let seed = PatchSet { indices: vec![0, 1], members: vec![], objective: 0.0, solver: Solver::Greedy };
        assert!(p.select_local_search(&seed).is_err());
    }
}
