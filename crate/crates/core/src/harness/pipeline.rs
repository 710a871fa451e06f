//! Per-image pipeline shared by scoring, evaluation and training.

use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::ManifestEntry;
use super::metrics::{predict_high, Metrics};
use crate::imaging::{crop_resize, derive_planes, load_image, Image};
use crate::layout::{layout_vector, load_detections, Detection, LayoutVector};
use crate::net::{forward, Example, ModelParams};
use crate::saliency::{GlobalContrast, SaliencyEstimator, SaliencyMap};
use crate::selector::{generate_candidates, PatchSet, SelectionProblem, SelectorConfig, Solver};
use crate::Error;

/// Caps the evaluation thread pool when set to a positive integer.
pub const THREADS_ENV: &str = "LAMP_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub selector: SelectorConfig,
    /// `local_search` means greedy followed by swap search.
    pub solver: Solver,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { selector: SelectorConfig::default(), solver: Solver::LocalSearch }
    }
}

impl PipelineConfig {
    pub fn desk() -> Self {
        Self { selector: SelectorConfig::desk(), ..Self::default() }
    }
}

/// Everything the network needs for one image.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub saliency: SaliencyMap,
    pub selection: PatchSet,
    pub patches: Vec<Image>,
    pub layout: LayoutVector,
}

pub fn select_patches(img: &Image, cfg: &PipelineConfig) -> Result<(SaliencyMap, PatchSet), Error> {
    let planes = derive_planes(img);
    let map = GlobalContrast.estimate(img, &planes);
    let cands = generate_candidates(img.width(), img.height(), &cfg.selector, &map, &planes)?;
    let problem = SelectionProblem::new(cands, cfg.selector.clone(), img.dims())?;
    let set = problem.select(cfg.solver)?;
    Ok((map, set))
}

pub fn prepare(img: &Image, dets: &[Detection], cfg: &PipelineConfig, input_side: u32) -> Result<Prepared, Error> {
    let (saliency, selection) = select_patches(img, cfg)?;
    let patches = selection
        .members
        .iter()
        .map(|c| crop_resize(img, &c.rect, input_side))
        .collect::<Result<Vec<_>, _>>()?;
    let layout = layout_vector(dets, img.dims())?;
    Ok(Prepared { saliency, selection, patches, layout })
}

/// Probability that the image is high quality.
pub fn score_image(img: &Image, dets: &[Detection], params: &ModelParams, cfg: &PipelineConfig) -> Result<f64, Error> {
    let prep = prepare(img, dets, cfg, params.config.extractor.input_side)?;
    Ok(forward(&prep.patches, &prep.layout, params)?)
}

/// Sidecar detections for an image: `photo.dets.json` next to `photo.jpg`,
/// falling back to `photo.jpg.dets.json`.
pub fn detections_path(image: &Path) -> PathBuf {
    let by_stem = image.with_extension("dets.json");
    if by_stem.exists() {
        return by_stem;
    }
    let mut full = image.as_os_str().to_owned();
    full.push(".dets.json");
    let by_name = PathBuf::from(full);
    if by_name.exists() {
        by_name
    } else {
        by_stem
    }
}

pub fn load_with_detections(image: &Path) -> Result<(Image, Vec<Detection>), Error> {
    let img = load_image(image)?;
    let dets = load_detections(detections_path(image))?;
    Ok((img, dets))
}

pub fn score_file(image: &Path, params: &ModelParams, cfg: &PipelineConfig) -> Result<f64, Error> {
    let (img, dets) = load_with_detections(image)?;
    score_image(&img, &dets, params, cfg)
}

/// Builds a training example from a manifest entry.
pub fn manifest_example(entry: &ManifestEntry, cfg: &PipelineConfig, input_side: u32) -> Result<Example, Error> {
    let (img, dets) = load_with_detections(&entry.path)?;
    let prep = prepare(&img, &dets, cfg, input_side)?;
    Ok(Example::new(prep.patches, prep.layout, entry.label.is_high()))
}

pub fn load_examples(entries: &[ManifestEntry], cfg: &PipelineConfig, input_side: u32) -> Result<Vec<Example>, Error> {
    entries.par_iter().map(|e| manifest_example(e, cfg, input_side)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub metrics: Metrics,
    pub total: u64,
    pub skipped: u64,
}

/// Thread count from `LAMP_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Scores every manifest entry and summarizes. With `skip_errors` a failing
/// image is logged and counted instead of aborting the run.
pub fn evaluate(
    params: &ModelParams,
    entries: &[ManifestEntry],
    cfg: &PipelineConfig,
    skip_errors: bool,
) -> Result<EvalReport, Error> {
    let run = || {
        entries
            .par_iter()
            .map(|e| (e, score_file(&e.path, params, cfg)))
            .collect::<Vec<_>>()
    };
    let results = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };

    let mut pairs = Vec::with_capacity(results.len());
    let mut skipped = 0;
    for (entry, res) in results {
        match res {
            Ok(score) => pairs.push((predict_high(score), entry.label.is_high())),
            Err(e) if skip_errors => {
                warn!("skipping {}: {e}", entry.path.display());
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    let metrics = Metrics::from_pairs(pairs);
    Ok(EvalReport { total: metrics.total(), metrics, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("a.png");
        assert_eq!(detections_path(&img), dir.path().join("a.dets.json"));
        std::fs::write(dir.path().join("a.png.dets.json"), "[]").unwrap();
        assert_eq!(detections_path(&img), dir.path().join("a.png.dets.json"));
        std::fs::write(dir.path().join("a.dets.json"), "[]").unwrap();
        assert_eq!(detections_path(&img), dir.path().join("a.dets.json"));
    }

    #[test]
    fn config_json_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"selector": {"m": 3}}"#).unwrap();
        assert_eq!(cfg.selector.m, 3);
        assert_eq!(cfg.selector.window, 224);
        assert_eq!(cfg.solver, Solver::LocalSearch);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
