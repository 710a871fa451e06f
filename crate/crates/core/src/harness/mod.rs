//! Manifests, metrics and the end-to-end scoring pipeline.

mod manifest;
mod metrics;
mod pipeline;

pub use manifest::{load_manifest, parse_manifest, Label, ManifestEntry, ManifestError, LOW_QUALITY_MAX_RATING};
pub use metrics::{predict_high, Metrics};
pub use pipeline::{
    detections_path, evaluate, load_examples, load_with_detections, manifest_example, prepare, score_file,
    score_image, select_patches, thread_cap, EvalReport, PipelineConfig, Prepared, THREADS_ENV,
};
