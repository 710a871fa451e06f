//! Layout-aware multi-patch photo aesthetics.
//!
//! The pipeline for one image: YCbCr planes and a saliency map
//! ([`imaging`], [`saliency`]), per-window pattern Gaussians ([`pattern`]),
//! adaptive choice of a few salient, diverse, spread-out windows
//! ([`selector`]), a layout vector from object detections ([`layout`]), and a
//! permutation-invariant network over the chosen patches fused with the
//! layout vector ([`net`]). [`harness`] ties these together for scoring,
//! evaluation and training from CSV manifests.

pub mod harness;
pub mod imaging;
pub mod layout;
pub mod net;
pub mod pattern;
pub mod saliency;
pub mod selector;
pub mod synth;

use thiserror::Error;

pub use harness::{EvalReport, Label, ManifestEntry, Metrics, PipelineConfig};
pub use imaging::{Image, ImagingError, PlaneSet, Rect};
pub use layout::{AttributeGraph, Detection, LayoutError, LayoutVector, LAYOUT_DIM};
pub use net::{ModelConfig, ModelParams, NetError, Stage, TrainConfig};
pub use pattern::{Gaussian2, PatternError, PatternModel};
pub use saliency::SaliencyMap;
pub use selector::{Candidate, PatchSet, SelectError, SelectionProblem, SelectorConfig, Solver};

/// Broad failure class, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or arguments.
    Usage,
    /// Unreadable, missing or malformed input files.
    Io,
    /// A computation could not produce a valid result.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Manifest(#[from] harness::ManifestError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn imaging_kind(e: &ImagingError) -> ErrorKind {
    match e {
        ImagingError::OutOfBounds { .. } => ErrorKind::Numeric,
        _ => ErrorKind::Io,
    }
}

fn pattern_kind(e: &PatternError) -> ErrorKind {
    match e {
        PatternError::Imaging(e) => imaging_kind(e),
        _ => ErrorKind::Numeric,
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Imaging(e) => imaging_kind(e),
            Error::Pattern(e) => pattern_kind(e),
            Error::Select(e) => match e {
                SelectError::WindowTooLarge { .. } | SelectError::ZeroStride | SelectError::InvalidConfig(_) => {
                    ErrorKind::Usage
                }
                SelectError::Pattern(e) => pattern_kind(e),
                SelectError::Imaging(e) => imaging_kind(e),
                _ => ErrorKind::Numeric,
            },
            Error::Layout(e) => match e {
                LayoutError::BadLength(_) => ErrorKind::Numeric,
                _ => ErrorKind::Io,
            },
            Error::Net(e) => match e {
                NetError::InvalidConfig(_) | NetError::MissingStage1Checkpoint => ErrorKind::Usage,
                NetError::ShapeMismatch(_) | NetError::EmptyBlob | NetError::NonFinite(_) => ErrorKind::Numeric,
                _ => ErrorKind::Io,
            },
            Error::Manifest(_) => ErrorKind::Io,
            Error::Config(_) => ErrorKind::Usage,
        }
    }
}
