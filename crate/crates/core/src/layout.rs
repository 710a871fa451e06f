//! Attribute graphs over object detections and their fixed-width flattening.
//!
//! Up to [`MAX_OBJECTS`] detections become local nodes; the whole frame is
//! the global node, anchored at the image centre. Local edges carry
//! `(dist, θ, overlap)`, global edges `(dist, θ, area)`. Distances are divided
//! by the image diagonal and angles are measured anti-clockwise from the
//! horizontal with the y axis pointing up.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::Rect;

pub const MAX_OBJECTS: usize = 4;
pub const LOCAL_PAIRS: usize = MAX_OBJECTS * (MAX_OBJECTS - 1) / 2;
/// 6 local triples, 4 global triples, 4 presence flags.
pub const LAYOUT_DIM: usize = LOCAL_PAIRS * 3 + MAX_OBJECTS * 3 + MAX_OBJECTS;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("detection box {bbox:?} outside {width}x{height} image")]
    BoxOutside { bbox: Rect, width: u32, height: u32 },
    #[error("detection score {0} outside [0,1]")]
    BadScore(f64),
    #[error("reading detections {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing detections {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("layout vector must have {LAYOUT_DIM} entries, got {0}")]
    BadLength(usize),
}

/// One detected object: bounding box and confidence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: Rect, score: f64) -> Self {
        Self { x: bbox.x, y: bbox.y, w: bbox.w, h: bbox.h, score }
    }

    pub fn bbox(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<(), LayoutError> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(LayoutError::BadScore(self.score));
        }
        let bbox = self.bbox();
        if !bbox.fits(width, height) {
            return Err(LayoutError::BoxOutside { bbox, width, height });
        }
        Ok(())
    }

    /// Score descending, then x, y, w, h ascending.
    fn canonical_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.x.cmp(&other.x))
            .then(self.y.cmp(&other.y))
            .then(self.w.cmp(&other.w))
            .then(self.h.cmp(&other.h))
    }
}

/// Reads a `[{x, y, w, h, score}, …]` sidecar file.
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>, LayoutError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| LayoutError::Io { path: shown.clone(), source })?;
    serde_json::from_str(&text).map_err(|source| LayoutError::Parse { path: shown, source })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    /// Undirected object–object edge; θ folded into `[0, π)`.
    Local,
    /// Object → frame-centre edge; θ in `[0, 2π)`.
    Global,
}

/// Overlap of two boxes relative to the smaller one.
pub fn rect_overlap_ratio(a: &Rect, b: &Rect) -> f64 {
    a.overlap_ratio(b)
}

/// Normalized length and anti-clockwise angle of the edge `c1 → c2`, both
/// given in image coordinates (y down).
pub fn edge_attrs(c1: [f64; 2], c2: [f64; 2], kind: EdgeKind, dims: (u32, u32)) -> (f64, f64) {
    let diag = (dims.0 as f64).hypot(dims.1 as f64);
    let dx = c2[0] - c1[0];
    let dy = c1[1] - c2[1];
    let dist = (dx.hypot(dy) / diag).min(1.0);
    if dx == 0.0 && dy == 0.0 {
        return (dist, 0.0);
    }
    let period = match kind {
        EdgeKind::Local => PI,
        EdgeKind::Global => TAU,
    };
    let mut theta = dy.atan2(dx).rem_euclid(period);
    if theta >= period {
        theta = 0.0;
    }
    (dist, theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalNode {
    pub bbox: Rect,
    pub score: f64,
    pub centroid: [f64; 2],
    /// Fraction of the image area covered by the box.
    pub area: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalNode {
    pub centroid: [f64; 2],
    pub width: u32,
    pub height: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalEdge {
    pub i: usize,
    pub j: usize,
    pub dist: f64,
    pub theta: f64,
    pub overlap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalEdge {
    pub i: usize,
    pub dist: f64,
    pub theta: f64,
    pub area: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeGraph {
    /// Canonical order: score descending, ties by x then y.
    pub local_nodes: Vec<LocalNode>,
    pub global_node: GlobalNode,
    pub local_edges: Vec<LocalEdge>,
    pub global_edges: Vec<GlobalEdge>,
}

pub fn build_attribute_graph(dets: &[Detection], dims: (u32, u32)) -> Result<AttributeGraph, LayoutError> {
    let (w, h) = dims;
    for d in dets {
        d.validate(w, h)?;
    }
    let mut kept: Vec<Detection> = dets.to_vec();
    kept.sort_by(Detection::canonical_cmp);
    kept.truncate(MAX_OBJECTS);

    let frame_area = w as f64 * h as f64;
    let local_nodes: Vec<LocalNode> = kept
        .iter()
        .map(|d| {
            let bbox = d.bbox();
            LocalNode { bbox, score: d.score, centroid: bbox.centroid(), area: bbox.area() as f64 / frame_area }
        })
        .collect();
    let global_node = GlobalNode { centroid: [w as f64 / 2.0, h as f64 / 2.0], width: w, height: h };

    let mut local_edges = Vec::new();
    for i in 0..local_nodes.len() {
        for j in i + 1..local_nodes.len() {
            let (a, b) = (&local_nodes[i], &local_nodes[j]);
            let (dist, theta) = edge_attrs(a.centroid, b.centroid, EdgeKind::Local, dims);
            local_edges.push(LocalEdge { i, j, dist, theta, overlap: rect_overlap_ratio(&a.bbox, &b.bbox) });
        }
    }
    let global_edges = local_nodes
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let (dist, theta) = edge_attrs(n.centroid, global_node.centroid, EdgeKind::Global, dims);
            GlobalEdge { i, dist, theta, area: n.area }
        })
        .collect();
    Ok(AttributeGraph { local_nodes, global_node, local_edges, global_edges })
}

/// The flattened layout descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayoutVector(Vec<f64>);

impl LayoutVector {
    pub fn zeros() -> Self {
        Self(vec![0.0; LAYOUT_DIM])
    }

    pub fn from_vec(v: Vec<f64>) -> Result<Self, LayoutError> {
        if v.len() != LAYOUT_DIM {
            return Err(LayoutError::BadLength(v.len()));
        }
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn presence(&self) -> &[f64] {
        &self.0[LAYOUT_DIM - MAX_OBJECTS..]
    }
}

/// Index of local pair `(i, j)`, `i < j`, in the order (1,2),(1,3),(1,4),(2,3),(2,4),(3,4).
fn pair_slot(i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < MAX_OBJECTS);
    i * (2 * MAX_OBJECTS - i - 1) / 2 + (j - i - 1)
}

pub fn vectorize_graph(g: &AttributeGraph) -> LayoutVector {
    let mut v = vec![0.0; LAYOUT_DIM];
    for e in &g.local_edges {
        let at = 3 * pair_slot(e.i, e.j);
        v[at..at + 3].copy_from_slice(&[e.dist, e.theta, e.overlap]);
    }
    let global_base = 3 * LOCAL_PAIRS;
    for e in &g.global_edges {
        let at = global_base + 3 * e.i;
        v[at..at + 3].copy_from_slice(&[e.dist, e.theta, e.area]);
    }
    let flags = global_base + 3 * MAX_OBJECTS;
    for i in 0..g.local_nodes.len() {
        v[flags + i] = 1.0;
    }
    LayoutVector(v)
}

/// Detections straight to the layout vector.
pub fn layout_vector(dets: &[Detection], dims: (u32, u32)) -> Result<LayoutVector, LayoutError> {
    Ok(vectorize_graph(&build_attribute_graph(dets, dims)?))
}
