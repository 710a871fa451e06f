//! CSV manifests: `path,mean_rating[,label]`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ratings at or below this value are low quality.
pub const LOW_QUALITY_MAX_RATING: f64 = 5.0;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest not found: {0}")]
    FileNotFound(PathBuf),
    #[error("reading manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("manifest line {line}: neither mean_rating nor label given")]
    MissingLabelInfo { line: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Low,
    High,
}

impl Label {
    pub fn from_rating(mean_rating: f64) -> Self {
        if mean_rating <= LOW_QUALITY_MAX_RATING {
            Label::Low
        } else {
            Label::High
        }
    }

    pub fn is_high(self) -> bool {
        self == Label::High
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" | "0" => Ok(Label::Low),
            "high" | "1" => Ok(Label::High),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Low => "low",
            Label::High => "high",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub mean_rating: Option<f64>,
    pub label: Label,
}

/// Reads a manifest. Relative image paths resolve against the manifest's
/// directory. An explicit label wins over the rating-derived one.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, ManifestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ManifestError::FileNotFound(path.to_path_buf()),
        _ => ManifestError::Io { path: path.to_path_buf(), source: e },
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, base)
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>, ManifestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| ManifestError::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    let has_label = match names.as_slice() {
        ["path", "mean_rating"] => false,
        ["path", "mean_rating", "label"] => true,
        _ => {
            return Err(ManifestError::Parse {
                line: 1,
                msg: format!("header must be path,mean_rating[,label], found {}", names.join(",")),
            })
        }
    };

    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| ManifestError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |msg: String| ManifestError::Parse { line, msg };
        if record.len() > names.len() || record.len() < 2 {
            return Err(parse_err(format!("{} fields, header has {}", record.len(), names.len())));
        }
        let raw_path = &record[0];
        if raw_path.is_empty() {
            return Err(parse_err("empty path".into()));
        }
        if raw_path.contains(',') {
            return Err(parse_err(format!("path {raw_path:?} contains a comma")));
        }
        let mean_rating = match &record[1] {
            "" => None,
            s => {
                let v: f64 = s.parse().map_err(|_| parse_err(format!("bad mean_rating {s:?}")))?;
                if !(1.0..=10.0).contains(&v) {
                    return Err(parse_err(format!("mean_rating {v} outside [1,10]")));
                }
                Some(v)
            }
        };
        let explicit = match record.get(2).filter(|_| has_label) {
            Some("") | None => None,
            Some(s) => Some(s.parse::<Label>().map_err(parse_err)?),
        };
        let label = explicit
            .or(mean_rating.map(Label::from_rating))
            .ok_or(ManifestError::MissingLabelInfo { line })?;
        entries.push(ManifestEntry { path: base.join(raw_path), mean_rating, label });
    }
    Ok(entries)
}
