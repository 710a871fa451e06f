//! Versioned checkpoint container.
//!
//! ```text
//! LAMPCKPT
//! version 1
//! digest <sha256 of the config line's JSON>
//! config <json>
//! tensors <n>
//! <name> <d0>x<d1>x…            (n lines: weights, then velocity/<name>)
//! data
//! <little-endian f32 payload, tensors in header order>
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelParams, NetError, Weights};

pub const CHECKPOINT_MAGIC: &str = "LAMPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const VELOCITY_PREFIX: &str = "velocity/";

pub fn write_checkpoint(params: &ModelParams) -> Vec<u8> {
    let config = serde_json::to_string(&params.config).expect("config serializes");
    let tensors: Vec<(String, &super::Tensor)> = params
        .weights
        .named()
        .into_iter()
        .map(|(n, t)| (n.to_string(), t))
        .chain(params.velocity.named().into_iter().map(|(n, t)| (format!("{VELOCITY_PREFIX}{n}"), t)))
        .collect();
    let mut header = format!(
        "{CHECKPOINT_MAGIC}\nversion {CHECKPOINT_VERSION}\ndigest {}\nconfig {config}\ntensors {}\n",
        params.config.digest(),
        tensors.len()
    );
    for (name, t) in &tensors {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("{name} {}\n", dims.join("x")));
    }
    header.push_str("data\n");
    let mut out = header.into_bytes();
    for (_, t) in &tensors {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<(), NetError> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(params))
        .map_err(|source| NetError::Io { path: path.display().to_string(), source })
}

/// Parses a checkpoint. When `expected` is given the stored config must
/// have the same digest.
pub fn read_checkpoint(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<ModelParams, NetError> {
    let mut cursor = 0usize;
    let mut next_line = |what: &str| -> Result<&str, NetError> {
        let rest = &bytes[cursor.min(bytes.len())..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| NetError::Parse(format!("truncated before {what}")))?;
        cursor += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| NetError::Parse(format!("{what} is not UTF-8")))
    };
    let field = |line: &str, key: &str| -> Result<String, NetError> {
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| NetError::Parse(format!("expected '{key}' line, found {line:?}")))
    };

    if next_line("magic")? != CHECKPOINT_MAGIC {
        return Err(NetError::Parse("not a checkpoint (bad magic)".into()));
    }
    let version = field(next_line("version")?, "version")?;
    if version != CHECKPOINT_VERSION.to_string() {
        return Err(NetError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let digest = field(next_line("digest")?, "digest")?;
    let config_json = field(next_line("config")?, "config")?;
    let config: ModelConfig =
        serde_json::from_str(&config_json).map_err(|e| NetError::Parse(format!("config: {e}")))?;
    let actual = config.digest();
    if digest != actual {
        return Err(NetError::DigestMismatch { found: digest, expected: actual });
    }
    if let Some(exp) = expected {
        let want = exp.digest();
        if want != actual {
            return Err(NetError::DigestMismatch { found: actual, expected: want });
        }
    }
    config.validate()?;
    let count: usize = field(next_line("tensors")?, "tensors")?
        .parse()
        .map_err(|_| NetError::Parse("tensor count".into()))?;

    let mut weights = Weights::zeros(&config);
    let mut velocity = Weights::zeros(&config);
    let expected_names: Vec<String> = weights
        .named()
        .iter()
        .map(|(n, _)| n.to_string())
        .chain(velocity.named().iter().map(|(n, _)| format!("{VELOCITY_PREFIX}{n}")))
        .collect();
    if count != expected_names.len() {
        return Err(NetError::Parse(format!("{count} tensors, config implies {}", expected_names.len())));
    }
    let mut shapes = Vec::with_capacity(count);
    for want in &expected_names {
        let line = next_line("tensor entry")?;
        let (name, dims) = line.split_once(' ').ok_or_else(|| NetError::Parse(format!("tensor entry {line:?}")))?;
        if name != want {
            return Err(NetError::Parse(format!("tensor {name}, expected {want}")));
        }
        let shape = dims
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| NetError::Parse(format!("shape of {name}")))?;
        shapes.push(shape);
    }
    if next_line("data marker")? != "data" {
        return Err(NetError::Parse("missing data marker".into()));
    }

    let mut payload = &bytes[cursor..];
    let targets = weights.tensors_mut().into_iter().chain(velocity.tensors_mut());
    for ((target, shape), name) in targets.zip(&shapes).zip(&expected_names) {
        if &target.shape != shape {
            return Err(NetError::ShapeMismatch(format!("{name}: stored {shape:?}, config {:?}", target.shape)));
        }
        let need = target.len() * 4;
        if payload.len() < need {
            return Err(NetError::Parse(format!("payload truncated in {name}")));
        }
        for (v, chunk) in target.data.iter_mut().zip(payload[..need].chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
        }
        payload = &payload[need..];
    }
    if !payload.is_empty() {
        return Err(NetError::Parse(format!("{} trailing bytes", payload.len())));
    }
    Ok(ModelParams { config, weights, velocity })
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<ModelParams, NetError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| NetError::Io { path: path.display().to_string(), source })?;
    read_checkpoint(&bytes, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{ExtractorKind, ModelConfig};

    #[test]
    fn roundtrip_is_bit_exact() {
        let p = ModelParams::new(ModelConfig::default(), 21).unwrap();
        let bytes = write_checkpoint(&p);
        let q = read_checkpoint(&bytes, Some(&p.config)).unwrap();
        assert_eq!(p, q);
        assert_eq!(write_checkpoint(&q), bytes);
    }

    #[test]
    fn truncation_and_corruption() {
        let p = ModelParams::new(ModelConfig::desk(ExtractorKind::Handcrafted), 2).unwrap();
        let bytes = write_checkpoint(&p);
        for cut in [0, 5, 30, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(read_checkpoint(&bytes[..cut], None), Err(NetError::Parse(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(read_checkpoint(&extra, None), Err(NetError::Parse(_))));
        let bumped = String::from_utf8_lossy(&bytes[..40]).replacen("version 1", "version 2", 1);
        let mut v2 = bumped.into_bytes();
        v2.extend_from_slice(&bytes[40..]);
        assert!(matches!(read_checkpoint(&v2, None), Err(NetError::VersionMismatch { .. })));
    }

    #[test]
    fn config_mismatch_is_digest_error() {
        let p = ModelParams::new(ModelConfig::desk(ExtractorKind::Handcrafted), 2).unwrap();
        let bytes = write_checkpoint(&p);
        let other = ModelConfig::default();
        assert!(matches!(read_checkpoint(&bytes, Some(&other)), Err(NetError::DigestMismatch { .. })));
    }
}
