//! Model files.
//!
//! Layout: an ASCII header of `key = value` lines, terminated by a line
//! reading `end`, followed by the raw payload.
//!
//! ```text
//! SLOWFAST-MODEL
//! format_version = 1
//! frame_len = 32
//! ...                               (every SlowFastConfig key)
//! array_count = 47
//! array.slow.fc_in.weight = 64x96 @0
//! ...                               (name = shape @byte_offset)
//! payload_bytes = 465540
//! payload_crc32 = 0c1f2e3d
//! end
//! <little-endian f32 payload>
//! ```
//!
//! The CRC-32 covers the payload only.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::config::SlowFastConfig;
use crate::kv::KvMap;
use crate::model::ModelWeights;

pub const MAGIC: &str = "SLOWFAST-MODEL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file: {0}")]
    BadMagic(String),
    #[error("unsupported model format version {0}")]
    UnknownVersion(String),
    #[error("checksum failure: {0}")]
    Checksum(String),
    #[error("malformed header: {0}")]
    Malformed(String),
    #[error("array shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config in model file: {0}")]
    InvalidConfig(String),
    #[error("cannot save weights: {0}")]
    NotFinite(String),
}

type Result<T> = std::result::Result<T, ModelFileError>;

/// Serializes to bytes. Entries are stored as `f32`.
pub fn encode_model(weights: &ModelWeights, cfg: &SlowFastConfig) -> Result<Vec<u8>> {
    cfg.validate()
        .map_err(|e| ModelFileError::InvalidConfig(e.to_string()))?;
    weights
        .check(cfg)
        .map_err(|e| ModelFileError::ShapeMismatch(e.to_string()))?;

    let mut header = KvMap::new();
    header.set("format_version", FORMAT_VERSION);
    header.merge(&cfg.to_kv());
    let arrays = weights.arrays();
    header.set("array_count", arrays.len());
    let mut payload = Vec::new();
    for a in &arrays {
        let shape: Vec<String> = a.shape.iter().map(usize::to_string).collect();
        header.set(
            format!("array.{}", a.name),
            format!("{} @{}", shape.join("x"), payload.len()),
        );
        for &v in a.data {
            let f = v as f32;
            if !f.is_finite() {
                return Err(ModelFileError::NotFinite(a.name.clone()));
            }
            payload.extend_from_slice(&f.to_le_bytes());
        }
    }
    header.set("payload_bytes", payload.len());
    header.set(
        "payload_crc32",
        format!("{:08x}", crc32fast::hash(&payload)),
    );

    let mut out = Vec::with_capacity(payload.len() + 4096);
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(header.render().as_bytes());
    out.extend_from_slice(b"end\n");
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<(ModelWeights, SlowFastConfig)> {
    let magic_line = format!("{MAGIC}\n");
    if !bytes.starts_with(magic_line.as_bytes()) {
        let shown = String::from_utf8_lossy(&bytes[..bytes.len().min(16)]).into_owned();
        return Err(ModelFileError::BadMagic(shown));
    }
    let rest = &bytes[magic_line.len()..];
    let marker = b"\nend\n";
    let header_end = rest
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| ModelFileError::Checksum("file truncated before end of header".into()))?;
    let header_text = std::str::from_utf8(&rest[..header_end + 1])
        .map_err(|_| ModelFileError::Malformed("header is not UTF-8".into()))?;
    let payload = &rest[header_end + marker.len()..];
    let header = KvMap::parse(header_text).map_err(|e| ModelFileError::Malformed(e.to_string()))?;

    let version = header
        .get("format_version")
        .ok_or_else(|| ModelFileError::Malformed("missing format_version".into()))?;
    if version != FORMAT_VERSION.to_string() {
        return Err(ModelFileError::UnknownVersion(version.to_string()));
    }

    let declared: usize = header
        .parse_required("payload_bytes")
        .map_err(|e| ModelFileError::Malformed(e.to_string()))?;
    let crc = header
        .require("payload_crc32")
        .map_err(|e| ModelFileError::Malformed(e.to_string()))?;
    if payload.len() != declared {
        return Err(ModelFileError::Checksum(format!(
            "payload has {} bytes, header declares {declared}",
            payload.len()
        )));
    }
    let actual = format!("{:08x}", crc32fast::hash(payload));
    if actual != crc {
        return Err(ModelFileError::Checksum(format!(
            "crc32 {actual} does not match header {crc}"
        )));
    }

    let cfg = SlowFastConfig::from_kv(&header)
        .map_err(|e| ModelFileError::InvalidConfig(e.to_string()))?;
    let mut weights = ModelWeights::zeros(&cfg);
    let count: usize = header
        .parse_required("array_count")
        .map_err(|e| ModelFileError::Malformed(e.to_string()))?;
    let listed = header.keys().filter(|k| k.starts_with("array.")).count();
    let expected = weights.arrays().len();
    if count != expected || listed != expected {
        return Err(ModelFileError::ShapeMismatch(format!(
            "file lists {listed} arrays (array_count = {count}), config requires {expected}"
        )));
    }

    for a in weights.arrays_mut() {
        let entry = header.get(&format!("array.{}", a.name)).ok_or_else(|| {
            ModelFileError::ShapeMismatch(format!("array {} missing from file", a.name))
        })?;
        let (shape, offset) = entry
            .split_once(" @")
            .ok_or_else(|| ModelFileError::Malformed(format!("array {}: {entry:?}", a.name)))?;
        let dims = shape
            .split('x')
            .map(str::parse::<usize>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| ModelFileError::Malformed(format!("array {}: shape {shape:?}", a.name)))?;
        if dims != a.shape {
            return Err(ModelFileError::ShapeMismatch(format!(
                "array {} is {:?} in file, config requires {:?}",
                a.name, dims, a.shape
            )));
        }
        let offset: usize = offset.parse().map_err(|_| {
            ModelFileError::Malformed(format!("array {}: offset {offset:?}", a.name))
        })?;
        let end = offset + 4 * a.data.len();
        let chunk = payload.get(offset..end).ok_or_else(|| {
            ModelFileError::ShapeMismatch(format!("array {} extends past payload", a.name))
        })?;
        for (v, b) in a.data.iter_mut().zip(chunk.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
    }
    Ok((weights, cfg))
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn save_model(
    weights: &ModelWeights,
    cfg: &SlowFastConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(weights, cfg)?;
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelWeights, SlowFastConfig)> {
    decode_model(&fs::read(path)?)
}
