//! On-disk dataset directories.
//!
//! A dataset directory holds `manifest.json` plus one raw file per array:
//! `modality_{m}.f32` (little-endian `f32`, patient-major), `present_{m}.u8`
//! (one byte per patient) and `labels.u8` (`n_patients × n_labels` bytes).
//! Every data file is listed in the manifest with its byte length and CRC32.
//! The layout is described byte by byte in `FORMAT.md` at the repository root.

use std::fs;
use std::path::{Path, PathBuf};

use modalmend_core::{Dataset, ModalityKind};
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.u8";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("manifest missing: {0} does not exist")]
    ManifestMissing(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("unsupported format version {found} (this build reads version {expected})")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("truncated file {file}: expected {expected} bytes, found {found}")]
    Truncated { file: String, expected: u64, found: u64 },
    #[error("file {file} is {found} bytes, longer than the {expected} bytes recorded in the manifest")]
    Oversized { file: String, expected: u64, found: u64 },
    #[error("checksum mismatch in {file}: manifest records {expected:08x}, contents hash to {found:08x}")]
    Checksum { file: String, expected: u32, found: u32 },
    #[error("invalid byte {value} at offset {offset} of {file} (expected 0 or 1)")]
    InvalidByte { file: String, offset: usize, value: u8 },
    #[error("inconsistent dataset: {0}")]
    Invalid(String),
}

/// One raw data file referenced by the manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub file: String,
    pub bytes: u64,
    pub crc32: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityEntry {
    /// `vector`, `sequence` or `grid`.
    pub kind: String,
    /// `[dim]`, `[len, dim]` or `[channels, height, width]`.
    pub dims: Vec<usize>,
    /// Target probability that the modality is absent for a patient.
    pub missing_rate: f64,
    pub values: FileEntry,
    pub present: FileEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub n_patients: usize,
    pub n_modalities: usize,
    pub n_labels: usize,
    pub seed: u64,
    pub modalities: Vec<ModalityEntry>,
    pub labels: FileEntry,
}

pub fn kind_fields(kind: &ModalityKind) -> (&'static str, Vec<usize>) {
    let name = match kind {
        ModalityKind::Vector { .. } => "vector",
        ModalityKind::Sequence { .. } => "sequence",
        ModalityKind::Grid { .. } => "grid",
    };
    (name, kind.item_shape())
}

pub fn kind_from_fields(kind: &str, dims: &[usize]) -> Option<ModalityKind> {
    let k = match (kind, dims) {
        ("vector", &[dim]) => ModalityKind::Vector { dim },
        ("sequence", &[len, dim]) => ModalityKind::Sequence { len, dim },
        ("grid", &[channels, height, width]) => ModalityKind::Grid { channels, height, width },
        _ => return None,
    };
    k.validate().ok().map(|_| k)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn flags(bits: &[bool]) -> Vec<u8> {
    bits.iter().map(|&b| u8::from(b)).collect()
}

/// Builds the manifest and raw file contents without touching the disk.
pub fn encode(dataset: &Dataset) -> Result<(Manifest, Vec<(String, Vec<u8>)>), FormatError> {
    dataset.validate().map_err(|e| FormatError::Invalid(e.to_string()))?;
    let mut files = Vec::new();
    let mut entries = Vec::new();
    let entry = |name: String, bytes: &[u8]| FileEntry {
        file: name,
        bytes: bytes.len() as u64,
        crc32: crc32fast::hash(bytes),
    };
    for (m, kind) in dataset.kinds.iter().enumerate() {
        let values: Vec<u8> = dataset.values[m].iter().flat_map(|v| v.to_le_bytes()).collect();
        let present = flags(&dataset.present[m]);
        let (name, dims) = kind_fields(kind);
        entries.push(ModalityEntry {
            kind: name.to_string(),
            dims,
            missing_rate: dataset.missing_rates[m],
            values: entry(format!("modality_{m}.f32"), &values),
            present: entry(format!("present_{m}.u8"), &present),
        });
        files.push((format!("modality_{m}.f32"), values));
        files.push((format!("present_{m}.u8"), present));
    }
    let labels = entry(LABELS_FILE.to_string(), &dataset.labels);
    files.push((LABELS_FILE.to_string(), dataset.labels.clone()));
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        n_patients: dataset.n_patients(),
        n_modalities: dataset.n_modalities(),
        n_labels: dataset.n_labels,
        seed: dataset.seed,
        modalities: entries,
        labels,
    };
    Ok((manifest, files))
}

pub fn manifest_json(manifest: &Manifest) -> String {
    let mut s = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    s.push('\n');
    s
}

/// Writes `dataset` into `dir`, creating it if needed. The manifest is
/// written last.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<Manifest, FormatError> {
    let (manifest, files) = encode(dataset)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, bytes) in &files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest_json(&manifest)).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, FormatError> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(FormatError::ManifestMissing(path));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let malformed = |reason: String| FormatError::Manifest {
        path: path.clone(),
        reason,
    };
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| malformed("format_version missing or not an integer".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(FormatError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    serde_json::from_value(raw).map_err(|e| malformed(e.to_string()))
}

fn read_checked(dir: &Path, entry: &FileEntry, expected_len: u64) -> Result<Vec<u8>, FormatError> {
    if entry.file.contains(['/', '\\']) || entry.file == ".." {
        return Err(FormatError::Invalid(format!("file name {:?} must not contain a path", entry.file)));
    }
    if entry.bytes != expected_len {
        return Err(FormatError::Invalid(format!(
            "manifest lists {} bytes for {}, the declared shape needs {expected_len}",
            entry.bytes, entry.file
        )));
    }
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let found = bytes.len() as u64;
    if found < expected_len {
        return Err(FormatError::Truncated {
            file: entry.file.clone(),
            expected: expected_len,
            found,
        });
    }
    if found > expected_len {
        return Err(FormatError::Oversized {
            file: entry.file.clone(),
            expected: expected_len,
            found,
        });
    }
    let crc = crc32fast::hash(&bytes);
    if crc != entry.crc32 {
        return Err(FormatError::Checksum {
            file: entry.file.clone(),
            expected: entry.crc32,
            found: crc,
        });
    }
    Ok(bytes)
}

fn check_binary(file: &str, bytes: &[u8]) -> Result<(), FormatError> {
    match bytes.iter().position(|&b| b > 1) {
        Some(offset) => Err(FormatError::InvalidByte {
            file: file.to_string(),
            offset,
            value: bytes[offset],
        }),
        None => Ok(()),
    }
}

/// Reads and verifies a dataset directory.
pub fn read_dataset(dir: &Path) -> Result<Dataset, FormatError> {
    let manifest = read_manifest(dir)?;
    let n = manifest.n_patients;
    if manifest.modalities.len() != manifest.n_modalities {
        return Err(FormatError::Invalid(format!(
            "n_modalities is {} but {} modalities are listed",
            manifest.n_modalities,
            manifest.modalities.len()
        )));
    }
    let mut kinds = Vec::new();
    let mut values = Vec::new();
    let mut present = Vec::new();
    let mut rates = Vec::new();
    for (m, entry) in manifest.modalities.iter().enumerate() {
        let kind = kind_from_fields(&entry.kind, &entry.dims)
            .ok_or_else(|| FormatError::Invalid(format!("modality {m}: invalid kind {:?} with dims {:?}", entry.kind, entry.dims)))?;
        if !(0.0..1.0).contains(&entry.missing_rate) {
            return Err(FormatError::Invalid(format!("modality {m}: missing_rate {} outside [0, 1)", entry.missing_rate)));
        }
        let raw = read_checked(dir, &entry.values, (n * kind.row_len() * 4) as u64)?;
        let flags = read_checked(dir, &entry.present, n as u64)?;
        check_binary(&entry.present.file, &flags)?;
        kinds.push(kind);
        values.push(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect());
        present.push(flags.iter().map(|&b| b == 1).collect());
        rates.push(entry.missing_rate);
    }
    let labels = read_checked(dir, &manifest.labels, (n * manifest.n_labels) as u64)?;
    check_binary(&manifest.labels.file, &labels)?;
    let dataset = Dataset {
        kinds,
        n_labels: manifest.n_labels,
        values,
        present,
        labels,
        seed: manifest.seed,
        missing_rates: rates,
    };
    dataset.validate().map_err(|e| FormatError::Invalid(e.to_string()))?;
    Ok(dataset)
}
