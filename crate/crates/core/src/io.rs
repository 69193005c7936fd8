//! On-disk formats.
//!
//! * Dataset directory: `manifest.json` (geometry, labels, provenance)
//!   plus `features.bin`, a raw little-endian f64 blob laid out per sample
//!   as `[global d floats][local L*d floats row-major]`. Round-trips are
//!   bit-exact.
//! * Prompt bank: a single JSON file with row-major per-class matrices.
//! * Training history: JSON Lines, one epoch record per line.
//! * Matrices as delimited text: comma-separated values, one row per
//!   line, `#`-prefixed comment lines ignored. Numbers are emitted with
//!   17 significant digits so parsing reproduces the exact f64.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::PromptBank;
use crate::dataset::{EmbeddingDataset, SampleFeatures};
use crate::error::{Error, Result};
use crate::matrix::{Matrix, Vector};
use crate::train::TrainHistory;

/// Manifest format version this build reads and writes.
pub const FORMAT_VERSION: u32 = 1;

/// Default blob filename inside a dataset directory.
pub const FEATURE_BLOB: &str = "features.bin";

/// Default manifest filename inside a dataset directory.
pub const MANIFEST_FILE: &str = "manifest.json";

/// Dataset manifest: geometry, labels, and a pointer to the feature blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub num_samples: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub patches: usize,
    /// Path of the blob, relative to the manifest.
    pub feature_blob: String,
    pub labels: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_labels: Option<Vec<usize>>,
    pub provenance: String,
}

/// Writes 17-significant-digit decimal, enough to reproduce any f64.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes a dataset into `dir` as manifest + feature blob.
pub fn write_dataset(ds: &EmbeddingDataset, dir: &Path, provenance: &str) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir)?;
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        num_samples: ds.len(),
        num_classes: ds.num_classes,
        dim: ds.dim,
        patches: ds.patches,
        feature_blob: FEATURE_BLOB.to_string(),
        labels: ds.labels.clone(),
        truth_labels: ds.truth.clone(),
        provenance: provenance.to_string(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::ValidationError {
        message: format!("manifest serialization failed: {e}"),
    })?;
    fs::write(dir.join(MANIFEST_FILE), json)?;

    let mut bytes = Vec::with_capacity(ds.len() * (ds.dim + ds.patches * ds.dim) * 8);
    for s in &ds.samples {
        for v in s.global.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in s.local.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(FEATURE_BLOB), bytes)?;
    Ok(())
}

/// Reads a dataset directory back, enforcing every invariant on load.
pub fn read_dataset(dir: &Path) -> Result<EmbeddingDataset> {
    let manifest_text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&manifest_text).map_err(|e| Error::ParseError {
            message: format!("manifest: {e}"),
        })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.format_version,
            supported: FORMAT_VERSION,
        });
    }
    if manifest.labels.len() != manifest.num_samples {
        return Err(Error::ValidationError {
            message: format!(
                "manifest lists {} labels for {} samples",
                manifest.labels.len(),
                manifest.num_samples
            ),
        });
    }
    if let Some(&bad) = manifest
        .labels
        .iter()
        .find(|l| **l >= manifest.num_classes)
    {
        return Err(Error::ValidationError {
            message: format!(
                "label {bad} out of range [0, {})",
                manifest.num_classes
            ),
        });
    }
    let bytes = fs::read(dir.join(&manifest.feature_blob))?;
    let per_sample = manifest.dim + manifest.patches * manifest.dim;
    let expected = manifest.num_samples * per_sample * 8;
    if bytes.len() != expected {
        return Err(Error::BlobLengthMismatch {
            expected,
            got: bytes.len(),
        });
    }
    let mut samples = Vec::with_capacity(manifest.num_samples);
    let mut offset = 0usize;
    let read_f64s = |count: usize, offset: &mut usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&bytes[*offset..*offset + 8]);
            out.push(f64::from_le_bytes(buf));
            *offset += 8;
        }
        out
    };
    for _ in 0..manifest.num_samples {
        let global = Vector::from_vec(read_f64s(manifest.dim, &mut offset))?;
        let local = Matrix::from_vec(
            manifest.patches,
            manifest.dim,
            read_f64s(manifest.patches * manifest.dim, &mut offset),
        )?;
        samples.push(SampleFeatures::new(global, local)?);
    }
    EmbeddingDataset::new(
        manifest.num_classes,
        manifest.dim,
        manifest.patches,
        samples,
        manifest.labels,
        manifest.truth_labels,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct BankFile {
    format_version: u32,
    num_classes: usize,
    views: usize,
    dim: usize,
    log_tau: f64,
    /// Row-major `views x dim` data per class.
    clean: Vec<Vec<f64>>,
    noisy: Vec<Vec<f64>>,
}

/// Saves a prompt bank as a single JSON file.
pub fn write_bank(bank: &PromptBank, path: &Path) -> Result<()> {
    let file = BankFile {
        format_version: FORMAT_VERSION,
        num_classes: bank.num_classes,
        views: bank.views,
        dim: bank.dim,
        log_tau: bank.log_tau,
        clean: bank.clean.iter().map(|m| m.as_slice().to_vec()).collect(),
        noisy: bank.noisy.iter().map(|m| m.as_slice().to_vec()).collect(),
    };
    let json = serde_json::to_string(&file).map_err(|e| Error::ValidationError {
        message: format!("bank serialization failed: {e}"),
    })?;
    fs::write(path, json)?;
    Ok(())
}

/// Loads a prompt bank saved by [`write_bank`].
pub fn read_bank(path: &Path) -> Result<PromptBank> {
    let text = fs::read_to_string(path)?;
    let file: BankFile = serde_json::from_str(&text).map_err(|e| Error::ParseError {
        message: format!("bank: {e}"),
    })?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: file.format_version,
            supported: FORMAT_VERSION,
        });
    }
    if file.clean.len() != file.num_classes || file.noisy.len() != file.num_classes {
        return Err(Error::ValidationError {
            message: "bank class count disagrees with matrix count".to_string(),
        });
    }
    let to_matrices = |rows: Vec<Vec<f64>>| -> Result<Vec<Matrix>> {
        rows.into_iter()
            .map(|data| Matrix::from_vec(file.views, file.dim, data))
            .collect()
    };
    let bank =
        PromptBank::from_parts(to_matrices(file.clean)?, to_matrices(file.noisy)?, file.log_tau)?;
    bank.validate()?;
    Ok(bank)
}

/// Appends the history as JSON Lines, one epoch record per line.
pub fn write_history(history: &TrainHistory, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for record in &history.epochs {
        let line = serde_json::to_string(record).map_err(|e| Error::ValidationError {
            message: format!("history serialization failed: {e}"),
        })?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSON Lines history file.
pub fn read_history(path: &Path) -> Result<TrainHistory> {
    let text = fs::read_to_string(path)?;
    let mut history = TrainHistory::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| Error::ParseError {
            message: format!("history line {}: {e}", lineno + 1),
        })?;
        history.epochs.push(record);
    }
    Ok(history)
}

/// Renders a matrix as comma-separated text, one row per line, with
/// optional leading `#` comment lines.
pub fn matrix_to_text(m: &Matrix, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format_f64(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_text(m: &Matrix, path: &Path, comments: &[String]) -> Result<()> {
    fs::write(path, matrix_to_text(m, comments))?;
    Ok(())
}

/// Parses comma-separated matrix text, skipping comments and blank lines.
pub fn parse_matrix_text(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::ParseError {
                message: format!("line {}: bad number '{}'", lineno + 1, field.trim()),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::ParseError {
            message: "no matrix rows found".to_string(),
        });
    }
    Matrix::from_rows(&rows)
}

pub fn read_matrix_text(path: &Path) -> Result<Matrix> {
    parse_matrix_text(&fs::read_to_string(path)?)
}

/// Reads a vector file: a matrix file with a single row, or a single
/// column which gets flattened.
pub fn read_vector_text(path: &Path) -> Result<Vector> {
    let m = read_matrix_text(path)?;
    if m.rows() != 1 && m.cols() != 1 {
        return Err(Error::ParseError {
            message: format!("expected a single-row or single-column vector, got {:?}", m.shape()),
        });
    }
    Vector::from_vec(m.as_slice().to_vec())
}
