//! On-disk dataset layout: a JSON manifest next to a little-endian float32
//! feature blob and little-endian int32 label files.

use std::fs;
use std::path::{Path, PathBuf};

use labelnoise_core::data::{self, DatasetManifest, LabeledDataset};
use labelnoise_core::noise::CorruptionRecord;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORD_FILE: &str = "corruption.json";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_bytes(path, text.as_bytes())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_sized(path: &Path, expected: u64) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

fn read_labels(path: &Path, n: usize, k: usize) -> Result<Vec<usize>> {
    let bytes = read_sized(path, n as u64 * 4)?;
    bytes
        .chunks_exact(4)
        .enumerate()
        .map(|(index, b)| {
            let label = i32::from_le_bytes(b.try_into().unwrap());
            usize::try_from(label)
                .ok()
                .filter(|&l| l < k)
                .ok_or(Error::LabelOutOfRange {
                    path: path.to_path_buf(),
                    index,
                    label: label.into(),
                    num_classes: k,
                })
        })
        .collect()
}

fn label_bytes(labels: &[usize]) -> Vec<u8> {
    labels.iter().flat_map(|&l| (l as i32).to_le_bytes()).collect()
}

/// Resolves a manifest-relative path.
fn resolve(dir: &Path, rel: &str) -> PathBuf {
    dir.join(rel)
}

/// Loads features and labels as stored; standardization is not applied.
pub fn load_dataset(manifest_path: &Path) -> Result<LabeledDataset> {
    let manifest: DatasetManifest = read_json(manifest_path)?;
    manifest.validate()?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let blob_path = resolve(dir, &manifest.feature_blob_path);
    let blob = read_sized(&blob_path, manifest.feature_blob_bytes() as u64)?;
    let features: Vec<f32> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(i) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(&blob_path, format!("feature value {i} is not finite")));
    }
    let (n, k) = (manifest.num_examples, manifest.num_classes);
    let clean = match &manifest.label_path {
        Some(p) => Some(read_labels(&resolve(dir, p), n, k)?),
        None => None,
    };
    let noisy = match &manifest.noisy_label_path {
        Some(p) => Some(read_labels(&resolve(dir, p), n, k)?),
        None => None,
    };
    Ok(LabeledDataset::new(manifest, features, clean, noisy)?)
}

/// Writes `dataset` under `dir` and returns the manifest path. Label file
/// entries in the manifest follow which label sequences are present.
pub fn save_dataset(dataset: &LabeledDataset, dir: &Path) -> Result<PathBuf> {
    dataset.validate()?;
    let mut manifest = dataset.manifest.clone();
    manifest.label_path = dataset
        .clean_labels
        .as_ref()
        .map(|_| manifest.label_path.clone().unwrap_or_else(|| "labels.i32".into()));
    manifest.noisy_label_path = dataset.noisy_labels.as_ref().map(|_| {
        manifest
            .noisy_label_path
            .clone()
            .unwrap_or_else(|| "noisy_labels.i32".into())
    });
    let blob: Vec<u8> = dataset.features.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(&resolve(dir, &manifest.feature_blob_path), &blob)?;
    if let (Some(p), Some(l)) = (&manifest.label_path, &dataset.clean_labels) {
        write_bytes(&resolve(dir, p), &label_bytes(l))?;
    }
    if let (Some(p), Some(l)) = (&manifest.noisy_label_path, &dataset.noisy_labels) {
        write_bytes(&resolve(dir, p), &label_bytes(l))?;
    }
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Copy of `dataset` with the manifest's channel standardization applied.
pub fn standardized(dataset: &LabeledDataset) -> Result<LabeledDataset> {
    let mut out = dataset.clone();
    if let Some(stats) = out.manifest.standardization.take() {
        data::standardize(&mut out.features, &out.manifest.feature_shape, &stats)?;
    }
    Ok(out)
}

pub fn save_record(record: &CorruptionRecord, path: &Path) -> Result<()> {
    write_json(path, record)
}

pub fn load_record(path: &Path) -> Result<CorruptionRecord> {
    read_json(path)
}
