//! Import of raw image datasets: IDX files (optionally gzipped) and a
//! directory of per-class JSON files (`0.json`, `1.json`, ... each holding
//! `{"data": [[pixel, ...], ...]}`; empty rows are skipped). Pixels are
//! scaled to `[0, 1]`.

use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use labelnoise_core::data::{self, DatasetManifest, LabeledDataset, SplitSpec};
use serde::Deserialize;

use crate::dataset::save_dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Idx { images: PathBuf, labels: PathBuf },
    ClassJson { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvertOptions {
    pub name: String,
    /// Stratified hold-out written to `out/test`; the rest goes to `out/train`.
    pub test_examples: Option<usize>,
    /// Stratified cap on the training part.
    pub max_train_examples: Option<usize>,
    pub seed: u64,
    /// Store per-channel statistics of the training part in both manifests.
    pub standardize: bool,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Dimensions and `u8` payload of an IDX file.
pub fn read_idx(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = read_maybe_gz(path)?;
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::format(path, "not an IDX file"));
    }
    if bytes[2] != 0x08 {
        return Err(Error::format(
            path,
            format!("unsupported IDX element type {:#04x}", bytes[2]),
        ));
    }
    let ndim = usize::from(bytes[3]);
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::format(path, "truncated IDX header"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    if bytes.len() != header + n {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected: (header + n) as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok((dims, bytes[header..].to_vec()))
}

fn load_idx(images: &Path, labels: &Path, name: &str) -> Result<LabeledDataset> {
    let (idims, pixels) = read_idx(images)?;
    let (ldims, lbytes) = read_idx(labels)?;
    if idims.len() != 3 || ldims.len() != 1 || idims[0] != ldims[0] {
        return Err(Error::format(
            images,
            format!("image dims {idims:?} do not match label dims {ldims:?}"),
        ));
    }
    let labels: Vec<usize> = lbytes.iter().map(|&b| usize::from(b)).collect();
    let k = labels.iter().max().map_or(0, |m| m + 1).max(2);
    build(name, k, &idims[1..], pixels, labels)
}

#[derive(Deserialize)]
struct ClassFile {
    data: Vec<Vec<u8>>,
}

fn load_class_json(dir: &Path, name: &str) -> Result<LabeledDataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    let mut k = 0;
    let mut skipped = 0usize;
    loop {
        let path = dir.join(format!("{k}.json"));
        if !path.exists() {
            break;
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: ClassFile = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        for row in file.data {
            // The published class files contain a few empty rows.
            if row.is_empty() {
                skipped += 1;
                continue;
            }
            if *dim.get_or_insert(row.len()) != row.len() {
                return Err(Error::format(&path, "images of differing sizes"));
            }
            pixels.extend(row);
            labels.push(k);
        }
        k += 1;
    }
    if k < 2 {
        return Err(Error::format(dir, "expected class files 0.json, 1.json, ..."));
    }
    let d = dim.unwrap_or(0);
    let side = (d as f64).sqrt().round() as usize;
    let shape = if side * side == d { vec![side, side] } else { vec![d] };
    let mut ds = build(name, k, &shape, pixels, labels)?;
    ds.manifest
        .provenance
        .insert("skipped_empty_rows".into(), skipped.to_string());
    Ok(ds)
}

fn build(name: &str, k: usize, shape: &[usize], pixels: Vec<u8>, labels: Vec<usize>) -> Result<LabeledDataset> {
    let features = pixels.into_iter().map(|p| f32::from(p) / 255.0).collect();
    let manifest = DatasetManifest::new(name, k, shape, labels.len());
    Ok(LabeledDataset::new(manifest, features, Some(labels), None)?)
}

pub fn load_source(source: &Source, name: &str) -> Result<LabeledDataset> {
    match source {
        Source::Idx { images, labels } => load_idx(images, labels, name),
        Source::ClassJson { dir } => load_class_json(dir, name),
    }
}

fn take_stratified(ds: &LabeledDataset, count: usize, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let fraction = (count as f64 / ds.len() as f64).min(1.0);
    Ok(data::split(
        ds,
        &SplitSpec {
            train_fraction: fraction,
            seed,
            stratified: true,
        },
    )?)
}

/// Converts `source` into dataset directories under `out` and returns the
/// manifest paths written (training part first).
pub fn convert(source: &Source, out: &Path, opts: &ConvertOptions) -> Result<Vec<PathBuf>> {
    let mut all = load_source(source, &opts.name)?;
    all.manifest.provenance.insert("source".into(), format!("{source:?}"));
    let (mut train, test) = match opts.test_examples {
        Some(n) => {
            let (test, train) = take_stratified(&all, n, labelnoise_core::rng::derive(opts.seed, 1))?;
            (train, Some(test))
        }
        None => (all, None),
    };
    if let Some(n) = opts.max_train_examples.filter(|&n| n < train.len()) {
        train = take_stratified(&train, n, labelnoise_core::rng::derive(opts.seed, 2))?.0;
    }
    let stats = if opts.standardize {
        Some(data::channel_stats(&train.features, &train.manifest.feature_shape)?)
    } else {
        None
    };
    let mut written = Vec::new();
    let parts: Vec<(&str, LabeledDataset)> = match test {
        Some(t) => vec![("train", train), ("test", t)],
        None => vec![("", train)],
    };
    for (sub, mut ds) in parts {
        ds.manifest.standardization = stats.clone();
        if !sub.is_empty() {
            ds.manifest.name = format!("{}-{sub}", opts.name);
        }
        let dir = if sub.is_empty() {
            out.to_path_buf()
        } else {
            out.join(sub)
        };
        written.push(save_dataset(&ds, &dir)?);
    }
    Ok(written)
}

/// Writes an IDX `u8` file; used to build fixtures.
pub fn write_idx(path: &Path, dims: &[usize], payload: &[u8]) -> Result<()> {
    let mut bytes = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        bytes.extend_from_slice(&(d as u32).to_be_bytes());
    }
    bytes.extend_from_slice(payload);
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    std::io::Write::write_all(&mut f, &bytes).map_err(|e| Error::io(path, e))
}
