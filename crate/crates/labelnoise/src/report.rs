//! Per-epoch CSV records and JSON summaries.
//!
//! Training CSV, schema version 1, one row per epoch:
//!
//! | column | meaning |
//! |---|---|
//! | `schema_version` | always `1` |
//! | `epoch` | 0-based epoch index |
//! | `keep_ratio` | fraction of each batch kept as confident |
//! | `temperature` | merge temperature |
//! | `train_accuracy_0`, `train_accuracy_1` | accuracy of each twin against the observed labels |
//! | `test_accuracy_0`, `test_accuracy_1` | test accuracy of each twin; empty without a test set |
//! | `coteaching`, `transition_ce`, `policy_gradient`, `decorrelation` | epoch means of the loss terms |
//! | `total` | epoch mean of the weighted objective |
//! | `selection_loss_0`, `selection_loss_1` | epoch mean selection loss of each twin |
//!
//! Semi-supervised CSV, schema version 1: `schema_version`, `epoch`,
//! `train_accuracy`, `test_accuracy`, `clean`, `noisy`, `policy_gradient`,
//! `decorrelation`, `total`.
//!
//! Floats are written in shortest round-trip form, so re-reading the file
//! reproduces the in-memory values exactly.

use std::path::Path;

use labelnoise_core::semi::SemiEpochRecord;
use labelnoise_core::train::EpochRecord;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TrainRow {
    schema_version: u32,
    epoch: usize,
    keep_ratio: f64,
    temperature: f64,
    train_accuracy_0: f64,
    train_accuracy_1: f64,
    test_accuracy_0: Option<f64>,
    test_accuracy_1: Option<f64>,
    coteaching: f64,
    transition_ce: f64,
    policy_gradient: f64,
    decorrelation: f64,
    total: f64,
    selection_loss_0: f64,
    selection_loss_1: f64,
}

impl From<&EpochRecord> for TrainRow {
    fn from(r: &EpochRecord) -> Self {
        TrainRow {
            schema_version: CSV_SCHEMA_VERSION,
            epoch: r.epoch,
            keep_ratio: r.keep_ratio,
            temperature: r.temperature,
            train_accuracy_0: r.train_accuracy[0],
            train_accuracy_1: r.train_accuracy[1],
            test_accuracy_0: r.test_accuracy.map(|t| t[0]),
            test_accuracy_1: r.test_accuracy.map(|t| t[1]),
            coteaching: r.coteaching,
            transition_ce: r.transition_ce,
            policy_gradient: r.policy_gradient,
            decorrelation: r.decorrelation,
            total: r.total,
            selection_loss_0: r.selection_loss[0],
            selection_loss_1: r.selection_loss[1],
        }
    }
}

impl TrainRow {
    fn into_record(self, path: &Path) -> Result<EpochRecord> {
        check_version(self.schema_version, path)?;
        let test_accuracy = match (self.test_accuracy_0, self.test_accuracy_1) {
            (Some(a), Some(b)) => Some([a, b]),
            (None, None) => None,
            _ => return Err(Error::format(path, "test accuracy present for one twin only")),
        };
        Ok(EpochRecord {
            epoch: self.epoch,
            keep_ratio: self.keep_ratio,
            temperature: self.temperature,
            train_accuracy: [self.train_accuracy_0, self.train_accuracy_1],
            test_accuracy,
            coteaching: self.coteaching,
            transition_ce: self.transition_ce,
            policy_gradient: self.policy_gradient,
            decorrelation: self.decorrelation,
            total: self.total,
            selection_loss: [self.selection_loss_0, self.selection_loss_1],
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SemiRow {
    schema_version: u32,
    epoch: usize,
    train_accuracy: f64,
    test_accuracy: Option<f64>,
    clean: f64,
    noisy: f64,
    policy_gradient: f64,
    decorrelation: f64,
    total: f64,
}

fn check_version(v: u32, path: &Path) -> Result<()> {
    if v != CSV_SCHEMA_VERSION {
        return Err(Error::format(path, format!("unsupported CSV schema version {v}")));
    }
    Ok(())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().map(|row| row.map_err(csv_err(path))).collect()
}

pub fn write_epoch_csv(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    write_rows(path, epochs.iter().map(TrainRow::from))
}

pub fn read_epoch_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    read_rows::<TrainRow>(path)?
        .into_iter()
        .map(|r| r.into_record(path))
        .collect()
}

pub fn write_semi_csv(path: &Path, epochs: &[SemiEpochRecord]) -> Result<()> {
    write_rows(
        path,
        epochs.iter().map(|r| SemiRow {
            schema_version: CSV_SCHEMA_VERSION,
            epoch: r.epoch,
            train_accuracy: r.train_accuracy,
            test_accuracy: r.test_accuracy,
            clean: r.clean,
            noisy: r.noisy,
            policy_gradient: r.policy_gradient,
            decorrelation: r.decorrelation,
            total: r.total,
        }),
    )
}

pub fn read_semi_csv(path: &Path) -> Result<Vec<SemiEpochRecord>> {
    read_rows::<SemiRow>(path)?
        .into_iter()
        .map(|r| {
            check_version(r.schema_version, path)?;
            Ok(SemiEpochRecord {
                epoch: r.epoch,
                train_accuracy: r.train_accuracy,
                test_accuracy: r.test_accuracy,
                clean: r.clean,
                noisy: r.noisy,
                policy_gradient: r.policy_gradient,
                decorrelation: r.decorrelation,
                total: r.total,
            })
        })
        .collect()
}
