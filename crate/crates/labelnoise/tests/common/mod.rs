#![allow(dead_code)]

use std::path::{Path, PathBuf};

use labelnoise::config::{ExperimentConfig, Mode};
use labelnoise::dataset::save_dataset;
use labelnoise_core::data::make_synthetic_blobs;
use labelnoise_core::models::{ClassifierConfig, PolicyConfig};
use labelnoise_core::noise::{NoiseKind, NoiseSpec};
use labelnoise_core::train::TrainConfig;

/// Writes a train and a test blob dataset under `dir`, returning their manifests.
pub fn blob_datasets(dir: &Path, k: usize, per_class: usize, separation: f64) -> (PathBuf, PathBuf) {
    let train = make_synthetic_blobs(k, per_class, 6, separation, 1).unwrap();
    let test = make_synthetic_blobs(k, per_class / 2, 6, separation, 2).unwrap();
    (
        save_dataset(&train, &dir.join("train")).unwrap(),
        save_dataset(&test, &dir.join("test")).unwrap(),
    )
}

pub fn tiny_train(epochs: usize, seed: u64) -> TrainConfig {
    let mut t = TrainConfig::new(0.2, seed);
    t.model.classifier = ClassifierConfig {
        conv_channels: vec![],
        residual_blocks: 0,
        hidden: 16,
    };
    t.model.policy = PolicyConfig {
        conv_channels: vec![],
        ..PolicyConfig::default()
    };
    t.epochs = epochs;
    t.batch_size = 32;
    t.transition_samples = 60;
    t.schedule.warmup_epochs = 1;
    t.schedule.ramp_epochs = 2;
    t
}

pub fn sym_noise(rate: f64) -> NoiseSpec {
    NoiseSpec {
        kind: NoiseKind::Symmetric,
        rate,
        seed: 5,
        class_map: None,
        idn_feature_dim: None,
    }
}

pub fn experiment(dir: &Path, mode: Mode, epochs: usize) -> ExperimentConfig {
    let (train, test) = blob_datasets(dir, 3, 60, 4.0);
    ExperimentConfig {
        mode,
        dataset: train,
        test_dataset: Some(test),
        out_dir: dir.join("out"),
        noise: Some(sym_noise(0.2)),
        perturbation_gamma: None,
        train: Some(tiny_train(epochs, 3)),
        semi_split: None,
        semi: None,
    }
}
