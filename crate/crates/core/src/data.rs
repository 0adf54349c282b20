//! Datasets held in memory, deterministic splits and the synthetic blob fixture.
//!
//! Reading and writing the on-disk format (JSON manifest, float32 feature blob,
//! int32 label files) lives in the companion crate; this module only defines
//! the manifest schema and validates the in-memory invariants.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    Float32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    #[default]
    RowMajor,
}

/// Per-channel statistics used to standardize features at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub name: String,
    pub num_classes: usize,
    pub feature_shape: Vec<usize>,
    pub num_examples: usize,
    pub feature_blob_path: String,
    /// Clean (or only available) labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy_label_path: Option<String>,
    #[serde(default)]
    pub dtype: Dtype,
    #[serde(default)]
    pub layout: Layout,
    /// Applied to the stored blob before training; absent means it is used as is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<ChannelStats>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn new(name: &str, num_classes: usize, feature_shape: &[usize], num_examples: usize) -> Self {
        DatasetManifest {
            format_version: FORMAT_VERSION,
            name: name.to_string(),
            num_classes,
            feature_shape: feature_shape.to_vec(),
            num_examples,
            feature_blob_path: "features.f32".to_string(),
            label_path: Some("labels.i32".to_string()),
            noisy_label_path: None,
            dtype: Dtype::Float32,
            layout: Layout::RowMajor,
            standardization: None,
            provenance: BTreeMap::new(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_shape.iter().product()
    }

    /// Expected byte size of the feature blob.
    pub fn feature_blob_bytes(&self) -> usize {
        self.feature_dim() * self.num_examples * 4
    }

    /// Feature shape viewed as `(channels, height, width)`: `[D]` is D channels
    /// of a 1x1 image, `[H, W]` a single channel.
    pub fn image_shape(&self) -> Result<(usize, usize, usize)> {
        image_shape(&self.feature_shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        if self.feature_shape.is_empty() || self.feature_shape.contains(&0) {
            return Err(Error::invalid("feature_shape must be nonempty with positive entries"));
        }
        self.image_shape()?;
        if let Some(stats) = &self.standardization {
            let (c, _, _) = self.image_shape()?;
            if stats.mean.len() != c || stats.std.len() != c {
                return Err(Error::invalid("standardization must have one mean and std per channel"));
            }
            if stats.std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                return Err(Error::invalid("standardization std must be positive"));
            }
        }
        Ok(())
    }
}

pub fn image_shape(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [d] => Ok((d, 1, 1)),
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::invalid(format!("unsupported feature_shape {shape:?}"))),
    }
}

/// Features plus clean and noisy label sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub manifest: DatasetManifest,
    /// Row-major `[N, feature_dim]`.
    pub features: Vec<f32>,
    pub clean_labels: Option<Vec<usize>>,
    pub noisy_labels: Option<Vec<usize>>,
}

impl LabeledDataset {
    pub fn new(
        manifest: DatasetManifest,
        features: Vec<f32>,
        clean_labels: Option<Vec<usize>>,
        noisy_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let ds = LabeledDataset {
            manifest,
            features,
            clean_labels,
            noisy_labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        self.manifest.validate()?;
        let n = self.manifest.num_examples;
        let d = self.manifest.feature_dim();
        if self.features.len() != n * d {
            return Err(Error::ShapeMismatch {
                expected: format!("{} feature values ({n} x {d})", n * d),
                actual: format!("{}", self.features.len()),
            });
        }
        if let Some(i) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("feature value {i} is not finite")));
        }
        for labels in [&self.clean_labels, &self.noisy_labels].into_iter().flatten() {
            check_labels(labels, n, self.manifest.num_classes)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.manifest.num_examples
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.manifest.feature_dim()
    }

    pub fn example(&self, i: usize) -> &[f32] {
        let d = self.feature_dim();
        &self.features[i * d..(i + 1) * d]
    }

    /// Labels the learner sees: noisy when present, else clean.
    pub fn observed_labels(&self) -> Option<&[usize]> {
        self.noisy_labels.as_deref().or(self.clean_labels.as_deref())
    }

    /// Features of `indices` as a `[B, C, H, W]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let (c, h, w) = self.manifest.image_shape().expect("validated manifest");
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend(self.example(i).iter().map(|v| f64::from(*v)));
        }
        Tensor::from_vec(&[indices.len(), c, h, w], data).unwrap()
    }

    /// Features as `f64` rows `[N, D]`.
    pub fn flat_features(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|i| self.example(i).iter().map(|v| f64::from(*v)).collect())
            .collect()
    }

    /// Examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let d = self.feature_dim();
        let mut features = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            features.extend_from_slice(self.example(i));
        }
        let pick = |l: &Option<Vec<usize>>| l.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        let mut manifest = self.manifest.clone();
        manifest.num_examples = indices.len();
        LabeledDataset {
            manifest,
            features,
            clean_labels: pick(&self.clean_labels),
            noisy_labels: pick(&self.noisy_labels),
        }
    }

    pub fn with_noisy_labels(mut self, noisy: Vec<usize>) -> Result<Self> {
        check_labels(&noisy, self.len(), self.num_classes())?;
        self.noisy_labels = Some(noisy);
        if self.manifest.noisy_label_path.is_none() {
            self.manifest.noisy_label_path = Some("noisy_labels.i32".to_string());
        }
        Ok(self)
    }
}

pub fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} labels"),
            actual: format!("{}", labels.len()),
        });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::LabelOutOfRange {
            index,
            label: label as i64,
            num_classes: k,
        });
    }
    Ok(())
}

/// Per-channel mean and (population) standard deviation.
pub fn channel_stats(features: &[f32], feature_shape: &[usize]) -> Result<ChannelStats> {
    let (c, h, w) = image_shape(feature_shape)?;
    let plane = h * w;
    let d = c * plane;
    if d == 0 || features.len() % d != 0 || features.is_empty() {
        return Err(Error::Empty("features"));
    }
    let n = features.len() / d;
    let mut mean = vec![0.0; c];
    let mut sq = vec![0.0; c];
    for row in features.chunks(d) {
        for (ch, chunk) in row.chunks(plane).enumerate() {
            for v in chunk {
                let v = f64::from(*v);
                mean[ch] += v;
                sq[ch] += v * v;
            }
        }
    }
    let count = (n * plane) as f64;
    let std = mean
        .iter_mut()
        .zip(&sq)
        .map(|(m, s)| {
            *m /= count;
            let var = (s / count - *m * *m).max(0.0);
            let sd = libm::sqrt(var);
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    Ok(ChannelStats { mean, std })
}

/// `(x - mean) / std` per channel, in place.
pub fn standardize(features: &mut [f32], feature_shape: &[usize], stats: &ChannelStats) -> Result<()> {
    let (c, h, w) = image_shape(feature_shape)?;
    let plane = h * w;
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(Error::invalid("channel statistics do not match feature shape"));
    }
    for row in features.chunks_mut(c * plane) {
        for (ch, chunk) in row.chunks_mut(plane).enumerate() {
            let (m, s) = (stats.mean[ch], stats.std[ch]);
            for v in chunk {
                *v = ((f64::from(*v) - m) / s) as f32;
            }
        }
    }
    Ok(())
}

/// `k` isotropic unit-variance Gaussian clusters, class `c` centred at
/// `separation * e_(c mod dim)`, examples ordered by class.
pub fn make_synthetic_blobs(
    k: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if k < 2 {
        return Err(Error::invalid("k must be at least 2"));
    }
    if n_per_class == 0 || dim == 0 {
        return Err(Error::invalid("n_per_class and dim must be positive"));
    }
    let mut rng = rng::seeded(seed);
    let n = k * n_per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..k {
        for _ in 0..n_per_class {
            for j in 0..dim {
                let centre = if j == c % dim { separation } else { 0.0 };
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push((centre + z) as f32);
            }
            labels.push(c);
        }
    }
    let mut manifest = DatasetManifest::new("blobs", k, &[dim], n);
    manifest
        .provenance
        .insert("generator".to_string(), "synthetic-blobs".to_string());
    manifest.provenance.insert(
        "params".to_string(),
        format!("k={k} n_per_class={n_per_class} dim={dim} separation={separation} seed={seed}"),
    );
    LabeledDataset::new(manifest, features, Some(labels), None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub stratified: bool,
}

/// Disjoint, exhaustive index sets `(first, second)`, each sorted ascending.
///
/// Stratification uses the clean labels when present, else the noisy ones.
pub fn split_indices(dataset: &LabeledDataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction {} outside (0, 1]",
            spec.train_fraction
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut rng = rng::seeded(spec.seed);
    let n = dataset.len();
    let mut first = Vec::new();
    let mut second = Vec::new();
    let groups: Vec<Vec<usize>> = match (
        spec.stratified,
        dataset.clean_labels.as_deref().or(dataset.noisy_labels.as_deref()),
    ) {
        (true, Some(labels)) => {
            let mut g = vec![Vec::new(); dataset.num_classes()];
            for (i, &l) in labels.iter().enumerate() {
                g[l].push(i);
            }
            g
        }
        (true, None) => return Err(Error::invalid("stratified split needs labels")),
        (false, _) => vec![(0..n).collect()],
    };
    for mut group in groups {
        group.shuffle(&mut rng);
        let take = libm::round(spec.train_fraction * group.len() as f64) as usize;
        first.extend_from_slice(&group[..take]);
        second.extend_from_slice(&group[take..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((first, second))
}

pub fn split(dataset: &LabeledDataset, spec: &SplitSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    let (a, b) = split_indices(dataset, spec)?;
    Ok((dataset.subset(&a), dataset.subset(&b)))
}
