//! Label corruption (symmetric, asymmetric, instance-dependent) and instance
//! perturbation, with ground-truth records kept for evaluation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

/// Standard deviation of the per-instance flip-rate distribution for IDN.
pub const IDN_RATE_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    #[serde(rename = "SYM", alias = "sym")]
    Symmetric,
    #[serde(rename = "ASYM", alias = "asym")]
    Asymmetric,
    #[serde(rename = "IDN", alias = "idn")]
    InstanceDependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
    /// `class_map[c]` is the flip target of class `c` (ASYM only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_map: Option<Vec<usize>>,
    /// Expected flattened feature dimension (IDN only); checked against the data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idn_feature_dim: Option<usize>,
}

impl NoiseSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        check_rate(self.rate)?;
        match self.kind {
            NoiseKind::Asymmetric => {
                let map = self
                    .class_map
                    .as_ref()
                    .ok_or_else(|| Error::invalid("ASYM noise requires class_map"))?;
                check_class_map(map, num_classes)?;
                if map.iter().enumerate().all(|(c, &t)| c == t) {
                    return Err(Error::invalid("ASYM class_map must move at least one class"));
                }
            }
            _ if self.class_map.is_some() => {
                return Err(Error::invalid("class_map is only valid for ASYM noise"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Corrupts the clean labels of `dataset`.
    pub fn apply(&self, dataset: &LabeledDataset) -> Result<(Vec<usize>, CorruptionRecord)> {
        let k = dataset.num_classes();
        self.validate(k)?;
        let labels = dataset
            .clean_labels
            .as_deref()
            .ok_or_else(|| Error::invalid("corruption needs clean labels"))?;
        match self.kind {
            NoiseKind::Symmetric => corrupt_symmetric(labels, k, self.rate, self.seed),
            NoiseKind::Asymmetric => corrupt_asymmetric(
                labels,
                self.class_map.as_deref().unwrap_or_default(),
                self.rate,
                self.seed,
            ),
            NoiseKind::InstanceDependent => {
                let d = dataset.feature_dim();
                if let Some(expected) = self.idn_feature_dim {
                    if expected != d {
                        return Err(Error::ShapeMismatch {
                            expected: format!("feature dimension {expected}"),
                            actual: format!("{d}"),
                        });
                    }
                }
                corrupt_instance_dependent(&dataset.features, d, labels, k, self.rate, self.seed)
            }
        }
    }
}

/// `c -> c + 1 mod k`.
pub fn cyclic_class_map(k: usize) -> Vec<usize> {
    (0..k).map(|c| (c + 1) % k).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TransitionRecord {
    /// One `k x k` matrix for every instance.
    Shared(Vec<Vec<f64>>),
    /// Per instance, the row of its clean class: `rows[n][j] = P(noisy = j | clean = y_n, x_n)`.
    PerInstanceRow(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
    pub num_classes: usize,
    pub flip_mask: Vec<bool>,
    pub transition: TransitionRecord,
    pub realized_rate: f64,
}

impl CorruptionRecord {
    fn new(
        kind: NoiseKind,
        rate: f64,
        seed: u64,
        k: usize,
        clean: &[usize],
        noisy: &[usize],
        transition: TransitionRecord,
    ) -> Self {
        let flip_mask: Vec<bool> = clean.iter().zip(noisy).map(|(a, b)| a != b).collect();
        let realized_rate = if flip_mask.is_empty() {
            0.0
        } else {
            flip_mask.iter().filter(|f| **f).count() as f64 / flip_mask.len() as f64
        };
        CorruptionRecord {
            kind,
            rate,
            seed,
            num_classes: k,
            flip_mask,
            transition,
            realized_rate,
        }
    }

    /// Transition row of instance `n` given its clean label.
    pub fn row(&self, n: usize, clean_label: usize) -> &[f64] {
        match &self.transition {
            TransitionRecord::Shared(m) => &m[clean_label],
            TransitionRecord::PerInstanceRow(rows) => &rows[n],
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("noise rate {rate} outside [0, 1)")));
    }
    Ok(())
}

fn check_class_map(map: &[usize], k: usize) -> Result<()> {
    if map.len() != k {
        return Err(Error::invalid(format!(
            "class_map covers {} classes, expected {k}",
            map.len()
        )));
    }
    if let Some(&t) = map.iter().find(|&&t| t >= k) {
        return Err(Error::invalid(format!("class_map target {t} outside [0, {k})")));
    }
    Ok(())
}

fn check_inputs(labels: &[usize], k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::invalid("need at least two classes"));
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

/// Matrix with `1 - rate` on the diagonal and `rate / (k - 1)` elsewhere.
pub fn symmetric_matrix(k: usize, rate: f64) -> Vec<Vec<f64>> {
    let off = rate / (k - 1) as f64;
    (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 - rate } else { off }).collect())
        .collect()
}

pub fn corrupt_symmetric(labels: &[usize], k: usize, rate: f64, seed: u64) -> Result<(Vec<usize>, CorruptionRecord)> {
    check_rate(rate)?;
    check_inputs(labels, k)?;
    let mut rng = rng::seeded(seed);
    let noisy: Vec<usize> = labels
        .iter()
        .map(|&y| {
            if rng.random::<f64>() < rate {
                let j = rng.random_range(0..k - 1);
                if j >= y {
                    j + 1
                } else {
                    j
                }
            } else {
                y
            }
        })
        .collect();
    let record = CorruptionRecord::new(
        NoiseKind::Symmetric,
        rate,
        seed,
        k,
        labels,
        &noisy,
        TransitionRecord::Shared(symmetric_matrix(k, rate)),
    );
    Ok((noisy, record))
}

pub fn corrupt_asymmetric(
    labels: &[usize],
    class_map: &[usize],
    rate: f64,
    seed: u64,
) -> Result<(Vec<usize>, CorruptionRecord)> {
    check_rate(rate)?;
    let k = class_map.len();
    check_inputs(labels, k).map_err(|e| match e {
        Error::LabelOutOfRange { label, .. } => Error::invalid(format!("class_map has no entry for class {label}")),
        other => other,
    })?;
    check_class_map(class_map, k)?;
    let mut rng = rng::seeded(seed);
    let noisy: Vec<usize> = labels
        .iter()
        .map(|&y| if rng.random::<f64>() < rate { class_map[y] } else { y })
        .collect();
    let t: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut row = vec![0.0; k];
            row[i] += 1.0 - rate;
            row[class_map[i]] += rate;
            row
        })
        .collect();
    let record = CorruptionRecord::new(
        NoiseKind::Asymmetric,
        rate,
        seed,
        k,
        labels,
        &noisy,
        TransitionRecord::Shared(t),
    );
    Ok((noisy, record))
}

/// Instance-dependent corruption.
///
/// Each instance gets a flip probability `q_n` from a Gaussian with mean `rate`
/// and std [`IDN_RATE_STD`] truncated to `[0, 1]`, drawn from a stream keyed by
/// the instance's feature bits and label, so identical instances get identical
/// rows. The off-diagonal mass `q_n` is spread over the other classes by a
/// softmax of the features projected through a seeded per-class Gaussian matrix.
pub fn corrupt_instance_dependent(
    features: &[f32],
    feature_dim: usize,
    labels: &[usize],
    k: usize,
    rate: f64,
    seed: u64,
) -> Result<(Vec<usize>, CorruptionRecord)> {
    if feature_dim == 0 {
        return Err(Error::invalid("feature dimension must be positive"));
    }
    check_rate(rate)?;
    check_inputs(labels, k)?;
    if features.len() != labels.len() * feature_dim {
        return Err(Error::ShapeMismatch {
            expected: format!("{} x {feature_dim} features", labels.len()),
            actual: format!("{} values", features.len()),
        });
    }
    let mut proj_rng = rng::seeded(rng::derive(seed, 1));
    // projections[c] is [feature_dim, k] row-major
    let projections: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..feature_dim * k)
                .map(|_| StandardNormal.sample(&mut proj_rng))
                .collect()
        })
        .collect();
    let mut label_rng = rng::seeded(rng::derive(seed, 2));
    let mut rows = Vec::with_capacity(labels.len());
    let mut noisy = Vec::with_capacity(labels.len());
    for (x, &y) in features.chunks(feature_dim).zip(labels) {
        let q = instance_flip_rate(x, y, rate, seed);
        let w = &projections[y];
        let mut scores = vec![0.0; k];
        for (xi, wrow) in x.iter().zip(w.chunks(k)) {
            let xi = f64::from(*xi);
            for (s, wv) in scores.iter_mut().zip(wrow) {
                *s += xi * wv;
            }
        }
        let m = scores
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != y)
            .map(|(_, s)| *s)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (j, s) in scores.iter_mut().enumerate() {
            *s = if j == y { 0.0 } else { libm::exp(*s - m) };
            total += *s;
        }
        let row: Vec<f64> = scores
            .iter()
            .enumerate()
            .map(|(j, s)| if j == y { 1.0 - q } else { q * s / total })
            .collect();
        noisy.push(sample_categorical(&row, &mut label_rng));
        rows.push(row);
    }
    let record = CorruptionRecord::new(
        NoiseKind::InstanceDependent,
        rate,
        seed,
        k,
        labels,
        &noisy,
        TransitionRecord::PerInstanceRow(rows),
    );
    Ok((noisy, record))
}

fn instance_flip_rate(x: &[f32], y: usize, rate: f64, seed: u64) -> f64 {
    if rate == 0.0 {
        return 0.0;
    }
    let bytes = x
        .iter()
        .flat_map(|v| v.to_bits().to_le_bytes())
        .chain((y as u64).to_le_bytes());
    let mut r = rng::seeded(rng::derive_bytes(seed, bytes));
    let normal = Normal::new(rate, IDN_RATE_STD).expect("valid normal");
    loop {
        let q: f64 = normal.sample(&mut r);
        if (0.0..=1.0).contains(&q) {
            return q;
        }
    }
}

pub(crate) fn sample_categorical(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &pj) in p.iter().enumerate() {
        acc += pj;
        if u < acc {
            return j;
        }
    }
    // u landed in the rounding gap above the last partial sum
    p.iter().rposition(|&pj| pj > 0.0).unwrap_or(p.len() - 1)
}

/// The scaled uniform noise `gamma * U[0, 1]` added by [`perturb_instances`].
pub fn perturbation_noise(len: usize, gamma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!(
            "perturbation gamma {gamma} must be finite and >= 0"
        )));
    }
    let mut rng = rng::seeded(rng::derive(seed, 3));
    Ok((0..len).map(|_| gamma * rng.random::<f64>()).collect())
}

/// `x + gamma * z` with `z ~ U[0, 1]` drawn fresh for every element.
pub fn perturb_instances(features: &[f32], gamma: f64, seed: u64) -> Result<Vec<f32>> {
    let noise = perturbation_noise(features.len(), gamma, seed)?;
    if gamma == 0.0 {
        return Ok(features.to_vec());
    }
    Ok(features
        .iter()
        .zip(&noise)
        .map(|(x, z)| (f64::from(*x) + z) as f32)
        .collect())
}

/// Row `i` is the mean, over instances with clean label `i`, of their transition
/// row; `None` marks a class without instances.
pub fn averaged_true_transition(record: &CorruptionRecord, clean_labels: &[usize]) -> Result<Vec<Option<Vec<f64>>>> {
    let k = record.num_classes;
    match &record.transition {
        TransitionRecord::Shared(m) => Ok(m.iter().cloned().map(Some).collect()),
        TransitionRecord::PerInstanceRow(rows) => {
            if rows.len() != clean_labels.len() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} labels", rows.len()),
                    actual: format!("{}", clean_labels.len()),
                });
            }
            check_inputs(clean_labels, k)?;
            let mut sums = vec![vec![0.0; k]; k];
            let mut counts = vec![0usize; k];
            for (row, &y) in rows.iter().zip(clean_labels) {
                counts[y] += 1;
                for (s, v) in sums[y].iter_mut().zip(row) {
                    *s += v;
                }
            }
            Ok(sums
                .into_iter()
                .zip(counts)
                .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
                .collect())
        }
    }
}
