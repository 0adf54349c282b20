//! Semi-supervised variant over a given clean/noisy split.
//!
//! A shared trunk feeds two linear maps producing `X1` (ReLU, width
//! `component_dim`) and `X2` (`k` policy logits). The main head reads `X1` only
//! and is the whole inference path. A transition encoder maps trunk features,
//! the main head's label estimate and the detached `X2` into the `X1` space,
//! where a pseudo head turns it into noisy-label logits. The objective is
//! `L_clean + α1·L_noisy + α2·L_PG + α3·L_Dec`, with `L_Dec` the pseudo head's
//! cross-entropy on clean-sample `X1` against the clean label.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::graph::{Graph, Var};
use crate::losses::{self, LossWeights};
use crate::models::{self, InputShape, INFERENCE_CHUNK};
use crate::nn::{Adam, AdamConfig, Conv2d, Linear, ParamStore};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemiPreset {
    Cifar10n,
    Cifar100n,
}

impl SemiPreset {
    pub fn weights(self) -> LossWeights {
        match self {
            SemiPreset::Cifar10n => LossWeights {
                alpha1: 1.0,
                alpha2: 0.1,
                alpha3: 0.1,
            },
            SemiPreset::Cifar100n => LossWeights {
                alpha1: 1.0,
                alpha2: 1.0,
                alpha3: 0.01,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiConfig {
    /// Overrides `weights` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<SemiPreset>,
    #[serde(default = "SemiConfig::default_weights")]
    pub weights: LossWeights,
    #[serde(default = "SemiConfig::default_channels")]
    pub conv_channels: Vec<usize>,
    #[serde(default = "SemiConfig::default_hidden")]
    pub hidden: usize,
    #[serde(default = "SemiConfig::default_component_dim")]
    pub component_dim: usize,
    #[serde(default = "SemiConfig::default_lr")]
    pub learning_rate: f64,
    #[serde(default = "SemiConfig::default_epochs")]
    pub epochs: usize,
    #[serde(default = "SemiConfig::default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SemiConfig {
    fn default_weights() -> LossWeights {
        SemiPreset::Cifar10n.weights()
    }
    fn default_channels() -> Vec<usize> {
        alloc::vec![16, 32]
    }
    fn default_hidden() -> usize {
        256
    }
    fn default_component_dim() -> usize {
        64
    }
    fn default_lr() -> f64 {
        1e-3
    }
    fn default_epochs() -> usize {
        30
    }
    fn default_batch() -> usize {
        128
    }

    pub fn new(seed: u64) -> Self {
        SemiConfig {
            preset: None,
            weights: Self::default_weights(),
            conv_channels: Self::default_channels(),
            hidden: 256,
            component_dim: 64,
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 128,
            seed,
        }
    }

    pub fn effective_weights(&self) -> LossWeights {
        self.preset.map_or(self.weights, SemiPreset::weights)
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_weights().validate()?;
        if self.hidden == 0 || self.component_dim == 0 || self.conv_channels.contains(&0) {
            return Err(Error::invalid("semi widths must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::invalid("epochs, batch size and learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiHeads {
    pub config: SemiConfig,
    pub num_classes: usize,
    pub input: InputShape,
    pub store: ParamStore,
    pub trunk_convs: Vec<Conv2d>,
    pub trunk_fc: Linear,
    pub trunk_flat: usize,
    pub x1_map: Linear,
    pub x2_map: Linear,
    pub main_head: Linear,
    pub encoder: [Linear; 2],
    pub pseudo_head: Linear,
}

/// Parameter groups; the inference path reads the first three only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemiPart {
    Trunk,
    X1Map,
    MainHead,
    X2Map,
    Encoder,
    PseudoHead,
}

impl SemiPart {
    pub const ALL: [SemiPart; 6] = [
        SemiPart::Trunk,
        SemiPart::X1Map,
        SemiPart::MainHead,
        SemiPart::X2Map,
        SemiPart::Encoder,
        SemiPart::PseudoHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SemiPart::Trunk => "trunk",
            SemiPart::X1Map => "x1_map",
            SemiPart::MainHead => "main_head",
            SemiPart::X2Map => "x2_map",
            SemiPart::Encoder => "encoder",
            SemiPart::PseudoHead => "pseudo_head",
        }
    }
}

impl SemiHeads {
    pub fn new(config: &SemiConfig, input: InputShape, k: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(seed);
        let mut store = ParamStore::new();
        let (mut ch, mut h, mut w) = (input.channels, input.height, input.width);
        let mut trunk_convs = Vec::new();
        for (i, &out) in config.conv_channels.iter().enumerate() {
            let conv = Conv2d::new(&mut store, &format!("trunk.conv{i}"), ch, out, 3, 2, 1, true, &mut r);
            h = conv.out_size(h);
            w = conv.out_size(w);
            ch = out;
            trunk_convs.push(conv);
        }
        let trunk_flat = ch * h * w;
        let hd = config.hidden;
        let d = config.component_dim;
        let trunk_fc = Linear::new(&mut store, "trunk.fc", trunk_flat, hd, &mut r);
        let x1_map = Linear::new(&mut store, "x1_map", hd, d, &mut r);
        let x2_map = Linear::new(&mut store, "x2_map", hd, k, &mut r);
        let main_head = Linear::new(&mut store, "main_head", d, k, &mut r);
        let encoder = [
            Linear::new(&mut store, "encoder.fc0", hd + 2 * k, d, &mut r),
            Linear::new(&mut store, "encoder.fc1", d, d, &mut r),
        ];
        let pseudo_head = Linear::new(&mut store, "pseudo_head", d, k, &mut r);
        Ok(SemiHeads {
            config: config.clone(),
            num_classes: k,
            input,
            store,
            trunk_convs,
            trunk_fc,
            trunk_flat,
            x1_map,
            x2_map,
            main_head,
            encoder,
            pseudo_head,
        })
    }

    pub fn params(&self, part: SemiPart) -> Vec<crate::nn::ParamId> {
        match part {
            SemiPart::Trunk => {
                let mut p: Vec<_> = self.trunk_convs.iter().flat_map(Conv2d::params).collect();
                p.extend(self.trunk_fc.params());
                p
            }
            SemiPart::X1Map => self.x1_map.params().to_vec(),
            SemiPart::MainHead => self.main_head.params().to_vec(),
            SemiPart::X2Map => self.x2_map.params().to_vec(),
            SemiPart::Encoder => self.encoder.iter().flat_map(Linear::params).collect(),
            SemiPart::PseudoHead => self.pseudo_head.params().to_vec(),
        }
    }

    fn trunk(&self, g: &mut Graph, x: Var) -> Var {
        let batch = g.value(x).shape()[0];
        let mut h = x;
        for conv in &self.trunk_convs {
            let y = conv.forward(g, &self.store, h);
            h = g.relu(y);
        }
        let flat = g.reshape(h, &[batch, self.trunk_flat]);
        let z = self.trunk_fc.forward(g, &self.store, flat);
        g.relu(z)
    }

    fn x1(&self, g: &mut Graph, h: Var) -> Var {
        let a = self.x1_map.forward(g, &self.store, h);
        g.relu(a)
    }

    fn pseudo(&self, g: &mut Graph, v: Var) -> Var {
        self.pseudo_head.forward(g, &self.store, v)
    }

    /// Main-head class predictions: trunk, `X1` map and main head only.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let n = x.shape()[0];
        let per: usize = x.shape()[1..].iter().product();
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(n);
            let mut shape = x.shape().to_vec();
            shape[0] = end - start;
            let chunk = Tensor::from_vec(&shape, x.data()[start * per..end * per].to_vec())?;
            let mut g = Graph::new();
            let xv = g.constant(chunk);
            let h = self.trunk(&mut g, xv);
            let x1 = self.x1(&mut g, h);
            let logits = self.main_head.forward(&mut g, &self.store, x1);
            out.extend(g.value(logits).argmax_rows());
        }
        Ok(out)
    }
}

/// The four terms of the semi-supervised objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SemiComponents {
    pub clean: f64,
    pub noisy: f64,
    pub policy_gradient: f64,
    pub decorrelation: f64,
}

/// `clean + α1·noisy + α2·policy_gradient + α3·decorrelation`.
pub fn semi_total(c: &SemiComponents, w: &LossWeights) -> f64 {
    c.clean + w.alpha1 * c.noisy + w.alpha2 * c.policy_gradient + w.alpha3 * c.decorrelation
}

/// A batch of features and their labels.
#[derive(Debug, Clone, Copy)]
pub struct LabeledBatch<'a> {
    pub x: &'a Tensor,
    pub labels: &'a [usize],
}

/// Records the objective on `g`. `noisy` may be `None` only when its two
/// weights are zero. Returns the total and its components.
pub fn semi_loss_graph(
    g: &mut Graph,
    heads: &SemiHeads,
    clean: LabeledBatch<'_>,
    noisy: Option<LabeledBatch<'_>>,
    weights: &LossWeights,
    rng: &mut impl Rng,
) -> Result<(Var, SemiComponents)> {
    if clean.labels.is_empty() {
        return Err(Error::Empty("clean split"));
    }
    let k = heads.num_classes;
    let xc = g.constant(clean.x.clone());
    let hc = heads.trunk(g, xc);
    let x1c = heads.x1(g, hc);
    let main_logits = heads.main_head.forward(g, &heads.store, x1c);
    let ce_clean = losses::per_example_ce_graph(g, main_logits, clean.labels);
    let l_clean = g.mean(ce_clean);

    let pseudo_clean = heads.pseudo(g, x1c);
    let ce_dec = losses::per_example_ce_graph(g, pseudo_clean, clean.labels);
    let l_dec = g.mean(ce_dec);

    let mut comps = SemiComponents {
        clean: g.value(l_clean).item(),
        decorrelation: g.value(l_dec).item(),
        ..SemiComponents::default()
    };
    let mut total = l_clean;
    if weights.alpha3 != 0.0 {
        let s = g.scale(l_dec, weights.alpha3);
        total = g.add(total, s);
    }

    match noisy {
        Some(nb) if !nb.labels.is_empty() => {
            let b = nb.labels.len();
            let xn = g.constant(nb.x.clone());
            let hn = heads.trunk(g, xn);
            let x1n = heads.x1(g, hn);
            let est_logits = heads.main_head.forward(g, &heads.store, x1n);
            let estimate = g.value(est_logits).argmax_rows();
            let mut y = Tensor::zeros(&[b, k]);
            for (i, &c) in estimate.iter().enumerate() {
                y.data_mut()[i * k + c] = 1.0;
            }
            let x2 = heads.x2_map.forward(g, &heads.store, hn);
            let x2_blocked = g.detach(x2);
            let yv = g.constant(y);
            let enc_in = g.concat_cols(hn, yv);
            let enc_in = g.concat_cols(enc_in, x2_blocked);
            let e = heads.encoder[0].forward(g, &heads.store, enc_in);
            let e = g.relu(e);
            let e = heads.encoder[1].forward(g, &heads.store, e);
            let e = g.relu(e);
            let pseudo_noisy = heads.pseudo(g, e);
            let ce_noisy = losses::per_example_ce_graph(g, pseudo_noisy, nb.labels);
            let l_noisy = g.mean(ce_noisy);
            comps.noisy = g.value(l_noisy).item();
            if weights.alpha1 != 0.0 {
                let s = g.scale(l_noisy, weights.alpha1);
                total = g.add(total, s);
            }

            let rewards = g
                .value(ce_noisy)
                .data()
                .iter()
                .map(|&c| losses::reward(c))
                .collect::<Result<Vec<f64>>>()?;
            let gumbel = models::gumbel_noise(b, k, rng);
            let mut a = g.value(x2).clone();
            a.add_assign(&gumbel);
            let actions = a.argmax_rows();
            let lp = g.log_softmax(x2);
            let chosen = g.gather(lp, &actions);
            let l_pg = losses::policy_gradient_loss_graph(g, chosen, &rewards);
            comps.policy_gradient = g.value(l_pg).item();
            if weights.alpha2 != 0.0 {
                let s = g.scale(l_pg, weights.alpha2);
                total = g.add(total, s);
            }
        }
        _ => {
            if weights.alpha1 != 0.0 || weights.alpha2 != 0.0 {
                return Err(Error::Empty("noisy split"));
            }
        }
    }
    Ok((total, comps))
}

/// Value of the objective on one pair of batches.
pub fn semi_loss(
    heads: &SemiHeads,
    clean: LabeledBatch<'_>,
    noisy: Option<LabeledBatch<'_>>,
    weights: &LossWeights,
    seed: u64,
) -> Result<(f64, SemiComponents)> {
    let mut g = Graph::new();
    let (total, comps) = semi_loss_graph(&mut g, heads, clean, noisy, weights, &mut rng::seeded(seed))?;
    Ok((g.value(total).item(), comps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiEpochRecord {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub clean: f64,
    pub noisy: f64,
    pub policy_gradient: f64,
    pub decorrelation: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiReport {
    pub format_version: u32,
    pub config: SemiConfig,
    pub epochs: Vec<SemiEpochRecord>,
    pub final_test_accuracy: Option<f64>,
    #[serde(default)]
    pub wall_clock_seconds: Option<f64>,
}

/// Trains on `clean` (clean labels) and `noisy` (observed labels).
pub fn semi_fit(
    clean: &LabeledDataset,
    noisy: Option<&LabeledDataset>,
    test: Option<&LabeledDataset>,
    config: &SemiConfig,
) -> Result<(SemiHeads, SemiReport)> {
    config.validate()?;
    if clean.is_empty() {
        return Err(Error::Empty("clean split"));
    }
    let weights = config.effective_weights();
    let clean_labels = clean
        .clean_labels
        .as_deref()
        .or(clean.observed_labels())
        .ok_or_else(|| Error::invalid("clean split has no labels"))?
        .to_vec();
    let noisy = noisy.filter(|n| !n.is_empty());
    if noisy.is_none() && (weights.alpha1 != 0.0 || weights.alpha2 != 0.0) {
        return Err(Error::Empty("noisy split"));
    }
    let noisy_labels = match noisy {
        Some(n) => n
            .observed_labels()
            .ok_or_else(|| Error::invalid("noisy split has no labels"))?
            .to_vec(),
        None => Vec::new(),
    };
    let input = InputShape::from_feature_shape(&clean.manifest.feature_shape)?;
    let k = clean.num_classes();
    let mut heads = SemiHeads::new(config, input, k, rng::derive(config.seed, 20))?;
    let mut opt = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &heads.store,
    );
    let ids: Vec<_> = heads.store.ids().collect();
    let mut shuffle_rng = rng::seeded(rng::derive(config.seed, 10));
    let mut noise_rng = rng::seeded(rng::derive(config.seed, 30));
    let mut order: Vec<usize> = (0..clean.len()).collect();
    let mut noisy_order: Vec<usize> = (0..noisy.map_or(0, |n| n.len())).collect();
    let mut noisy_pos = 0;
    let test_parts = match test {
        Some(t) => Some((
            t.batch(&(0..t.len()).collect::<Vec<_>>()),
            t.clean_labels
                .as_deref()
                .or(t.observed_labels())
                .ok_or_else(|| Error::invalid("test set has no labels"))?
                .to_vec(),
        )),
        None => None,
    };
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = SemiComponents::default();
        let mut total = 0.0;
        let mut hits = 0;
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let xc = clean.batch(chunk);
            let yc: Vec<usize> = chunk.iter().map(|&i| clean_labels[i]).collect();
            let noisy_batch = match noisy {
                Some(n) => {
                    let mut idx = Vec::with_capacity(chunk.len());
                    for _ in 0..chunk.len() {
                        if noisy_pos == 0 {
                            noisy_order.shuffle(&mut shuffle_rng);
                        }
                        idx.push(noisy_order[noisy_pos]);
                        noisy_pos = (noisy_pos + 1) % noisy_order.len();
                    }
                    let y: Vec<usize> = idx.iter().map(|&i| noisy_labels[i]).collect();
                    Some((n.batch(&idx), y))
                }
                None => None,
            };
            let mut g = Graph::new();
            let (loss, comps) = semi_loss_graph(
                &mut g,
                &heads,
                LabeledBatch { x: &xc, labels: &yc },
                noisy_batch.as_ref().map(|(x, y)| LabeledBatch { x, labels: y }),
                &weights,
                &mut noise_rng,
            )?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    what: "semi-supervised loss",
                });
            }
            heads.store.zero_grad();
            g.backward(loss);
            g.accumulate_into(&mut heads.store);
            opt.step(&mut heads.store, &ids);
            sums.clean += comps.clean;
            sums.noisy += comps.noisy;
            sums.policy_gradient += comps.policy_gradient;
            sums.decorrelation += comps.decorrelation;
            total += lv;
            hits += heads.predict(&xc)?.iter().zip(&yc).filter(|(p, y)| p == y).count();
            steps += 1;
        }
        let n = steps as f64;
        let test_accuracy = match &test_parts {
            Some((x, y)) => Some(eval::accuracy(&heads.predict(x)?, y)?),
            None => None,
        };
        epochs.push(SemiEpochRecord {
            epoch,
            train_accuracy: hits as f64 / clean.len() as f64,
            test_accuracy,
            clean: sums.clean / n,
            noisy: sums.noisy / n,
            policy_gradient: sums.policy_gradient / n,
            decorrelation: sums.decorrelation / n,
            total: total / n,
        });
    }
    let final_test_accuracy = epochs.last().and_then(|e| e.test_accuracy);
    Ok((
        heads,
        SemiReport {
            format_version: crate::train::REPORT_VERSION,
            config: config.clone(),
            epochs,
            final_test_accuracy,
            wall_clock_seconds: None,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_blobs;

    fn small(seed: u64) -> SemiConfig {
        SemiConfig {
            conv_channels: alloc::vec![],
            hidden: 16,
            component_dim: 8,
            epochs: 2,
            batch_size: 16,
            ..SemiConfig::new(seed)
        }
    }

    #[test]
    fn totals() {
        let c = SemiComponents {
            clean: 1.0,
            noisy: 1.0,
            policy_gradient: 1.0,
            decorrelation: 1.0,
        };
        assert!((semi_total(&c, &SemiPreset::Cifar10n.weights()) - 2.2).abs() < 1e-15);
        assert_eq!(semi_total(&c, &LossWeights::ZERO), 1.0);
    }

    #[test]
    fn zero_weights_leave_clean_loss() {
        let ds = make_synthetic_blobs(3, 10, 4, 3.0, 0).unwrap();
        let heads = SemiHeads::new(&small(0), InputShape::from_feature_shape(&[4]).unwrap(), 3, 0).unwrap();
        let x = ds.batch(&[0, 5, 12, 29]);
        let y = [0, 0, 1, 2];
        let (total, c) = semi_loss(
            &heads,
            LabeledBatch { x: &x, labels: &y },
            Some(LabeledBatch {
                x: &x,
                labels: &[1, 2, 0, 0],
            }),
            &LossWeights::ZERO,
            3,
        )
        .unwrap();
        assert_eq!(total, c.clean);
        assert!(c.noisy > 0.0 && c.decorrelation > 0.0);
        assert!(semi_loss(
            &heads,
            LabeledBatch { x: &x, labels: &y },
            None,
            &SemiPreset::Cifar10n.weights(),
            0
        )
        .is_err());
    }

    #[test]
    fn fit_runs() {
        let ds = make_synthetic_blobs(3, 20, 4, 4.0, 0).unwrap();
        let (a, b) = crate::data::split(
            &ds,
            &crate::data::SplitSpec {
                train_fraction: 0.5,
                seed: 0,
                stratified: true,
            },
        )
        .unwrap();
        let (heads, report) = semi_fit(&a, Some(&b), Some(&ds), &small(1)).unwrap();
        assert_eq!(report.epochs.len(), 2);
        assert_eq!(heads.predict(&ds.batch(&[0, 1])).unwrap().len(), 2);
    }
}
