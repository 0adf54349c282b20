//! Twin-network training: small-loss selection, the four-term objective with
//! the policy output detached on the transition path, and extraction of the
//! learned transition matrix.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::{self, Matrix};
use crate::graph::{softmax_rows_in_place, Graph, Var};
use crate::losses::{self, LossComponents, LossWeights};
use crate::models::{self, Component, InputShape, MergeConfig, ModelConfig, Network};
use crate::nn::{Adam, AdamConfig, ParamId};
use crate::rng;
use crate::tensor::Tensor;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// All four terms.
    Full,
    /// No policy model: merge of `Y` alone and no policy-gradient term.
    AblatePolicy,
    /// Plain cross-entropy on every noisy label; separation model frozen.
    CeBaseline,
    /// Co-teaching term only.
    CoteachingBaseline,
}

impl TrainMode {
    pub fn uses_transition(self) -> bool {
        matches!(self, TrainMode::Full | TrainMode::AblatePolicy)
    }

    pub fn uses_policy(self) -> bool {
        self == TrainMode::Full
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSchedule {
    /// Fraction of each batch eventually discarded.
    pub noise_rate_estimate: f64,
    /// Epochs at keep ratio 1 before the schedule engages.
    #[serde(default = "SelectionSchedule::default_warmup")]
    pub warmup_epochs: usize,
    /// Epochs over which the keep ratio ramps from 1 down to `1 - rate`.
    #[serde(default = "SelectionSchedule::default_ramp")]
    pub ramp_epochs: usize,
}

impl SelectionSchedule {
    fn default_warmup() -> usize {
        5
    }
    fn default_ramp() -> usize {
        10
    }

    pub fn new(noise_rate_estimate: f64) -> Self {
        SelectionSchedule {
            noise_rate_estimate,
            warmup_epochs: 5,
            ramp_epochs: 10,
        }
    }

    /// `1` during warmup, then `1 - min((t - warmup) / ramp, 1) * rate`.
    pub fn keep_ratio(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return 1.0;
        }
        let t = (epoch - self.warmup_epochs) as f64;
        let frac = if self.ramp_epochs == 0 {
            1.0
        } else {
            (t / self.ramp_epochs as f64).min(1.0)
        };
        1.0 - frac * self.noise_rate_estimate
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.noise_rate_estimate) {
            return Err(Error::invalid(format!(
                "noise rate estimate {} outside [0, 1)",
                self.noise_rate_estimate
            )));
        }
        Ok(())
    }
}

/// How the co-teaching term drives each twin's parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoteachingUpdate {
    /// Both twins minimise their own mean loss over the jointly selected
    /// confident set; auxiliary terms enter each twin at full weight.
    #[default]
    SharedSet,
    /// Exact gradient of the joint min-loss term: each confident example
    /// updates only the twin attaining the minimum (ties to the first);
    /// auxiliary terms are averaged over the twins.
    ExactMin,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "TrainConfig::default_mode")]
    pub mode: TrainMode,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub merge: MergeConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "TrainConfig::default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "TrainConfig::default_epochs")]
    pub epochs: usize,
    #[serde(default = "TrainConfig::default_batch")]
    pub batch_size: usize,
    pub schedule: SelectionSchedule,
    #[serde(default)]
    pub coteaching_update: CoteachingUpdate,
    #[serde(default)]
    pub seed: u64,
    /// Transition cross-entropy over the confident set only, instead of the
    /// whole batch with classifier labels for the rest.
    #[serde(default)]
    pub transition_on_confident_only: bool,
    /// Subtract the batch-mean reward before the policy-gradient term.
    #[serde(default)]
    pub reward_baseline: bool,
    /// Monte-Carlo draws per row when extracting the transition matrix.
    #[serde(default = "TrainConfig::default_samples")]
    pub transition_samples: usize,
}

impl TrainConfig {
    fn default_mode() -> TrainMode {
        TrainMode::Full
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
    fn default_samples() -> usize {
        1000
    }

    pub fn new(noise_rate_estimate: f64, seed: u64) -> Self {
        TrainConfig {
            mode: TrainMode::Full,
            weights: LossWeights::default(),
            merge: MergeConfig::default(),
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            epochs: 30,
            batch_size: 128,
            schedule: SelectionSchedule::new(noise_rate_estimate),
            coteaching_update: CoteachingUpdate::SharedSet,
            seed,
            transition_on_confident_only: false,
            reward_baseline: false,
            transition_samples: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.merge.validate()?;
        self.model.validate()?;
        self.schedule.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.transition_samples == 0 {
            return Err(Error::invalid(
                "epochs, batch size and transition samples must be positive",
            ));
        }
        Ok(())
    }

    /// Weights actually applied: the policy term is dropped without a policy
    /// model, and baselines use none of the auxiliary terms.
    pub fn effective_weights(&self) -> LossWeights {
        match self.mode {
            TrainMode::Full => self.weights,
            TrainMode::AblatePolicy => LossWeights {
                alpha2: 0.0,
                ..self.weights
            },
            TrainMode::CeBaseline | TrainMode::CoteachingBaseline => LossWeights::ZERO,
        }
    }
}

/// Two independent networks and their optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinState {
    pub nets: [Network; 2],
    pub optimizers: [Adam; 2],
    pub epoch: usize,
}

impl TwinState {
    pub fn new(model: &ModelConfig, input: InputShape, k: usize, learning_rate: f64, seed: u64) -> Result<Self> {
        let nets = [
            Network::new(model, input, k, rng::derive(seed, 20))?,
            Network::new(model, input, k, rng::derive(seed, 21))?,
        ];
        let adam = AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        };
        let optimizers = [Adam::new(adam, &nets[0].store), Adam::new(adam, &nets[1].store)];
        Ok(TwinState {
            nets,
            optimizers,
            epoch: 0,
        })
    }
}

/// Per-step schedule values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub epoch: usize,
    pub keep_ratio: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub epoch: usize,
    pub step: usize,
    /// Averaged over the twins, except `coteaching`, which is the joint term.
    pub components: LossComponents,
    pub total: f64,
    pub selected: usize,
    pub batch: usize,
    /// Mean selected-set loss of each twin.
    pub selection_loss: [f64; 2],
    /// Correct predictions against the observed labels, per twin.
    pub train_hits: [usize; 2],
    /// Squared norm of the policy model's accumulated gradient, per twin.
    pub policy_grad_sq_norm: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub keep_ratio: f64,
    pub temperature: f64,
    pub train_accuracy: [f64; 2],
    pub test_accuracy: Option<[f64; 2]>,
    pub coteaching: f64,
    pub transition_ce: f64,
    pub policy_gradient: f64,
    pub decorrelation: f64,
    pub total: f64,
    pub selection_loss: [f64; 2],
}

impl EpochRecord {
    /// Twin with the lower selection loss (ties to the first).
    pub fn best_twin(&self) -> usize {
        usize::from(self.selection_loss[1] < self.selection_loss[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionSource {
    TransitionModel,
    /// Predicted-class versus observed-label frequencies on the training set.
    Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub chosen_twin: usize,
    pub final_test_accuracy: Option<f64>,
    pub transition_matrix: Option<Matrix>,
    pub transition_source: Option<TransitionSource>,
    /// Filled in by callers with a clock; not part of determinism checks.
    #[serde(default)]
    pub wall_clock_seconds: Option<f64>,
}

impl RunReport {
    /// Copy with the wall-clock time cleared, for exact comparisons.
    pub fn without_timing(&self) -> RunReport {
        RunReport {
            wall_clock_seconds: None,
            ..self.clone()
        }
    }
}

/// Hooks called during [`fit_with`].
pub trait Observer {
    fn on_step(&mut self, _stats: &StepStats) {}
    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

impl Observer for () {}

fn check_finite(v: f64, epoch: usize, what: &'static str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, what })
    }
}

fn one_hot(labels: &[usize], k: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), k]);
    for (i, &y) in labels.iter().enumerate() {
        t.data_mut()[i * k + y] = 1.0;
    }
    t
}

fn all_params(net: &Network) -> Vec<ParamId> {
    net.store.ids().collect()
}

fn trainable_params(net: &Network, mode: TrainMode) -> Vec<ParamId> {
    match mode {
        TrainMode::CeBaseline => net.params(Component::Classifier),
        _ => all_params(net),
    }
}

struct TwinForward {
    graph: Graph,
    ce: Var,
    logits: Var,
}

fn classify(net: &Network, x: &Tensor, labels: &[usize]) -> TwinForward {
    let mut graph = Graph::new();
    let xv = graph.constant(x.clone());
    let x1 = net.separation.forward(&mut graph, &net.store, xv);
    let logits = net.classifier.forward(&mut graph, &net.store, x1);
    let ce = losses::per_example_ce_graph(&mut graph, logits, labels);
    TwinForward { graph, ce, logits }
}

/// Auxiliary terms of one twin, recorded on its graph.
struct AuxTerms {
    transition_ce: Var,
    policy_gradient: Option<Var>,
    decorrelation: Var,
}

#[allow(clippy::too_many_arguments)]
fn auxiliary_terms(
    net: &Network,
    fw: &mut TwinForward,
    x: &Tensor,
    noisy: &[usize],
    confident: &[usize],
    in_confident: &[bool],
    config: &TrainConfig,
    ctx: &StepContext,
    noise_rng: &mut impl Rng,
) -> Result<AuxTerms> {
    let k = net.num_classes;
    let b = noisy.len();
    let g = &mut fw.graph;
    let predicted = g.value(fw.logits).argmax_rows();
    let merge_labels: Vec<usize> = (0..b)
        .map(|i| if in_confident[i] { noisy[i] } else { predicted[i] })
        .collect();
    let y = one_hot(&merge_labels, k);

    let gumbel = models::gumbel_noise(b, k, noise_rng);
    let z_merge = models::gaussian_noise(b, k, noise_rng);
    let z_x1 = models::gaussian_noise(b, k, noise_rng);

    let x2 = if config.mode.uses_policy() {
        let xv = g.constant(x.clone());
        Some(net.policy.forward(g, &net.store, xv))
    } else {
        None
    };
    // the merge sees X2 only as a value; its gradient comes from the policy term alone
    let x2_blocked = x2.map(|v| g.detach(v));
    let (merged, merge_logits) = models::merge_graph(g, &y, x2_blocked, &gumbel, config.merge.beta, ctx.temperature);
    let t_logits = net.transition.forward(g, &net.store, merged, &z_merge);
    let t_probs = g.softmax(t_logits);

    let per_instance = losses::per_instance_transition_ce_graph(g, t_probs, noisy);
    let transition_ce = if config.transition_on_confident_only {
        let sel = g.select_rows(per_instance, confident);
        g.mean(sel)
    } else {
        g.mean(per_instance)
    };

    let policy_gradient = match x2 {
        Some(x2) if config.effective_weights().alpha2 != 0.0 => {
            let ce_values = g.value(per_instance).data().to_vec();
            let mut rewards = ce_values
                .iter()
                .map(|&c| losses::reward(c))
                .collect::<Result<Vec<f64>>>()?;
            if config.reward_baseline {
                let mean = rewards.iter().sum::<f64>() / b as f64;
                rewards.iter_mut().for_each(|r| *r -= mean);
            }
            let actions = merge_logits.argmax_rows();
            let lp = g.log_softmax(x2);
            let chosen = g.gather(lp, &actions);
            Some(losses::policy_gradient_loss_graph(g, chosen, &rewards))
        }
        _ => None,
    };

    // f_tran(X1 + noise) with X1 summarised by the classifier's distribution;
    // only the separation model and classifier move to decorrelate it.
    let p_x1 = g.softmax(fw.logits);
    let d_logits = net.transition.forward_with(g, &net.store, p_x1, &z_x1, false);
    let d_probs = g.softmax(d_logits);
    let decorrelation = losses::decorrelation_loss_graph(g, d_probs);

    Ok(AuxTerms {
        transition_ce,
        policy_gradient,
        decorrelation,
    })
}

/// One optimisation step of both twins on a batch.
pub fn train_step(
    state: &mut TwinState,
    x: &Tensor,
    noisy: &[usize],
    config: &TrainConfig,
    ctx: &StepContext,
    noise_rng: &mut impl Rng,
) -> Result<StepStats> {
    let b = noisy.len();
    if b == 0 || x.shape().first() != Some(&b) {
        return Err(Error::ShapeMismatch {
            expected: format!("batch of {b} examples"),
            actual: format!("{:?}", x.shape()),
        });
    }
    let weights = config.effective_weights();
    let mode = config.mode;
    let mut fw = [classify(&state.nets[0], x, noisy), classify(&state.nets[1], x, noisy)];
    let ce: [Vec<f64>; 2] = [
        fw[0].graph.value(fw[0].ce).data().to_vec(),
        fw[1].graph.value(fw[1].ce).data().to_vec(),
    ];
    for c in &ce {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                epoch: ctx.epoch,
                what: "classification loss",
            });
        }
    }
    let train_hits = [0, 1].map(|j| {
        let pred = fw[j].graph.value(fw[j].logits).argmax_rows();
        pred.iter().zip(noisy).filter(|(p, y)| p == y).count()
    });

    let mut components = LossComponents::default();
    let mut selection_loss = [0.0; 2];
    let mut totals: [Option<Var>; 2] = [None, None];
    let selected;

    if mode == TrainMode::CeBaseline {
        selected = b;
        for j in 0..2 {
            let g = &mut fw[j].graph;
            let m = g.mean(fw[j].ce);
            selection_loss[j] = g.value(m).item();
            components.coteaching += selection_loss[j] / 2.0;
            totals[j] = Some(m);
        }
    } else {
        let min_loss: Vec<f64> = ce[0].iter().zip(&ce[1]).map(|(a, b)| a.min(*b)).collect();
        let confident = losses::small_loss_select(&min_loss, ctx.keep_ratio)?;
        selected = confident.len();
        let mut in_confident = vec![false; b];
        for &i in &confident {
            in_confident[i] = true;
        }
        components.coteaching = losses::coteaching_loss(&ce[0], &ce[1], &confident)?;
        let exact_min = config.coteaching_update == CoteachingUpdate::ExactMin;
        let owned: [Vec<usize>; 2] = if exact_min {
            [
                confident.iter().copied().filter(|&i| ce[0][i] <= ce[1][i]).collect(),
                confident.iter().copied().filter(|&i| ce[0][i] > ce[1][i]).collect(),
            ]
        } else {
            [confident.clone(), confident.clone()]
        };
        let scale = 1.0 / confident.len() as f64;
        for j in 0..2 {
            selection_loss[j] = confident.iter().map(|&i| ce[j][i]).sum::<f64>() * scale;
            let fwj = &mut fw[j];
            let share = if owned[j].is_empty() {
                fwj.graph.constant(Tensor::scalar(0.0))
            } else {
                let sel = fwj.graph.select_rows(fwj.ce, &owned[j]);
                let s = fwj.graph.sum(sel);
                fwj.graph.scale(s, scale)
            };
            let mut total = share;
            if mode.uses_transition() {
                let aux = auxiliary_terms(
                    &state.nets[j],
                    fwj,
                    x,
                    noisy,
                    &confident,
                    &in_confident,
                    config,
                    ctx,
                    noise_rng,
                )?;
                let g = &mut fwj.graph;
                components.transition_ce += g.value(aux.transition_ce).item() / 2.0;
                components.decorrelation += g.value(aux.decorrelation).item() / 2.0;
                if let Some(pg) = aux.policy_gradient {
                    components.policy_gradient += g.value(pg).item() / 2.0;
                }
                let per_twin = if exact_min {
                    LossWeights {
                        alpha1: weights.alpha1 / 2.0,
                        alpha2: weights.alpha2 / 2.0,
                        alpha3: weights.alpha3 / 2.0,
                    }
                } else {
                    weights
                };
                total = losses::total_loss_graph(
                    g,
                    share,
                    Some(aux.transition_ce),
                    aux.policy_gradient,
                    Some(aux.decorrelation),
                    &per_twin,
                );
            }
            totals[j] = Some(total);
        }
    }

    let total = losses::total_loss(&components, &weights);
    for (v, what) in [
        (total, "total loss"),
        (components.transition_ce, "transition loss"),
        (components.policy_gradient, "policy-gradient loss"),
        (components.decorrelation, "decorrelation loss"),
    ] {
        check_finite(v, ctx.epoch, what)?;
    }

    let mut policy_grad_sq_norm = [0.0; 2];
    for j in 0..2 {
        let net = &mut state.nets[j];
        net.store.zero_grad();
        let loss = totals[j].expect("loss recorded for each twin");
        fw[j].graph.backward(loss);
        fw[j].graph.accumulate_into(&mut net.store);
        policy_grad_sq_norm[j] = net
            .params(Component::Policy)
            .iter()
            .map(|&id| net.store.grad(id).sum_squares())
            .sum();
        let ids = trainable_params(net, mode);
        state.optimizers[j].step(&mut net.store, &ids);
    }

    Ok(StepStats {
        epoch: ctx.epoch,
        step: state.optimizers[0].steps() as usize,
        components,
        total,
        selected,
        batch: b,
        selection_loss,
        train_hits,
        policy_grad_sq_norm,
    })
}

/// Trained twins, the report, and which twin was chosen.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub state: TwinState,
    pub report: RunReport,
}

impl FitOutput {
    pub fn chosen(&self) -> &Network {
        &self.state.nets[self.report.chosen_twin]
    }
}

pub fn fit(train: &LabeledDataset, test: Option<&LabeledDataset>, config: &TrainConfig) -> Result<FitOutput> {
    fit_with(train, test, config, &mut ())
}

pub fn fit_with(
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    config: &TrainConfig,
    observer: &mut dyn Observer,
) -> Result<FitOutput> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let labels = train
        .observed_labels()
        .ok_or_else(|| Error::invalid("training set has no labels"))?
        .to_vec();
    let k = train.num_classes();
    let input = InputShape::from_feature_shape(&train.manifest.feature_shape)?;
    let test_parts = match test {
        Some(t) => {
            let y = t
                .clean_labels
                .as_deref()
                .or(t.observed_labels())
                .ok_or_else(|| Error::invalid("test set has no labels"))?;
            if t.manifest.feature_shape != train.manifest.feature_shape {
                return Err(Error::ShapeMismatch {
                    expected: format!("{:?}", train.manifest.feature_shape),
                    actual: format!("{:?}", t.manifest.feature_shape),
                });
            }
            Some((t.batch(&(0..t.len()).collect::<Vec<_>>()), y.to_vec()))
        }
        None => None,
    };

    let mut state = TwinState::new(&config.model, input, k, config.learning_rate, config.seed)?;
    let mut shuffle_rng = rng::seeded(rng::derive(config.seed, 10));
    let mut noise_rng = rng::seeded(rng::derive(config.seed, 30));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let ctx = StepContext {
            epoch,
            keep_ratio: config.schedule.keep_ratio(epoch),
            temperature: config.merge.temperature_at(epoch),
        };
        order.shuffle(&mut shuffle_rng);
        let mut sums = LossComponents::default();
        let mut total = 0.0;
        let mut sel = [0.0; 2];
        let mut hits = [0usize; 2];
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let x = train.batch(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let stats = train_step(&mut state, &x, &y, config, &ctx, &mut noise_rng)?;
            observer.on_step(&stats);
            sums.coteaching += stats.components.coteaching;
            sums.transition_ce += stats.components.transition_ce;
            sums.policy_gradient += stats.components.policy_gradient;
            sums.decorrelation += stats.components.decorrelation;
            total += stats.total;
            for j in 0..2 {
                sel[j] += stats.selection_loss[j];
                hits[j] += stats.train_hits[j];
            }
            steps += 1;
        }
        let n = steps as f64;
        let test_accuracy = match &test_parts {
            Some((x, y)) => {
                let a0 = eval::accuracy(&state.nets[0].predict(x)?, y)?;
                let a1 = eval::accuracy(&state.nets[1].predict(x)?, y)?;
                Some([a0, a1])
            }
            None => None,
        };
        state.epoch = epoch + 1;
        let record = EpochRecord {
            epoch,
            keep_ratio: ctx.keep_ratio,
            temperature: ctx.temperature,
            train_accuracy: [0, 1].map(|j| hits[j] as f64 / train.len() as f64),
            test_accuracy,
            coteaching: sums.coteaching / n,
            transition_ce: sums.transition_ce / n,
            policy_gradient: sums.policy_gradient / n,
            decorrelation: sums.decorrelation / n,
            total: total / n,
            selection_loss: [sel[0] / n, sel[1] / n],
        };
        observer.on_epoch(&record);
        epochs.push(record);
    }

    let last = epochs.last().expect("at least one epoch");
    let chosen_twin = last.best_twin();
    let final_test_accuracy = last.test_accuracy.map(|a| a[chosen_twin]);
    let net = &state.nets[chosen_twin];
    let (transition_matrix, transition_source) = if config.mode.uses_transition() {
        let reference = reference_batch(train, config.transition_samples, config.seed);
        let m = extract_causal_transition(
            net,
            &reference,
            config.transition_samples,
            &config.merge,
            config.mode.uses_policy(),
            rng::derive(config.seed, 40),
        )?;
        (Some(m), Some(TransitionSource::TransitionModel))
    } else {
        let all: Vec<usize> = (0..train.len()).collect();
        let mut preds = Vec::with_capacity(train.len());
        for chunk in all.chunks(models::INFERENCE_CHUNK * 4) {
            preds.extend(net.predict(&train.batch(chunk))?);
        }
        (
            Some(eval::confusion_transition(&preds, &labels, k)?),
            Some(TransitionSource::Confusion),
        )
    };

    let report = RunReport {
        format_version: REPORT_VERSION,
        config: config.clone(),
        epochs,
        chosen_twin,
        final_test_accuracy,
        transition_matrix,
        transition_source,
        wall_clock_seconds: None,
    };
    Ok(FitOutput { state, report })
}

/// Up to `n` training instances drawn without replacement under `seed`.
pub fn reference_batch(train: &LabeledDataset, n: usize, seed: u64) -> Tensor {
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut rng::seeded(rng::derive(seed, 41)));
    idx.truncate(n.min(train.len()));
    train.batch(&idx)
}

/// Row `y` averages `softmax(f_tran(merge(onehot(y), X2), z))` over
/// `num_samples` draws, cycling through the instances of `reference` for `X2`
/// and drawing fresh Gumbel and Gaussian noise for each.
pub fn extract_causal_transition(
    net: &Network,
    reference: &Tensor,
    num_samples: usize,
    merge: &MergeConfig,
    use_policy: bool,
    seed: u64,
) -> Result<Matrix> {
    if num_samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let n_ref = reference.shape().first().copied().unwrap_or(0);
    if n_ref == 0 {
        return Err(Error::Empty("reference set"));
    }
    let k = net.num_classes;
    let x2 = if use_policy {
        let per: usize = reference.shape()[1..].iter().product();
        let mut out = Vec::with_capacity(n_ref * k);
        for start in (0..n_ref).step_by(models::INFERENCE_CHUNK) {
            let end = (start + models::INFERENCE_CHUNK).min(n_ref);
            let mut shape = reference.shape().to_vec();
            shape[0] = end - start;
            let chunk = Tensor::from_vec(&shape, reference.data()[start * per..end * per].to_vec())?;
            out.extend_from_slice(net.policy_outputs(&chunk).data());
        }
        Tensor::from_vec(&[n_ref, k], out)?
    } else {
        Tensor::zeros(&[n_ref, k])
    };
    let mut r = rng::seeded(seed);
    let tau = merge.temperature_at(usize::MAX);
    let mut matrix = Vec::with_capacity(k);
    for y in 0..k {
        let gumbel = models::gumbel_noise(num_samples, k, &mut r);
        let z = models::gaussian_noise(num_samples, k, &mut r);
        let mut merged = Vec::with_capacity(num_samples * k);
        let mut onehot = vec![0.0; k];
        onehot[y] = 1.0;
        for s in 0..num_samples {
            let i = s % n_ref;
            merged.extend(models::merge_logits(&onehot, x2.row(i), gumbel.row(s), merge.beta, tau));
        }
        softmax_rows_in_place(&mut merged, k);
        let mut g = Graph::new();
        let m = g.constant(Tensor::from_vec(&[num_samples, k], merged)?);
        let logits = net.transition.forward(&mut g, &net.store, m, &z);
        let p = g.softmax(logits);
        let pv = g.value(p);
        if !pv.is_finite() {
            return Err(Error::NonFinite("transition model"));
        }
        let mut row = vec![0.0; k];
        for s in 0..num_samples {
            for (acc, v) in row.iter_mut().zip(pv.row(s)) {
                *acc += v;
            }
        }
        row.iter_mut().for_each(|v| *v /= num_samples as f64);
        matrix.push(row);
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_blobs;
    use crate::models::{ClassifierConfig, PolicyConfig};

    fn tiny_config(seed: u64) -> TrainConfig {
        let mut c = TrainConfig::new(0.2, seed);
        c.model.classifier = ClassifierConfig {
            conv_channels: vec![],
            residual_blocks: 0,
            hidden: 16,
        };
        c.model.policy = PolicyConfig {
            conv_channels: vec![],
            ..PolicyConfig::default()
        };
        c.epochs = 3;
        c.batch_size = 32;
        c.transition_samples = 50;
        c
    }

    #[test]
    fn schedule_values() {
        let s = SelectionSchedule {
            noise_rate_estimate: 0.4,
            warmup_epochs: 2,
            ramp_epochs: 4,
        };
        assert_eq!(s.keep_ratio(0), 1.0);
        assert_eq!(s.keep_ratio(2), 1.0);
        assert!((s.keep_ratio(4) - 0.8).abs() < 1e-15);
        assert!((s.keep_ratio(100) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn fit_runs_and_is_deterministic() {
        let ds = make_synthetic_blobs(3, 40, 4, 4.0, 1).unwrap();
        let cfg = tiny_config(7);
        let a = fit(&ds, Some(&ds), &cfg).unwrap();
        let b = fit(&ds, Some(&ds), &cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.epochs.len(), 3);
        let m = a.report.transition_matrix.unwrap();
        for row in &m {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_output_transition_extracts_uniform_rows() {
        let ds = make_synthetic_blobs(4, 10, 3, 4.0, 1).unwrap();
        let cfg = tiny_config(0);
        let mut net = Network::new(&cfg.model, InputShape::from_feature_shape(&[3]).unwrap(), 4, 0).unwrap();
        net.transition.zero_output(&mut net.store);
        let reference = reference_batch(&ds, 20, 0);
        let m = extract_causal_transition(&net, &reference, 30, &cfg.merge, true, 1).unwrap();
        for row in m {
            for v in row {
                assert!((v - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn policy_gradient_is_zero_without_policy_term() {
        let ds = make_synthetic_blobs(3, 30, 4, 3.0, 2).unwrap();
        let mut cfg = tiny_config(1);
        cfg.weights.alpha2 = 0.0;
        struct Check(usize);
        impl Observer for Check {
            fn on_step(&mut self, s: &StepStats) {
                assert_eq!(s.policy_grad_sq_norm, [0.0, 0.0]);
                self.0 += 1;
            }
        }
        let mut c = Check(0);
        fit_with(&ds, None, &cfg, &mut c).unwrap();
        assert!(c.0 > 0);
    }
}
