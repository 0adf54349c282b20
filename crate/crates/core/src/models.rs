//! The four learnable components and the Gumbel-Softmax merge.
//!
//! * separation model `g1`: a bias-free 1x1 convolution, identity-initialised;
//! * classifier `f`: strided CNN (optionally with residual blocks) or MLP;
//! * policy model `g2`: strided convolutions and a linear head to `k` outputs;
//! * transition model `f_tran`: MLP over a `k`-vector concatenated with `k`
//!   Gaussian noise values.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{softmax_rows_in_place, Graph, Var};
use crate::nn::{Conv2d, Linear, ParamId, ParamStore};
use crate::rng;
use crate::tensor::Tensor;

/// Rows per forward pass on the inference path.
pub const INFERENCE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn from_feature_shape(shape: &[usize]) -> Result<Self> {
        let (channels, height, width) = crate::data::image_shape(shape)?;
        Ok(InputShape {
            channels,
            height,
            width,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    /// One 3x3 stride-2 convolution per entry; empty gives an MLP.
    #[serde(default = "ClassifierConfig::default_channels")]
    pub conv_channels: Vec<usize>,
    /// 3x3 residual blocks appended after the strided stack.
    #[serde(default)]
    pub residual_blocks: usize,
    #[serde(default = "ClassifierConfig::default_hidden")]
    pub hidden: usize,
}

impl ClassifierConfig {
    fn default_channels() -> Vec<usize> {
        vec![16, 32]
    }
    fn default_hidden() -> usize {
        256
    }
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            conv_channels: Self::default_channels(),
            residual_blocks: 0,
            hidden: Self::default_hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default = "PolicyConfig::default_channels")]
    pub conv_channels: Vec<usize>,
    #[serde(default = "PolicyConfig::default_kernel")]
    pub kernel: usize,
    #[serde(default = "PolicyConfig::default_stride")]
    pub stride: usize,
}

impl PolicyConfig {
    fn default_channels() -> Vec<usize> {
        vec![32, 64, 128, 256]
    }
    fn default_kernel() -> usize {
        3
    }
    fn default_stride() -> usize {
        2
    }
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            conv_channels: Self::default_channels(),
            kernel: 3,
            stride: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionConfig {
    /// Hidden width as a multiple of `k`.
    #[serde(default = "TransitionConfig::default_width")]
    pub width_multiplier: usize,
    /// Start with a zero output layer, so initial predictions are uniform.
    #[serde(default)]
    pub zero_init_output: bool,
}

impl TransitionConfig {
    fn default_width() -> usize {
        4
    }
}

impl Default for TransitionConfig {
    fn default() -> Self {
        TransitionConfig {
            width_multiplier: 4,
            zero_init_output: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub transition: TransitionConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classifier.hidden == 0 || self.classifier.conv_channels.contains(&0) {
            return Err(Error::invalid("classifier widths must be positive"));
        }
        if self.policy.conv_channels.contains(&0) || self.policy.kernel == 0 || self.policy.stride == 0 {
            return Err(Error::invalid("policy widths, kernel and stride must be positive"));
        }
        if self.transition.width_multiplier == 0 {
            return Err(Error::invalid("transition width multiplier must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationModel {
    pub conv: Conv2d,
}

impl SeparationModel {
    /// 1x1 channel mix initialised to the identity.
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let conv = Conv2d::new(store, name, channels, channels, 1, 1, 0, false, rng);
        let w = store.value_mut(conv.weight);
        w.fill(0.0);
        for c in 0..channels {
            w.data_mut()[c * channels + c] = 1.0;
        }
        SeparationModel { conv }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        self.conv.forward(g, store, x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.conv.params()
    }
}

/// `X1 = g1(X)` for a `[B, C, H, W]` tensor.
pub fn separate(model: &SeparationModel, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
    let c = model.conv.in_ch;
    if x.shape().len() != 4 || x.shape()[1] != c {
        return Err(Error::ShapeMismatch {
            expected: format!("[B, {c}, H, W]"),
            actual: format!("{:?}", x.shape()),
        });
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = model.forward(&mut g, store, xv);
    Ok(g.value(y).clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub convs: Vec<Conv2d>,
    pub blocks: Vec<ResidualBlock>,
    pub hidden: Linear,
    pub output: Linear,
    pub flat_dim: usize,
}

impl Classifier {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &ClassifierConfig,
        input: InputShape,
        k: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (mut ch, mut h, mut w) = (input.channels, input.height, input.width);
        let mut convs = Vec::new();
        for (i, &out) in cfg.conv_channels.iter().enumerate() {
            let conv = Conv2d::new(store, &format!("{name}.conv{i}"), ch, out, 3, 2, 1, true, rng);
            h = conv.out_size(h);
            w = conv.out_size(w);
            ch = out;
            convs.push(conv);
        }
        let blocks = (0..cfg.residual_blocks)
            .map(|i| ResidualBlock {
                conv1: Conv2d::new(store, &format!("{name}.block{i}.conv1"), ch, ch, 3, 1, 1, true, rng),
                conv2: Conv2d::new(store, &format!("{name}.block{i}.conv2"), ch, ch, 3, 1, 1, true, rng),
            })
            .collect();
        let flat_dim = ch * h * w;
        let hidden = Linear::new(store, &format!("{name}.fc"), flat_dim, cfg.hidden, rng);
        let output = Linear::new(store, &format!("{name}.out"), cfg.hidden, k, rng);
        Classifier {
            convs,
            blocks,
            hidden,
            output,
            flat_dim,
        }
    }

    /// Logits `[B, k]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x1: Var) -> Var {
        let batch = g.value(x1).shape()[0];
        let mut h = x1;
        for conv in &self.convs {
            let y = conv.forward(g, store, h);
            h = g.relu(y);
        }
        for block in &self.blocks {
            let a = block.conv1.forward(g, store, h);
            let a = g.relu(a);
            let b = block.conv2.forward(g, store, a);
            let s = g.add(b, h);
            h = g.relu(s);
        }
        let flat = g.reshape(h, &[batch, self.flat_dim]);
        let z = self.hidden.forward(g, store, flat);
        let z = g.relu(z);
        self.output.forward(g, store, z)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.convs.iter().flat_map(Conv2d::params).collect();
        for b in &self.blocks {
            p.extend(b.conv1.params());
            p.extend(b.conv2.params());
        }
        p.extend(self.hidden.params());
        p.extend(self.output.params());
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub convs: Vec<Conv2d>,
    pub head: Linear,
    pub flat_dim: usize,
}

impl PolicyModel {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &PolicyConfig,
        input: InputShape,
        k: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (mut ch, mut h, mut w) = (input.channels, input.height, input.width);
        let mut convs = Vec::new();
        for (i, &out) in cfg.conv_channels.iter().enumerate() {
            let conv = Conv2d::new(
                store,
                &format!("{name}.conv{i}"),
                ch,
                out,
                cfg.kernel,
                cfg.stride,
                cfg.kernel / 2,
                true,
                rng,
            );
            h = conv.out_size(h);
            w = conv.out_size(w);
            ch = out;
            convs.push(conv);
        }
        let flat_dim = ch * h * w;
        let head = Linear::new(store, &format!("{name}.head"), flat_dim, k, rng);
        PolicyModel { convs, head, flat_dim }
    }

    /// `X2 = g2(X)`, shape `[B, k]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let batch = g.value(x).shape()[0];
        let mut h = x;
        for conv in &self.convs {
            let y = conv.forward(g, store, h);
            h = g.relu(y);
        }
        let flat = g.reshape(h, &[batch, self.flat_dim]);
        self.head.forward(g, store, flat)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.convs.iter().flat_map(Conv2d::params).collect();
        p.extend(self.head.params());
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub layers: [Linear; 3],
    pub num_classes: usize,
}

impl TransitionModel {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &TransitionConfig, k: usize, rng: &mut impl Rng) -> Self {
        let width = cfg.width_multiplier * k;
        let layers = [
            Linear::new(store, &format!("{name}.fc0"), 2 * k, width, rng),
            Linear::new(store, &format!("{name}.fc1"), width, width, rng),
            Linear::new(store, &format!("{name}.fc2"), width, k, rng),
        ];
        let model = TransitionModel { layers, num_classes: k };
        if cfg.zero_init_output {
            model.zero_output(store);
        }
        model
    }

    pub fn zero_output(&self, store: &mut ParamStore) {
        for id in self.layers[2].params() {
            store.value_mut(id).fill(0.0);
        }
    }

    /// Logits for `[B, k]` inputs concatenated with `[B, k]` noise.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: Var, noise: &Tensor) -> Var {
        self.forward_with(g, store, input, noise, true)
    }

    /// As [`forward`](Self::forward); `trainable == false` keeps the model's own
    /// parameters off the gradient path while still passing gradients to `input`.
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, input: Var, noise: &Tensor, trainable: bool) -> Var {
        let z = g.constant(noise.clone());
        let mut h = g.concat_cols(input, z);
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward_with(g, store, h, trainable);
            if i < 2 {
                h = g.relu(h);
            }
        }
        h
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::params).collect()
    }
}

/// `[rows, k]` standard normal draws.
pub fn gaussian_noise(rows: usize, k: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * k).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_vec(&[rows, k], data).unwrap()
}

/// `[rows, k]` standard Gumbel draws.
pub fn gumbel_noise(rows: usize, k: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * k)
        .map(|_| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            -libm::log(-libm::log(u))
        })
        .collect();
    Tensor::from_vec(&[rows, k], data).unwrap()
}

/// `f_tran(concat(v, z))` with `z ~ N(0, I_k)` drawn from `seed`.
pub fn transition_forward(model: &TransitionModel, store: &ParamStore, v: &[f64], seed: u64) -> Result<Vec<f64>> {
    let k = model.num_classes;
    if v.len() != k {
        return Err(Error::ShapeMismatch {
            expected: format!("{k}-vector"),
            actual: format!("{}", v.len()),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("transition input"));
    }
    let noise = gaussian_noise(1, k, &mut rng::seeded(seed));
    let mut g = Graph::new();
    let input = g.constant(Tensor::from_vec(&[1, k], v.to_vec())?);
    let out = model.forward(&mut g, store, input, &noise);
    Ok(g.value(out).data().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureAnnealing {
    pub final_temperature: f64,
    /// Epochs over which the temperature moves geometrically to `final_temperature`.
    pub epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeConfig {
    #[serde(default = "MergeConfig::default_beta")]
    pub beta: f64,
    #[serde(default = "MergeConfig::default_temperature")]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annealing: Option<TemperatureAnnealing>,
}

impl MergeConfig {
    fn default_beta() -> f64 {
        0.2
    }
    fn default_temperature() -> f64 {
        1.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!(
                "merge beta {} must be finite and >= 0",
                self.beta
            )));
        }
        let final_t = self.annealing.map_or(self.temperature, |a| a.final_temperature);
        if !(self.temperature > 0.0 && final_t > 0.0) {
            return Err(Error::invalid("Gumbel-Softmax temperature must be positive"));
        }
        Ok(())
    }

    pub fn temperature_at(&self, epoch: usize) -> f64 {
        match self.annealing {
            Some(a) if a.epochs > 0 => {
                let t = (epoch.min(a.epochs)) as f64 / a.epochs as f64;
                self.temperature * libm::pow(a.final_temperature / self.temperature, t)
            }
            _ => self.temperature,
        }
    }
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            beta: 0.2,
            temperature: 1.0,
            annealing: None,
        }
    }
}

/// Merge logits `(y + beta * x2 + gumbel) / tau` for one row.
pub fn merge_logits(y: &[f64], x2: &[f64], gumbel: &[f64], beta: f64, tau: f64) -> Vec<f64> {
    y.iter()
        .zip(x2)
        .zip(gumbel)
        .map(|((y, x), g)| (y + beta * x + g) / tau)
        .collect()
}

/// `softmax((y + beta * x2 + G) / tau)` with Gumbel noise `G` drawn from `seed`.
pub fn merge(y: &[f64], x2: &[f64], cfg: &MergeConfig, seed: u64) -> Result<Vec<f64>> {
    if !(cfg.temperature > 0.0) {
        return Err(Error::invalid("Gumbel-Softmax temperature must be positive"));
    }
    if y.len() != x2.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}-vector", y.len()),
            actual: format!("{}", x2.len()),
        });
    }
    if x2.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("merge input"));
    }
    let k = y.len();
    let gumbel = gumbel_noise(1, k, &mut rng::seeded(seed));
    let mut out = merge_logits(y, x2, gumbel.data(), cfg.beta, cfg.temperature);
    softmax_rows_in_place(&mut out, k);
    Ok(out)
}

/// Graph form of the merge over a batch. `x2` may be `None` (merge of `y` alone).
/// Returns the merged distribution and the pre-softmax logits.
pub fn merge_graph(g: &mut Graph, y: &Tensor, x2: Option<Var>, gumbel: &Tensor, beta: f64, tau: f64) -> (Var, Tensor) {
    let mut base = y.clone();
    base.add_assign(gumbel);
    let mut a = g.constant(base);
    if let Some(x2) = x2 {
        let s = g.scale(x2, beta);
        a = g.add(a, s);
    }
    let a = g.scale(a, 1.0 / tau);
    let logits = g.value(a).clone();
    (g.softmax(a), logits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Separation,
    Classifier,
    Policy,
    Transition,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::Separation,
        Component::Classifier,
        Component::Policy,
        Component::Transition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Separation => "separation",
            Component::Classifier => "classifier",
            Component::Policy => "policy",
            Component::Transition => "transition",
        }
    }
}

/// One twin: the four components over a single parameter store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: ModelConfig,
    pub input: InputShape,
    pub num_classes: usize,
    pub store: ParamStore,
    pub separation: SeparationModel,
    pub classifier: Classifier,
    pub policy: PolicyModel,
    pub transition: TransitionModel,
}

impl Network {
    pub fn new(config: &ModelConfig, input: InputShape, k: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if k < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if input.numel() == 0 {
            return Err(Error::invalid("input shape must be non-empty"));
        }
        let mut r = rng::seeded(seed);
        let mut store = ParamStore::new();
        let separation = SeparationModel::new(&mut store, "separation", input.channels, &mut r);
        let classifier = Classifier::new(&mut store, "classifier", &config.classifier, input, k, &mut r);
        let policy = PolicyModel::new(&mut store, "policy", &config.policy, input, k, &mut r);
        let transition = TransitionModel::new(&mut store, "transition", &config.transition, k, &mut r);
        Ok(Network {
            config: config.clone(),
            input,
            num_classes: k,
            store,
            separation,
            classifier,
            policy,
            transition,
        })
    }

    pub fn params(&self, component: Component) -> Vec<ParamId> {
        match component {
            Component::Separation => self.separation.params(),
            Component::Classifier => self.classifier.params(),
            Component::Policy => self.policy.params(),
            Component::Transition => self.transition.params(),
        }
    }

    /// Parameter names and values of one component, in construction order.
    pub fn component_tensors(&self, component: Component) -> Vec<(String, Tensor)> {
        self.params(component)
            .into_iter()
            .map(|id| (self.store.name(id).into(), self.store.value(id).clone()))
            .collect()
    }

    /// Class predictions; reads only the separation model and the classifier.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        infer(&self.separation, &self.classifier, &self.store, x)
    }

    /// `X2 = g2(X)` values for a `[B, C, H, W]` batch.
    pub fn policy_outputs(&self, x: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = self.policy.forward(&mut g, &self.store, xv);
        g.value(y).clone()
    }
}

/// `argmax f(g1(X))` in chunks of [`INFERENCE_CHUNK`] rows; no noise is drawn.
pub fn infer(
    separation: &SeparationModel,
    classifier: &Classifier,
    store: &ParamStore,
    x: &Tensor,
) -> Result<Vec<usize>> {
    Ok(classifier_logits(separation, classifier, store, x)?.argmax_rows())
}

/// `f(g1(X))` logits, `[B, k]`.
pub fn classifier_logits(
    separation: &SeparationModel,
    classifier: &Classifier,
    store: &ParamStore,
    x: &Tensor,
) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != 4 || shape[1] != separation.conv.in_ch {
        return Err(Error::ShapeMismatch {
            expected: format!("[B, {}, H, W]", separation.conv.in_ch),
            actual: format!("{shape:?}"),
        });
    }
    let n = shape[0];
    let per: usize = shape[1..].iter().product();
    let mut out = Vec::new();
    let mut k = 0;
    for start in (0..n).step_by(INFERENCE_CHUNK) {
        let end = (start + INFERENCE_CHUNK).min(n);
        let mut cshape = shape.to_vec();
        cshape[0] = end - start;
        let chunk = Tensor::from_vec(&cshape, x.data()[start * per..end * per].to_vec())?;
        let mut g = Graph::new();
        let xv = g.constant(chunk);
        let x1 = separation.forward(&mut g, store, xv);
        let logits = classifier.forward(&mut g, store, x1);
        let v = g.value(logits);
        if !v.is_finite() {
            return Err(Error::NonFinite("classifier logits"));
        }
        k = v.cols();
        out.extend_from_slice(v.data());
    }
    Tensor::from_vec(&[n, k], out)
}
