//! Parameter storage, layers and the Adam optimizer.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    #[serde(skip)]
    grad: Option<Tensor>,
}

/// Flat, named parameter storage shared by every module of a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            grad: Some(Tensor::zeros(value.shape())),
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        self.entries[id.0].grad.as_ref().expect("gradient buffer")
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        let e = &mut self.entries[id.0];
        e.grad.get_or_insert_with(|| Tensor::zeros(e.value.shape()))
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            match &mut e.grad {
                Some(g) => g.fill(0.0),
                None => e.grad = Some(Tensor::zeros(e.value.shape())),
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}

fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Fully connected layer, weight stored `[in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform init in `±1/sqrt(in_dim)` for weight and bias.
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / libm::sqrt(in_dim as f64);
        let weight = store.add(
            alloc::format!("{name}.weight"),
            uniform_tensor(&[in_dim, out_dim], bound, rng),
        );
        let bias = store.add(alloc::format!("{name}.bias"), uniform_tensor(&[out_dim], bound, rng));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        self.forward_with(g, store, x, true)
    }

    /// With `trainable == false` the weights enter as constants and collect no gradient.
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, x: Var, trainable: bool) -> Var {
        let (w, b) = if trainable {
            (g.param(store, self.weight), g.param(store, self.bias))
        } else {
            (
                g.constant(store.value(self.weight).clone()),
                g.constant(store.value(self.bias).clone()),
            )
        };
        let y = g.matmul(x, w);
        g.add_row_bias(y, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Square-kernel 2-D convolution, weight stored `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        let weight = store.add(
            alloc::format!("{name}.weight"),
            uniform_tensor(&[out_ch, in_ch, kernel, kernel], bound, rng),
        );
        let bias = bias.then(|| store.add(alloc::format!("{name}.bias"), uniform_tensor(&[out_ch], bound, rng)));
        Conv2d {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let y = g.conv2d(x, w, self.stride, self.pad);
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_channel_bias(y, b)
            }
            None => y,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        core::iter::once(self.weight).chain(self.bias).collect()
    }

    /// Output spatial size for an input of side `n`.
    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default = "AdamConfig::default_beta1")]
    pub beta1: f64,
    #[serde(default = "AdamConfig::default_beta2")]
    pub beta2: f64,
    #[serde(default = "AdamConfig::default_eps")]
    pub eps: f64,
}

impl AdamConfig {
    fn default_beta1() -> f64 {
        0.9
    }
    fn default_beta2() -> f64 {
        0.999
    }
    fn default_eps() -> f64 {
        1e-8
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let m: Vec<Tensor> = store.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect();
        Adam {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of the parameters in `ids` from their gradients.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        for &id in ids {
            let grad = store.grad(id).data().to_vec();
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let value = store.value_mut(id);
            for (((p, g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= c.learning_rate * mhat / (libm::sqrt(vhat) + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::from_vec(&[2], alloc::vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 0.1,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..500 {
            store.zero_grad();
            let mut g = Graph::new();
            let x = g.param(&store, id);
            let sq = g.mul(x, x);
            let l = g.sum(sq);
            g.backward(l);
            g.accumulate_into(&mut store);
            opt.step(&mut store, &[id]);
        }
        assert!(store.value(id).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::from_vec(&[3], alloc::vec![0.5, -1.0, 2.0]).unwrap());
        let before = store.value(id).clone();
        let mut opt = Adam::new(AdamConfig::default(), &store);
        store.zero_grad();
        opt.step(&mut store, &[id]);
        assert_eq!(store.value(id), &before);
    }

    #[test]
    fn linear_layer_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "fc", 4, 3, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[5, 4]));
        let y = lin.forward(&mut g, &store, x);
        assert_eq!(g.value(y).shape(), &[5, 3]);
        assert_eq!(store.numel(), 15);
    }
}
