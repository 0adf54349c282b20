//! Training objectives: co-teaching, decorrelation, transition cross-entropy,
//! reward, policy gradient and their weighted total, plus small-loss selection.
//!
//! Each objective comes in two forms: a plain function over values and a
//! `*_graph` function that records it on a [`Graph`] for differentiation.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Probabilities are clamped to this floor before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 0.1,
            alpha2: 0.1,
            alpha3: 0.1,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        alpha1: 0.0,
        alpha2: 0.0,
        alpha3: 0.0,
    };

    /// Defaults with the policy weight lowered for perturbed instances.
    pub fn perturbed() -> Self {
        LossWeights {
            alpha2: 0.01,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// The four scalar terms of the total objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub coteaching: f64,
    pub transition_ce: f64,
    pub policy_gradient: f64,
    pub decorrelation: f64,
}

/// Number of examples kept from a batch of `n`: `ceil(keep_ratio * n)`.
pub fn keep_count(n: usize, keep_ratio: f64) -> usize {
    // the small slack stops 0.3 * 10 = 3.0000000000000004 from rounding up to 4
    let raw = keep_ratio * n as f64;
    (libm::ceil(raw - 1e-9 * raw.max(1.0)) as usize).min(n)
}

/// Indices of the `ceil(keep_ratio * n)` smallest losses, in ascending index
/// order. Ties go to the lower index.
pub fn small_loss_select(losses: &[f64], keep_ratio: f64) -> Result<Vec<usize>> {
    if losses.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::invalid(format!("keep ratio {keep_ratio} outside (0, 1]")));
    }
    if losses.iter().any(|l| l.is_nan()) {
        return Err(Error::NonFinite("per-example loss"));
    }
    let m = keep_count(losses.len(), keep_ratio);
    if m == 0 {
        return Err(Error::EmptyConfidentSet {
            keep_ratio,
            batch: losses.len(),
        });
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut picked = order[..m].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

fn check_selection(len: usize, selected: &[usize]) -> Result<()> {
    if selected.is_empty() {
        return Err(Error::Empty("confident set"));
    }
    if let Some(&i) = selected.iter().find(|&&i| i >= len) {
        return Err(Error::invalid(format!("selected index {i} outside batch of {len}")));
    }
    Ok(())
}

/// Mean over `selected` of the elementwise minimum of the two twins' losses.
pub fn coteaching_loss(losses1: &[f64], losses2: &[f64], selected: &[usize]) -> Result<f64> {
    if losses1.len() != losses2.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} losses", losses1.len()),
            actual: format!("{}", losses2.len()),
        });
    }
    check_selection(losses1.len(), selected)?;
    let s: f64 = selected.iter().map(|&i| losses1[i].min(losses2[i])).sum();
    Ok(s / selected.len() as f64)
}

pub fn coteaching_loss_graph(g: &mut Graph, losses1: Var, losses2: Var, selected: &[usize]) -> Var {
    let a = g.select_rows(losses1, selected);
    let b = g.select_rows(losses2, selected);
    let m = g.minimum(a, b);
    g.mean(m)
}

/// Per-row cross-entropy of logits against integer labels, as a `[B]` vector.
pub fn per_example_ce_graph(g: &mut Graph, logits: Var, labels: &[usize]) -> Var {
    let lp = g.log_softmax(logits);
    let picked = g.gather(lp, labels);
    g.scale(picked, -1.0)
}

fn check_rows(p: &Tensor) -> Result<usize> {
    if p.shape().len() != 2 || p.rows() == 0 {
        return Err(Error::ShapeMismatch {
            expected: "non-empty [B, k] distributions".into(),
            actual: format!("{:?}", p.shape()),
        });
    }
    if !p.is_finite() {
        return Err(Error::NonFinite("distribution"));
    }
    Ok(p.cols())
}

/// Cross-entropy of each row against the uniform distribution,
/// `-(1/k) Σ_c log p_c`, averaged over rows. Also returns how many entries
/// were clamped at [`LOG_FLOOR`].
pub fn decorrelation_loss(probs: &Tensor) -> Result<(f64, usize)> {
    let k = check_rows(probs)?;
    let mut clamped = 0;
    let mut total = 0.0;
    for &p in probs.data() {
        if p <= LOG_FLOOR {
            clamped += 1;
        }
        total += libm::log(p.max(LOG_FLOOR));
    }
    Ok((-total / (probs.rows() * k) as f64, clamped))
}

pub fn decorrelation_loss_graph(g: &mut Graph, probs: Var) -> Var {
    let l = g.clamp_log(probs, LOG_FLOOR);
    let m = g.mean(l);
    g.scale(m, -1.0)
}

/// `-log p[label]` for each row.
pub fn per_instance_transition_ce(probs: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let k = check_rows(probs)?;
    if labels.len() != probs.rows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", probs.rows()),
            actual: format!("{}", labels.len()),
        });
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if y >= k {
                return Err(Error::LabelOutOfRange {
                    index: i,
                    label: y as i64,
                    num_classes: k,
                });
            }
            Ok(-libm::log(probs.row(i)[y].max(LOG_FLOOR)))
        })
        .collect()
}

/// Mean cross-entropy of predicted noisy-label distributions against the
/// observed noisy labels.
pub fn transition_ce_loss(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let ce = per_instance_transition_ce(probs, labels)?;
    Ok(ce.iter().sum::<f64>() / ce.len() as f64)
}

/// Per-instance `[B]` vector of `-log p[label]` on the graph.
pub fn per_instance_transition_ce_graph(g: &mut Graph, probs: Var, labels: &[usize]) -> Var {
    let l = g.clamp_log(probs, LOG_FLOOR);
    let picked = g.gather(l, labels);
    g.scale(picked, -1.0)
}

pub fn transition_ce_loss_graph(g: &mut Graph, probs: Var, labels: &[usize]) -> Var {
    let ce = per_instance_transition_ce_graph(g, probs, labels);
    g.mean(ce)
}

/// `1 / (1 + ce)`.
pub fn reward(ce: f64) -> Result<f64> {
    if !(ce >= 0.0) {
        return Err(Error::invalid(format!(
            "reward needs a nonnegative cross-entropy, got {ce}"
        )));
    }
    Ok(1.0 / (1.0 + ce))
}

/// `-(1/B) Σ R_i log π_i`.
pub fn policy_gradient_loss(rewards: &[f64], log_probs: &[f64]) -> Result<f64> {
    if rewards.len() != log_probs.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} log-probabilities", rewards.len()),
            actual: format!("{}", log_probs.len()),
        });
    }
    if rewards.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if log_probs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("action log-probability"));
    }
    let s: f64 = rewards.iter().zip(log_probs).map(|(r, l)| r * l).sum();
    Ok(-s / rewards.len() as f64)
}

/// Graph form; `rewards` are constants, so no gradient reaches them.
pub fn policy_gradient_loss_graph(g: &mut Graph, log_probs: Var, rewards: &[f64]) -> Var {
    let n = rewards.len() as f64;
    let w: Vec<f64> = rewards.iter().map(|r| -r / n).collect();
    g.dot_const(log_probs, &w)
}

/// `coteaching + α1·transition_ce + α2·policy_gradient + α3·decorrelation`.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    c.coteaching + w.alpha1 * c.transition_ce + w.alpha2 * c.policy_gradient + w.alpha3 * c.decorrelation
}

/// Graph form of [`total_loss`]. Terms with zero weight, or absent, are left
/// off the tape entirely.
pub fn total_loss_graph(
    g: &mut Graph,
    coteaching: Var,
    transition_ce: Option<Var>,
    policy_gradient: Option<Var>,
    decorrelation: Option<Var>,
    w: &LossWeights,
) -> Var {
    let mut total = coteaching;
    for (term, alpha) in [
        (transition_ce, w.alpha1),
        (policy_gradient, w.alpha2),
        (decorrelation, w.alpha3),
    ] {
        if let Some(t) = term {
            if alpha != 0.0 {
                let s = g.scale(t, alpha);
                total = g.add(total, s);
            }
        }
    }
    total
}
