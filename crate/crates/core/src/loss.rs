//! Task loss and the saliency hinge penalties.
//!
//! For each regularized level the per-token saliency is the gradient of the
//! logit with respect to that level, summed over the embedding dimension
//! (the decision level is already one value per token). Marked tokens with
//! negative saliency are penalized linearly:
//!
//! `C = L + λ Σ_level Σ_i max(0, -Z_i G_i)`
//!
//! The gradients are recorded with `create_graph`, so `C` can be
//! differentiated with respect to the parameters.

use alloc::vec::Vec;

use crate::autodiff::{grad, Array, Tensor};
use crate::data::Example;
use crate::model::ForwardTrace;

/// A representation whose saliency can be regularized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    /// Word embeddings `W`.
    Word,
    /// Intermediate representation `I`.
    Intermediate,
    /// Decision representation `D_dim`.
    Decision,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Word, Level::Intermediate, Level::Decision];

    pub fn name(self) -> &'static str {
        match self {
            Level::Word => "word",
            Level::Intermediate => "intermediate",
            Level::Decision => "decision",
        }
    }

    pub fn parse(s: &str) -> Option<Level> {
        Level::ALL.into_iter().find(|l| l.name() == s)
    }

    pub fn tensor(self, trace: &ForwardTrace) -> &Tensor {
        match self {
            Level::Word => &trace.word,
            Level::Intermediate => &trace.intermediate,
            Level::Decision => &trace.decision,
        }
    }
}

/// Saliency regularization settings. No levels means plain training.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyConfig {
    pub lambda: f64,
    pub levels: Vec<Level>,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            levels: Vec::new(),
        }
    }
}

impl SaliencyConfig {
    /// All three levels with a shared `lambda`.
    pub fn all_levels(lambda: f64) -> Self {
        Self {
            lambda,
            levels: Level::ALL.to_vec(),
        }
    }

    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn enabled(&self) -> bool {
        !self.levels.is_empty()
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `label`, in the
/// overflow-free form `softplus(logit) - y * logit`.
pub fn task_loss(logit: &Tensor, label: bool) -> Tensor {
    let sp = logit.softplus();
    if label {
        sp.sub(logit)
    } else {
        sp
    }
}

fn per_token(gradient: Tensor) -> Tensor {
    match gradient.shape().len() {
        2 => gradient.sum_last_axis(),
        _ => gradient,
    }
}

/// Per-token saliency `G` of `logit` with respect to one level: row sums of
/// the gradient for `[n, d]` tensors, the gradient itself for `[n]`.
/// A tensor the logit does not depend on gives all zeros.
pub fn token_saliency(level_tensor: &Tensor, logit: &Tensor, create_graph: bool) -> Tensor {
    per_token(grad(logit, &[level_tensor], create_graph).remove(0))
}

/// [`token_saliency`] for several levels from a single backward pass.
pub fn saliency_gradients(trace: &ForwardTrace, levels: &[Level], create_graph: bool) -> Vec<Tensor> {
    let targets: Vec<&Tensor> = levels.iter().map(|l| l.tensor(trace)).collect();
    grad(&trace.logit, &targets, create_graph)
        .into_iter()
        .map(per_token)
        .collect()
}

/// `lambda * Σ_i max(0, -Z_i G_i)`. Panics when the lengths differ.
pub fn hinge_penalty(saliency: &Tensor, rationale: &[bool], lambda: f64) -> Tensor {
    assert_eq!(
        saliency.shape(),
        [rationale.len()],
        "saliency and rationale lengths differ"
    );
    let z = Array::from_vec(rationale.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect());
    saliency
        .mul(&Tensor::constant(z))
        .neg()
        .relu()
        .sum_all()
        .scale(lambda)
}

/// Rationale mask truncated or zero-padded to `len` positions.
pub fn padded_rationale(example: &Example, len: usize) -> Vec<bool> {
    (0..len)
        .map(|i| example.rationale.get(i).copied().unwrap_or(false))
        .collect()
}

/// The training cost of one example and its parts.
#[derive(Clone, Debug)]
pub struct Cost {
    pub total: Tensor,
    pub task: f64,
    /// Penalty per enabled level, in configuration order.
    pub penalties: Vec<f64>,
}

impl Cost {
    pub fn penalty(&self) -> f64 {
        self.penalties.iter().sum()
    }
}

/// Task loss plus one hinge term per enabled level, all sharing `lambda`.
pub fn total_cost(trace: &ForwardTrace, example: &Example, cfg: &SaliencyConfig) -> Cost {
    let task = task_loss(&trace.logit, example.label);
    let task_value = task.item();
    if !cfg.enabled() {
        return Cost {
            total: task,
            task: task_value,
            penalties: Vec::new(),
        };
    }
    let z = padded_rationale(example, trace.decision.shape()[0]);
    let mut total = task;
    let mut penalties = Vec::with_capacity(cfg.levels.len());
    for g in saliency_gradients(trace, &cfg.levels, true) {
        let p = hinge_penalty(&g, &z, cfg.lambda);
        penalties.push(p.item());
        total = total.add(&p);
    }
    Cost {
        total,
        task: task_value,
        penalties,
    }
}
