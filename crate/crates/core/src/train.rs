//! Mini-batch Adam over the saliency-regularized cost.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_check_many, grad, Array, GradCheck, Graph};
use crate::data::Example;
use crate::eval::{classification_metrics, predict_all, MetricsReport};
use crate::loss::{total_cost, SaliencyConfig};
use crate::model::{encode, BoundParams, ModelConfig, ModelParams};
use crate::{par, Error};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// Fails without touching anything if a gradient is not finite, naming the
/// offending tensor.
pub fn adam_step(
    params: &mut [(&str, &mut Array)],
    grads: &[Array],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), Error> {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    for ((name, p), g) in params.iter().zip(grads) {
        assert_eq!(p.shape(), g.shape(), "gradient shape for {name}");
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                tensor: String::from(*name),
            });
        }
    }
    if state.first.is_empty() {
        state.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.second = state.first.clone();
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(cfg.beta1, t);
    let c2 = 1.0 - libm::pow(cfg.beta2, t);
    for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for (j, (x, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *x -= cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + cfg.epsilon);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Drop probability on the classifier input.
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub saliency: SaliencyConfig,
    /// Stop after this many epochs without a dev F1 improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 32,
            dropout: 0.5,
            epochs: 30,
            seed: 0,
            saliency: SaliencyConfig::default(),
            patience: Some(5),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.adam.learning_rate.is_nan() || self.adam.learning_rate <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.saliency.lambda.is_nan() || self.saliency.lambda < 0.0 {
            return Err(Error::invalid("lambda must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_task_loss: f64,
    pub mean_penalty: f64,
    /// Classification metrics on the dev set, when one was given.
    pub dev: Option<MetricsReport>,
    /// Seconds since training started, from the caller's clock.
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: TrainLog,
}

/// Cost value and parameter gradients for one example.
#[derive(Clone, Debug)]
pub struct ExampleGradient {
    pub task: f64,
    pub penalty: f64,
    pub grads: Vec<Array>,
}

/// Gradient of the per-example cost with respect to every parameter.
/// Unmarked examples skip the saliency graph: their hinge terms are
/// identically zero.
pub fn example_gradient(
    example: &Example,
    params: &ModelParams,
    config: &ModelConfig,
    saliency: &SaliencyConfig,
    dropout_mask: Option<&Array>,
) -> Result<ExampleGradient, Error> {
    let graph = Graph::new();
    let bound = params.bind(&graph);
    let trace = encode(example, &bound, config, dropout_mask)?;
    let disabled = SaliencyConfig {
        lambda: saliency.lambda,
        levels: Vec::new(),
    };
    let cfg = if example.marked() == 0 { &disabled } else { saliency };
    let cost = total_cost(&trace, example, cfg);
    let grads = grad(&cost.total, &bound.leaves(), false)
        .into_iter()
        .map(|g| g.to_array())
        .collect();
    Ok(ExampleGradient {
        task: cost.task,
        penalty: cost.penalty(),
        grads,
    })
}

/// Compares the gradient of the full cost of `example` (no dropout) with
/// central differences over every parameter coordinate.
pub fn cost_gradcheck(
    example: &Example,
    params: &ModelParams,
    config: &ModelConfig,
    saliency: &SaliencyConfig,
    eps: f64,
) -> Result<GradCheck, Error> {
    // Surface input errors before the checker starts calling the closure.
    encode(example, &params.bind(&Graph::new()), config, None)?;
    let values: Vec<Array> = params.named().into_iter().map(|(_, a)| a.clone()).collect();
    let windows = config.window_sizes.len();
    Ok(finite_diff_check_many(
        |leaves| {
            let bound = BoundParams::from_leaves(leaves, windows);
            let trace = encode(example, &bound, config, None).expect("checked above");
            total_cost(&trace, example, saliency).total
        },
        &values,
        eps,
    ))
}

fn dropout_mask(seed: u64, len: usize, rate: f64) -> Array {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 - rate;
    Array::from_vec(
        (0..len)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect(),
    )
}

/// [`train_timed`] without a clock.
pub fn train(
    init: ModelParams,
    config: &ModelConfig,
    train_set: &[Example],
    dev_set: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, Error> {
    train_timed(init, config, train_set, dev_set, cfg, &|| 0.0)
}

/// Trains from `init`, returning the parameters with the best dev F1 (the
/// last ones when `dev_set` is empty). Deterministic given `cfg.seed`.
pub fn train_timed(
    init: ModelParams,
    config: &ModelConfig,
    train_set: &[Example],
    dev_set: &[Example],
    cfg: &TrainConfig,
    clock: &dyn Fn() -> f64,
) -> Result<TrainOutcome, Error> {
    cfg.validate()?;
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let start = clock();
    let names: Vec<String> = init.named().into_iter().map(|(n, _)| n).collect();
    let mut params = init;
    let mut state = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0;
    let width = config.classifier_width();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut task_sum = 0.0;
        let mut penalty_sum = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let jobs: Vec<(usize, Option<u64>)> = batch
                .iter()
                .map(|&i| (i, (cfg.dropout > 0.0).then(|| rng.gen::<u64>())))
                .collect();
            let results = par::map(&jobs, |&(i, seed)| {
                let mask = seed.map(|s| dropout_mask(s, width, cfg.dropout));
                example_gradient(&train_set[i], &params, config, &cfg.saliency, mask.as_ref())
            });
            let mut sum: Option<Vec<Array>> = None;
            let mut batch_cost = 0.0;
            for r in results {
                let r = r?;
                task_sum += r.task;
                penalty_sum += r.penalty;
                batch_cost += r.task + r.penalty;
                match &mut sum {
                    None => sum = Some(r.grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&r.grads) {
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            if !batch_cost.is_finite() {
                return Err(Error::NonFiniteCost {
                    epoch,
                    batch: batch_no,
                });
            }
            let scale = 1.0 / batch.len() as f64;
            let mean: Vec<Array> = sum
                .expect("nonempty batch")
                .into_iter()
                .map(|g| g.map(|v| v * scale))
                .collect();
            let mut arrays = params.arrays_mut();
            let mut named: Vec<(&str, &mut Array)> = names
                .iter()
                .map(String::as_str)
                .zip(arrays.drain(..))
                .collect();
            adam_step(&mut named, &mean, &mut state, &cfg.adam)?;
            for (name, a) in named {
                if !a.is_finite() {
                    return Err(Error::NonFiniteParameter {
                        tensor: String::from(name),
                    });
                }
            }
        }

        let n = train_set.len() as f64;
        let dev = if dev_set.is_empty() {
            None
        } else {
            let predicted: Vec<bool> = predict_all(dev_set, &params, config)?
                .iter()
                .map(|p| p.label)
                .collect();
            let labels: Vec<bool> = dev_set.iter().map(|e| e.label).collect();
            Some(classification_metrics(&predicted, &labels)?)
        };
        let dev_f1 = dev.as_ref().map(|m| m.f1);
        log.epochs.push(EpochLog {
            epoch,
            mean_task_loss: task_sum / n,
            mean_penalty: penalty_sum / n,
            dev,
            wall_clock_secs: clock() - start,
        });

        if let Some(f1) = dev_f1 {
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                best = Some((f1, params.clone()));
                log.best_epoch = Some(epoch);
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience.is_some_and(|p| stale >= p) {
                    break;
                }
            }
        }
    }

    let params = match best {
        Some((_, p)) => p,
        None => {
            log.best_epoch = log.epochs.last().map(|e| e.epoch);
            params
        }
    };
    Ok(TrainOutcome { params, log })
}
