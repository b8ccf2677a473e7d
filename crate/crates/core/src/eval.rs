//! Classification metrics, saliency accuracy, the one-sided McNemar test,
//! top-k salient words and the rationale-deletion verification protocol.
//!
//! Percentages are on a 0–100 scale throughout.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Graph;
use crate::data::{strip_rationale, Example, Removal};
use crate::loss::{saliency_gradients, Level};
use crate::model::{encode, predict, ModelConfig, ModelParams};
use crate::{par, Error};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Classification quality plus saliency accuracy per level.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Set when precision + recall is zero and F1 was defined as 0.
    pub f1_undefined: bool,
    /// `(level, s_acc)`; `None` when no example had a marked token.
    pub saliency_accuracy: Vec<(Level, Option<f64>)>,
}

impl MetricsReport {
    pub fn saliency(&self, level: Level) -> Option<f64> {
        self.saliency_accuracy
            .iter()
            .find(|(l, _)| *l == level)
            .and_then(|(_, v)| *v)
    }
}

/// Harmonic mean of precision and recall, `None` when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let sum = precision + recall;
    (sum > 0.0).then(|| 2.0 * precision * recall / sum)
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn counts(predictions: &[bool], labels: &[bool]) -> Counts {
    let mut c = Counts::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Precision, recall, F1 and accuracy. Saliency fields are left empty.
pub fn classification_metrics(predictions: &[bool], labels: &[bool]) -> Result<MetricsReport, Error> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::invalid("predictions and labels must be equally long and nonempty"));
    }
    let c = counts(predictions, labels);
    let precision = percent(c.tp, c.tp + c.fp);
    let recall = percent(c.tp, c.tp + c.fn_);
    let f1 = f1_score(precision, recall);
    Ok(MetricsReport {
        counts: c,
        precision,
        recall,
        f1: f1.unwrap_or(0.0),
        accuracy: percent(c.tp + c.tn, c.total()),
        f1_undefined: f1.is_none(),
        saliency_accuracy: Vec::new(),
    })
}

/// Marked positions and how many of them had strictly positive saliency.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SaliencyTally {
    pub positive: usize,
    pub marked: usize,
}

impl SaliencyTally {
    pub fn of(saliency: &[f64], rationale: &[bool]) -> Self {
        assert_eq!(saliency.len(), rationale.len(), "saliency and rationale lengths differ");
        let mut t = Self::default();
        for (&g, &z) in saliency.iter().zip(rationale) {
            if z {
                t.marked += 1;
                if g > 0.0 {
                    t.positive += 1;
                }
            }
        }
        t
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            positive: self.positive + other.positive,
            marked: self.marked + other.marked,
        }
    }

    /// `100 * positive / marked`, `None` when nothing is marked.
    pub fn accuracy(&self) -> Option<f64> {
        (self.marked > 0).then(|| percent(self.positive, self.marked))
    }
}

/// Share of marked tokens whose saliency is strictly positive, or `None`
/// for an unmarked example (which is then left out of any aggregate).
pub fn saliency_accuracy(saliency: &[f64], rationale: &[bool]) -> Option<f64> {
    SaliencyTally::of(saliency, rationale).accuracy()
}

/// Exact one-sided McNemar test that model B beats model A.
///
/// `b` counts examples only A got right, `c` those only B got right. Returns
/// `P[X >= c]` for `X ~ Binomial(b + c, 1/2)`.
pub fn mcnemar_one_sided(b: u64, c: u64) -> f64 {
    let n = b + c;
    assert!(n >= 1, "McNemar test needs at least one discordant pair");
    if n <= 1000 {
        // 2^-n is exact here and every pmf step multiplies by a small integer
        // ratio, so small cases come out exact.
        let mut pmf = libm::ldexp(1.0, -(n as i32));
        let mut tail = 0.0;
        for k in 0..=n {
            if k >= c {
                tail += pmf;
            }
            pmf = pmf * (n - k) as f64 / (k + 1) as f64;
        }
        tail.min(1.0)
    } else {
        // Terms relative to the mode, normalized at the end.
        let mode = n / 2;
        let mut terms = vec![0.0; n as usize + 1];
        terms[mode as usize] = 1.0;
        for k in (0..mode).rev() {
            terms[k as usize] = terms[k as usize + 1] * (k + 1) as f64 / (n - k) as f64;
        }
        for k in mode + 1..=n {
            terms[k as usize] = terms[k as usize - 1] * (n - k + 1) as f64 / k as f64;
        }
        let total: f64 = terms.iter().sum();
        let tail: f64 = terms[c as usize..].iter().sum();
        (tail / total).min(1.0)
    }
}

/// True positive rates before and after removing rationale tokens.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerificationReport {
    pub tpr0: f64,
    pub tpr1: f64,
    /// `100 * (tpr0 - tpr1) / tpr0`; `None` when `tpr0` is zero.
    pub delta_tpr: Option<f64>,
}

impl VerificationReport {
    pub fn from_rates(tpr0: f64, tpr1: f64) -> Self {
        Self {
            tpr0,
            tpr1,
            delta_tpr: (tpr0 > 0.0).then(|| 100.0 * (tpr0 - tpr1) / tpr0),
        }
    }
}

/// Inference-mode outputs for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logit: f64,
    pub probability: f64,
    pub label: bool,
}

pub fn predict_example(example: &Example, params: &ModelParams, config: &ModelConfig) -> Result<Prediction, Error> {
    let logit = crate::model::logit(example, params, config)?;
    let (probability, label) = predict(logit);
    Ok(Prediction {
        logit,
        probability,
        label,
    })
}

pub fn predict_all(
    examples: &[Example],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<Prediction>, Error> {
    par::map(examples, |e| predict_example(e, params, config))
        .into_iter()
        .collect()
}

/// Per-token saliency of one example at each requested level, truncated to
/// the real sentence length, from an inference-mode pass.
pub fn token_saliencies(
    example: &Example,
    params: &ModelParams,
    config: &ModelConfig,
    levels: &[Level],
) -> Result<(Prediction, Vec<Vec<f64>>), Error> {
    let graph = Graph::new();
    let bound = params.bind(&graph);
    let trace = encode(example, &bound, config, None)?;
    let grads = saliency_gradients(&trace, levels, false);
    let logit = trace.logit.item();
    let (probability, label) = predict(logit);
    let per_level = grads
        .into_iter()
        .map(|g| g.data()[..trace.length].to_vec())
        .collect();
    Ok((
        Prediction {
            logit,
            probability,
            label,
        },
        per_level,
    ))
}

/// Predictions and metrics over a labelled set, with micro-averaged
/// saliency accuracy at every level over examples with marked tokens.
pub fn evaluate(
    examples: &[Example],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(MetricsReport, Vec<Prediction>), Error> {
    let rows = par::map(examples, |e| -> Result<_, Error> {
        if e.marked() == 0 {
            return Ok((predict_example(e, params, config)?, None));
        }
        let (pred, sal) = token_saliencies(e, params, config, &Level::ALL)?;
        let n = sal[0].len();
        let tallies: Vec<SaliencyTally> = sal
            .iter()
            .map(|g| SaliencyTally::of(g, &e.rationale[..n]))
            .collect();
        Ok((pred, Some(tallies)))
    });
    let mut predictions = Vec::with_capacity(examples.len());
    let mut totals = [SaliencyTally::default(); 3];
    for row in rows {
        let (pred, tallies) = row?;
        predictions.push(pred);
        if let Some(t) = tallies {
            for (acc, x) in totals.iter_mut().zip(t) {
                *acc = acc.merge(x);
            }
        }
    }
    let labels: Vec<bool> = examples.iter().map(|e| e.label).collect();
    let predicted: Vec<bool> = predictions.iter().map(|p| p.label).collect();
    let mut report = classification_metrics(&predicted, &labels)?;
    report.saliency_accuracy = Level::ALL
        .iter()
        .zip(totals)
        .map(|(&l, t)| (l, t.accuracy()))
        .collect();
    Ok((report, predictions))
}

/// TPR on positives before and after their rationale tokens are removed.
pub fn verify_tpr_drop(
    positives: &[Example],
    params: &ModelParams,
    config: &ModelConfig,
    removal: Removal,
) -> Result<VerificationReport, Error> {
    if positives.is_empty() {
        return Err(Error::invalid("verification needs at least one positive example"));
    }
    let stripped: Vec<Example> = positives
        .iter()
        .map(|e| strip_rationale(e, removal))
        .collect::<Result<_, _>>()?;
    let rate = |set: &[Example]| -> Result<f64, Error> {
        let hits = predict_all(set, params, config)?
            .iter()
            .filter(|p| p.label)
            .count();
        Ok(percent(hits, set.len()))
    };
    Ok(VerificationReport::from_rates(rate(positives)?, rate(&stripped)?))
}

/// One highlighted token.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Salient {
    pub index: usize,
    pub saliency: f64,
    /// `|G_i| / max |G|` over the selection, in `(0, 1]`.
    pub weight: f64,
}

/// The `k` tokens with largest `|G|`, ties to the lower index. Tokens with
/// zero saliency are never selected.
pub fn top_k_salient(saliency: &[f64], k: usize) -> Vec<Salient> {
    assert!(k >= 1, "k must be at least 1");
    let mut order: Vec<usize> = (0..saliency.len())
        .filter(|&i| saliency[i] != 0.0)
        .collect();
    order.sort_by(|&a, &b| {
        libm::fabs(saliency[b])
            .partial_cmp(&libm::fabs(saliency[a]))
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    let top = order.first().map_or(0.0, |&i| libm::fabs(saliency[i]));
    order
        .into_iter()
        .map(|index| Salient {
            index,
            saliency: saliency[index],
            weight: libm::fabs(saliency[index]) / top,
        })
        .collect()
}

/// Word-level saliency of one example, with its top-k tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyReport {
    pub tokens: Vec<u32>,
    /// `(level, G)`, each truncated to the sentence length.
    pub levels: Vec<(Level, Vec<f64>)>,
    pub top: Vec<Salient>,
    pub prediction: Prediction,
}

impl SaliencyReport {
    pub fn word(&self) -> Option<&[f64]> {
        self.levels
            .iter()
            .find(|(l, _)| *l == Level::Word)
            .map(|(_, g)| g.as_slice())
    }
}

pub fn saliency_report(
    example: &Example,
    params: &ModelParams,
    config: &ModelConfig,
    k: usize,
) -> Result<SaliencyReport, Error> {
    let (prediction, grads) = token_saliencies(example, params, config, &Level::ALL)?;
    let top = top_k_salient(&grads[0], k);
    Ok(SaliencyReport {
        tokens: example.tokens[..grads[0].len()].to_vec(),
        levels: Level::ALL.into_iter().zip(grads).collect(),
        top,
        prediction,
    })
}

/// Discordant-pair counts between two prediction sets on the same labels:
/// `(only a correct, only b correct)`.
pub fn discordant(a: &[bool], b: &[bool], labels: &[bool]) -> (u64, u64) {
    let mut only_a = 0;
    let mut only_b = 0;
    for ((&pa, &pb), &y) in a.iter().zip(b).zip(labels) {
        match (pa == y, pb == y) {
            (true, false) => only_a += 1,
            (false, true) => only_b += 1,
            _ => {}
        }
    }
    (only_a, only_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_f1_row() {
        let f1 = f1_score(66.0, 77.5).unwrap();
        assert!((f1 - 71.3).abs() < 0.05, "{f1}");
    }

    #[test]
    fn perfect_and_silent_classifiers() {
        let y = [true, false, true, false];
        let r = classification_metrics(&y, &y).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.accuracy), (100.0, 100.0, 100.0, 100.0));
        let r = classification_metrics(&[false; 4], &y).unwrap();
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.f1, 0.0);
        assert!(r.f1_undefined);
        assert!(classification_metrics(&[], &[]).is_err());
    }

    #[test]
    fn saliency_accuracy_cases() {
        let z = [true, false, true, true];
        let s = saliency_accuracy(&[0.2, -0.5, -0.1, 0.3], &z).unwrap();
        assert!((s - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(saliency_accuracy(&[0.1, 0.2], &[true, true]), Some(100.0));
        assert_eq!(saliency_accuracy(&[0.0], &[true]), Some(0.0));
        assert_eq!(saliency_accuracy(&[1.0, 2.0], &[false, false]), None);
    }

    #[test]
    fn mcnemar_closed_forms() {
        assert_eq!(mcnemar_one_sided(0, 5), 0.03125);
        assert_eq!(mcnemar_one_sided(5, 0), 1.0);
        assert_eq!(mcnemar_one_sided(1, 1), 0.75);
    }

    #[test]
    fn mcnemar_large_counts_agree_across_branches() {
        // the two evaluation strategies meet at n = 1000/1001
        let a = mcnemar_one_sided(480, 520);
        let b = mcnemar_one_sided(480, 521);
        assert!(a > b && a - b < 0.02, "{a} {b}");
        assert!((mcnemar_one_sided(5000, 5000) - 0.5).abs() < 0.01);
    }

    #[test]
    fn published_delta_tpr_rows() {
        let r = VerificationReport::from_rates(76.1, 45.0);
        assert!((r.delta_tpr.unwrap() - 40.9).abs() < 0.05);
        let r = VerificationReport::from_rates(77.5, 52.2);
        assert!((r.delta_tpr.unwrap() - 32.6).abs() < 0.05);
        assert_eq!(VerificationReport::from_rates(60.0, 60.0).delta_tpr, Some(0.0));
        assert_eq!(VerificationReport::from_rates(0.0, 0.0).delta_tpr, None);
    }

    #[test]
    fn top_k_selection() {
        assert_eq!(top_k_salient(&[0.5, -1.0, 0.2], 6).len(), 3);
        let idx: Vec<usize> = top_k_salient(&[5.0, 5.0, 1.0], 2).iter().map(|s| s.index).collect();
        assert_eq!(idx, vec![0, 1]);
        assert!(top_k_salient(&[0.7; 4], 3).iter().all(|s| s.weight == 1.0));
        assert!(top_k_salient(&[0.0; 4], 3).is_empty());
    }

    #[test]
    fn discordant_pairs() {
        let y = [true, true, false, false];
        let a = [true, false, false, true];
        let b = [true, true, true, false];
        assert_eq!(discordant(&a, &b, &y), (1, 2));
    }
}
