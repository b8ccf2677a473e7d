//! Report records and saliency heatmaps.
//!
//! Records are single-line JSON objects; percentages carry one decimal.

use saliency_core::data::{Example, Vocabulary};
use saliency_core::eval::{MetricsReport, Prediction, SaliencyReport, VerificationReport};
use saliency_core::train::{EpochLog, TrainLog};
use serde_json::{json, Map, Value};

/// Rounds to one decimal place.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn opt1(x: Option<f64>) -> Value {
    x.map_or(Value::Null, |v| json!(round1(v)))
}

pub fn metrics_record(report: &MetricsReport) -> Value {
    let mut s_acc = Map::new();
    for (level, value) in &report.saliency_accuracy {
        s_acc.insert(level.name().to_string(), opt1(*value));
    }
    let c = report.counts;
    json!({
        "precision": round1(report.precision),
        "recall": round1(report.recall),
        "f1": round1(report.f1),
        "f1_undefined": report.f1_undefined,
        "accuracy": round1(report.accuracy),
        "counts": {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn_},
        "s_acc": s_acc,
    })
}

pub fn verification_record(report: &VerificationReport) -> Value {
    json!({
        "tpr0": round1(report.tpr0),
        "tpr1": round1(report.tpr1),
        "delta_tpr": opt1(report.delta_tpr),
    })
}

pub fn mcnemar_record(b: u64, c: u64, p_value: f64) -> Value {
    json!({"only_a_correct": b, "only_b_correct": c, "p_value": p_value})
}

fn epoch_record(e: &EpochLog) -> Value {
    json!({
        "epoch": e.epoch,
        "task_loss": e.mean_task_loss,
        "penalty": e.mean_penalty,
        "dev": e.dev.as_ref().map_or(Value::Null, metrics_record),
        "wall_clock_secs": e.wall_clock_secs,
    })
}

/// One line per epoch.
pub fn train_log_lines(log: &TrainLog) -> String {
    let mut out = String::new();
    for e in &log.epochs {
        out.push_str(&epoch_record(e).to_string());
        out.push('\n');
    }
    out
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Shading percentage for a 0-based saliency rank: 70 for the top token,
/// 10 points less per rank, never below 10.
pub fn intensity(rank: usize) -> u32 {
    70u32.saturating_sub(10 * rank as u32).max(10)
}

fn prediction_line(name: &str, p: &Prediction) -> String {
    format!(
        "<p class=\"pred\">{name}: {} (p = {:.3})</p>\n",
        if p.label { "positive" } else { "negative" },
        p.probability
    )
}

/// A standalone HTML page: the sentence with its top-k salient tokens
/// shaded by rank, a sidebar listing the marked tokens, and the baseline
/// and saliency-trained predictions when both are supplied.
pub fn render_heatmap(
    example: &Example,
    report: &SaliencyReport,
    vocab: &Vocabulary,
    predictions: Option<(&Prediction, &Prediction)>,
) -> String {
    let word = |id: u32| escape(vocab.token(id).unwrap_or(Vocabulary::UNK));
    let mut rank = vec![None; example.tokens.len()];
    for (r, s) in report.top.iter().enumerate() {
        if s.index < rank.len() {
            rank[s.index] = Some(r);
        }
    }
    let mut html = String::from(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>saliency</title>\n<style>\n\
         body { font-family: sans-serif; display: flex; gap: 2em; }\n\
         .tok { padding: 0 2px; }\n\
         aside { border-left: 1px solid #999; padding-left: 1em; }\n\
         </style>\n</head>\n<body>\n<main>\n",
    );
    if let Some(query) = &example.query {
        let q: Vec<String> = query.iter().map(|&t| word(t)).collect();
        html.push_str(&format!("<p class=\"query\">{}</p>\n", q.join(" ")));
    }
    html.push_str("<p class=\"sentence\">");
    for (i, &t) in example.tokens.iter().enumerate() {
        if i > 0 {
            html.push(' ');
        }
        match rank[i] {
            Some(r) => html.push_str(&format!(
                "<span class=\"tok\" data-rank=\"{}\" style=\"background: rgba(255, 0, 0, {:.2})\">{}</span>",
                r + 1,
                f64::from(intensity(r)) / 100.0,
                word(t)
            )),
            None => html.push_str(&format!("<span class=\"tok\">{}</span>", word(t))),
        }
    }
    html.push_str("</p>\n");
    html.push_str(&format!("<p class=\"label\">gold: {}</p>\n", if example.label { "positive" } else { "negative" }));
    match predictions {
        Some((baseline, saliency)) => {
            html.push_str(&prediction_line("baseline", baseline));
            html.push_str(&prediction_line("saliency", saliency));
        }
        None => html.push_str(&prediction_line("model", &report.prediction)),
    }
    html.push_str("</main>\n<aside>\n<h2>marked</h2>\n<ul>\n");
    for (i, (&t, &z)) in example.tokens.iter().zip(&example.rationale).enumerate() {
        if z {
            html.push_str(&format!("<li data-index=\"{i}\">{}</li>\n", word(t)));
        }
    }
    html.push_str("</ul>\n</aside>\n</body>\n</html>\n");
    html
}
