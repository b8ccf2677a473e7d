//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line;
//! the test fails if any criterion does.
//!
//! Training runs use a pinned recipe: Adam at 1e-3, batch 32, dropout 0.5,
//! at most 30 epochs with dev-F1 early stopping (patience 5), seeds 0, 1, 2.

use std::io::Write;
use std::time::Instant;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saliency_core::autodiff::{grad, Array, Graph, Tensor};
use saliency_core::data::{gen_synthetic, Example, Removal, SynthConfig};
use saliency_core::eval::{evaluate, f1_score, mcnemar_one_sided, verify_tpr_drop, SaliencyTally, VerificationReport};
use saliency_core::loss::{hinge_penalty, task_loss, total_cost, Level, SaliencyConfig};
use saliency_core::model::{encode, Mode, ModelConfig, ModelParams};
use saliency_core::train::{cost_gradcheck, train, AdamConfig, TrainConfig};

const SEEDS: [u64; 3] = [0, 1, 2];
const LEARNING_RATE: f64 = 1e-3;

fn line(text: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{text}");
}

fn verdict(n: usize, pass: bool, detail: &str) -> bool {
    line(&format!("{} criterion {n}: {detail}", if pass { "PASS" } else { "FAIL" }));
    pass
}

// Criterion 1 ---------------------------------------------------------------

/// `(dataset, saliency, P, R, published F1)`
const PRECISION_RECALL: [(&str, &str, f64, f64, f64); 8] = [
    ("ACE", "No", 66.0, 77.5, 71.3),
    ("ACE", "Yes", 70.1, 76.1, 73.0),
    ("ERE", "No", 85.0, 86.6, 85.8),
    ("ERE", "Yes", 85.8, 87.3, 86.6),
    ("CBT-NE", "No", 55.6, 76.3, 64.3),
    ("CBT-NE", "Yes", 57.2, 74.5, 64.7),
    ("CBT-CN", "No", 47.4, 39.0, 42.8),
    ("CBT-CN", "Yes", 48.3, 38.9, 43.1),
];

/// `(dataset, saliency, TPR0, TPR1, published ΔTPR)`
const TPR_DROP: [(&str, &str, f64, f64, f64); 8] = [
    ("ACE", "No", 77.5, 52.2, 32.6),
    ("ACE", "Yes", 76.1, 45.0, 40.9),
    ("ERE", "No", 86.6, 73.2, 15.4),
    ("ERE", "Yes", 87.3, 70.6, 19.1),
    ("CBT-NE", "No", 76.3, 30.2, 60.4),
    ("CBT-NE", "Yes", 74.5, 28.5, 61.8),
    ("CBT-CN", "No", 39.0, 16.6, 57.4),
    ("CBT-CN", "Yes", 38.9, 15.4, 60.4),
];

fn criterion_1() -> bool {
    let mut misses = Vec::new();
    for (data, s, p, r, published) in PRECISION_RECALL {
        let f1 = f1_score(p, r).unwrap();
        line(&format!("  F1   {data:<6} {s:<3} computed {f1:.4} published {published}"));
        if (f1 - published).abs() > 0.05 {
            misses.push(format!("F1 {data}/{s} {f1:.4} vs {published}"));
        }
    }
    for (data, s, t0, t1, published) in TPR_DROP {
        let delta = VerificationReport::from_rates(t0, t1).delta_tpr.unwrap();
        line(&format!("  dTPR {data:<6} {s:<3} computed {delta:.4} published {published}"));
        if (delta - published).abs() > 0.05 {
            misses.push(format!("dTPR {data}/{s} {delta:.4} vs {published}"));
        }
    }
    let detail = if misses.is_empty() {
        "all 16 published values reproduced within 0.05".to_string()
    } else {
        format!("{} of 16 outside 0.05: {}", misses.len(), misses.join("; "))
    };
    verdict(1, misses.is_empty(), &detail)
}

// Criterion 2 ---------------------------------------------------------------

fn criterion_2() -> bool {
    let start = Instant::now();
    let synth = SynthConfig {
        max_len: 6,
        min_len: 4,
        count: 100,
        ..SynthConfig::default()
    };
    let data = gen_synthetic(&synth).unwrap();
    let config = ModelConfig {
        embed_dim: 8,
        max_len: 6,
        vocab_size: data.vocab.len(),
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&config, 0).unwrap();
    let saliency = SaliencyConfig::all_levels(0.5);
    let positives: Vec<&Example> = data.examples.iter().filter(|e| e.label).take(5).collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut kinks = 0;
    for e in &positives {
        let c = cost_gradcheck(e, &params, &config, &saliency, 1e-4).unwrap();
        worst = worst.max(c.max_rel_error);
        checked += c.checked;
        kinks += c.kinks;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = positives.len() >= 5 && worst < 1e-4 && checked > 0 && secs < 120.0;
    verdict(
        2,
        pass,
        &format!(
            "{} positives, {checked} coordinates ({kinks} near kinks), max rel error {worst:.2e}, {secs:.1}s",
            positives.len()
        ),
    )
}

// Criterion 3 ---------------------------------------------------------------

fn bits(p: &ModelParams) -> Vec<u64> {
    p.named().iter().flat_map(|(_, a)| a.data().iter().map(|x| x.to_bits())).collect()
}

fn criterion_3() -> bool {
    let synth = SynthConfig {
        count: 300,
        bias_rate: 0.3,
        ..SynthConfig::default()
    };
    let data = gen_synthetic(&synth).unwrap();
    let config = ModelConfig {
        vocab_size: data.vocab.len(),
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&config, 0).unwrap();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for e in &data.examples {
        let lambdas: &[f64] = if e.marked() == 0 { &[0.0, 0.5, 2.0] } else { &[0.0] };
        for &lambda in lambdas {
            let g = Graph::new();
            let trace = encode(e, &params.bind(&g), &config, None).unwrap();
            let cost = total_cost(&trace, e, &SaliencyConfig::all_levels(lambda));
            let task = task_loss(&trace.logit, e.label).item();
            worst = worst.max((cost.total.item() - task).abs());
            cases += 1;
        }
    }
    let (train_set, dev) = data.examples.split_at(240);
    let base = TrainConfig {
        epochs: 3,
        ..pinned_train(0, SaliencyConfig::disabled())
    };
    let zero = TrainConfig {
        saliency: SaliencyConfig::all_levels(0.0),
        ..base.clone()
    };
    let a = train(params.clone(), &config, train_set, dev, &base).unwrap();
    let b = train(params, &config, train_set, dev, &zero).unwrap();
    let identical = bits(&a.params) == bits(&b.params);
    verdict(
        3,
        worst <= 1e-15 && identical,
        &format!("{cases} cost comparisons, max |C - L| {worst:.1e}; lambda=0 run bit-identical: {identical}"),
    )
}

// Criteria 4 and 5 ----------------------------------------------------------

fn pinned_train(seed: u64, saliency: SaliencyConfig) -> TrainConfig {
    TrainConfig {
        adam: AdamConfig {
            learning_rate: LEARNING_RATE,
            ..AdamConfig::default()
        },
        batch_size: 32,
        dropout: 0.5,
        epochs: 30,
        seed,
        saliency,
        patience: Some(5),
    }
}

fn event_data(seed: u64, bias_rate: f64, count: usize) -> (Vec<Example>, usize) {
    let cfg = SynthConfig {
        mode: Mode::Event,
        vocab_size: 200,
        triggers: 8,
        bias_rate,
        count,
        seed,
        ..SynthConfig::default()
    };
    let data = gen_synthetic(&cfg).unwrap();
    (data.examples, data.vocab.len())
}

struct Trained {
    params: ModelParams,
    epochs: usize,
}

fn train_both(
    seed: u64,
    config: &ModelConfig,
    train_set: &[Example],
    dev: &[Example],
) -> (Trained, Trained) {
    let init = ModelParams::init(config, seed).unwrap();
    let run = |saliency| {
        let out = train(init.clone(), config, train_set, dev, &pinned_train(seed, saliency)).unwrap();
        Trained {
            params: out.params,
            epochs: out.log.epochs.len(),
        }
    };
    (run(SaliencyConfig::disabled()), run(SaliencyConfig::all_levels(0.5)))
}

fn model_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: 32,
        window_sizes: vec![3, 5],
        max_len: 16,
        vocab_size,
        mode: Mode::Event,
    }
}

fn criterion_4() -> bool {
    let start = Instant::now();
    let mut good_seeds = 0;
    for seed in SEEDS {
        let (all, v) = event_data(seed, 0.0, 3000);
        let (train_set, rest) = all.split_at(2000);
        let (dev, test) = rest.split_at(500);
        let config = model_config(v);
        let (base, sal) = train_both(seed, &config, train_set, dev);
        let positives: Vec<Example> = test.iter().filter(|e| e.label).cloned().collect();
        let mut row = Vec::new();
        for m in [&base, &sal] {
            let (metrics, _) = evaluate(test, &m.params, &config).unwrap();
            let verify = verify_tpr_drop(&positives, &m.params, &config, Removal::Delete).unwrap();
            row.push((metrics.accuracy, metrics.saliency(Level::Word).unwrap_or(0.0), verify.delta_tpr.unwrap_or(0.0)));
        }
        let ((acc_b, sacc_b, dt_b), (acc_s, sacc_s, dt_s)) = (row[0], row[1]);
        let a = acc_b >= 95.0 && acc_s >= 95.0;
        let b = sacc_s >= 90.0 && sacc_s - sacc_b >= 10.0;
        let c = dt_s > dt_b;
        good_seeds += usize::from(a && b && c);
        line(&format!(
            "  seed {seed}: acc {acc_b:.1}/{acc_s:.1} [{}] word s_acc {sacc_b:.1}/{sacc_s:.1} [{}] dTPR {dt_b:.2}/{dt_s:.2} [{}] epochs {}/{} (baseline/saliency)",
            ok(a),
            ok(b),
            ok(c),
            base.epochs,
            sal.epochs
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        4,
        good_seeds >= 2 && secs < 300.0,
        &format!("(a), (b) and (c) all hold in {good_seeds} of 3 seeds, {secs:.0}s"),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "no"
    }
}

fn criterion_5() -> bool {
    let start = Instant::now();
    let mut good_seeds = 0;
    for seed in SEEDS {
        let (biased, v) = event_data(seed, 0.9, 2500);
        let (train_set, dev) = biased.split_at(2000);
        let (test, v_test) = event_data(1000 + seed, 0.0, 500);
        assert_eq!(v, v_test, "same lexicon for biased and clean data");
        let config = model_config(v);
        let (base, sal) = train_both(seed, &config, train_set, dev);
        let acc = |m: &Trained| evaluate(&test, &m.params, &config).unwrap().0.accuracy;
        let (acc_b, acc_s) = (acc(&base), acc(&sal));
        let good = acc_s - acc_b >= 2.0;
        good_seeds += usize::from(good);
        line(&format!(
            "  seed {seed}: bias-free test accuracy baseline {acc_b:.1} saliency {acc_s:.1} (gain {:+.1}) [{}]",
            acc_s - acc_b,
            ok(good)
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        5,
        good_seeds >= 2,
        &format!("saliency model at least 2 points better in {good_seeds} of 3 seeds, {secs:.0}s"),
    )
}

// Criterion 6 ---------------------------------------------------------------

fn exact_tail(b: u64, c: u64) -> f64 {
    let n = b + c;
    let mut coeff = BigUint::one();
    let mut tail = BigUint::zero();
    for k in 0..=n {
        if k >= c {
            tail += &coeff;
        }
        coeff = coeff * BigUint::from(n - k) / BigUint::from(k + 1);
    }
    let scaled = (tail << 64u32) / (BigUint::one() << n);
    scaled.to_f64().unwrap() / 2f64.powi(64)
}

fn criterion_6() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=200u64);
        let b = rng.gen_range(0..=n);
        worst = worst.max((mcnemar_one_sided(b, n - b) - exact_tail(b, n - b)).abs());
    }
    let closed = mcnemar_one_sided(0, 5);
    verdict(
        6,
        worst <= 1e-12 && closed == 0.03125,
        &format!("100 random pairs, max error {worst:.1e}; b=0,c=5 gives {closed}"),
    )
}

// Criterion 7 ---------------------------------------------------------------

fn criterion_7() -> bool {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut trials = 0;
    let mut failures = Vec::new();

    for _ in 0..300 {
        let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..rng.gen_range(1..6))
            .map(|_| {
                let n = rng.gen_range(1..12);
                (
                    (0..n).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(-1.0..1.0) }).collect(),
                    (0..n).map(|_| rng.gen_bool(0.4)).collect(),
                )
            })
            .collect();
        let merged = rows
            .iter()
            .map(|(g, z)| SaliencyTally::of(g, z))
            .fold(SaliencyTally::default(), SaliencyTally::merge);
        let marked: usize = rows.iter().map(|(_, z)| z.iter().filter(|&&m| m).count()).sum();
        let positive: usize = rows
            .iter()
            .map(|(g, z)| g.iter().zip(z).filter(|(&gi, &zi)| zi && gi > 0.0).count())
            .sum();
        if merged.marked != marked || merged.positive != positive {
            failures.push("s_acc recount");
        }
        trials += 1;
    }

    for _ in 0..300 {
        let (r, c) = (rng.gen_range(1..7), rng.gen_range(1..7));
        let x = Array::new(&[r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let axis = rng.gen_range(0..2);
        let g = Graph::new();
        let t = g.leaf(x);
        let pooled = t.maxpool_axis(axis);
        let w: Vec<f64> = (0..pooled.value().len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = pooled.dot(&Tensor::constant(Array::new(pooled.shape(), w.clone())));
        let dx = grad(&y, &[&t], false).remove(0);
        let mass: f64 = dx.data().iter().sum();
        if (mass - w.iter().sum::<f64>()).abs() > 1e-12 {
            failures.push("max-pool gradient mass");
        }
        trials += 1;
    }

    for _ in 0..300 {
        let n = rng.gen_range(1..16);
        let s = Tensor::constant(Array::from_vec((0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()));
        let z: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let lambda = rng.gen_range(0.0..5.0);
        let unit = hinge_penalty(&s, &z, 1.0).item();
        let scaled = hinge_penalty(&s, &z, lambda).item();
        if unit < 0.0 || scaled < 0.0 || (scaled - lambda * unit).abs() > 1e-12 * (1.0 + scaled) {
            failures.push("hinge");
        }
        trials += 1;
    }

    for _ in 0..150 {
        let cfg = SynthConfig {
            mode: if rng.gen_bool(0.5) { Mode::Qa } else { Mode::Event },
            count: 40,
            bias_rate: rng.gen_range(0.0..1.0),
            seed: rng.gen(),
            ..SynthConfig::default()
        };
        if gen_synthetic(&cfg).unwrap().examples != gen_synthetic(&cfg).unwrap().examples {
            failures.push("dataset determinism");
        }
        trials += 1;
    }

    let secs = start.elapsed().as_secs_f64();
    failures.dedup();
    verdict(
        7,
        failures.is_empty() && trials >= 1000 && secs < 60.0,
        &format!(
            "{trials} randomized trials in {secs:.1}s, failures: {}",
            if failures.is_empty() { "none".to_string() } else { failures.join(", ") }
        ),
    )
}

#[test]
fn acceptance() {
    let results = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, &p)| !p)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
