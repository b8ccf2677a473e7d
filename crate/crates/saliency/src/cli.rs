//! The `saliency` command line.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 numerical failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use saliency_core::data::{gen_synthetic, Example, Removal, Vocabulary};
use saliency_core::eval::{
    discordant, evaluate, mcnemar_one_sided, predict_all, predict_example, saliency_report, verify_tpr_drop,
};
use saliency_core::loss::{Level, SaliencyConfig};
use saliency_core::model::{ModelConfig, ModelParams};
use saliency_core::train::{cost_gradcheck, train};

use crate::checkpoint;
use crate::config::{resolve, RunConfig};
use crate::dataset::{load_jsonl, read_vocab, write_jsonl, write_vocab, Unseen};
use crate::embeddings::load_embeddings;
use crate::report::{mcnemar_record, metrics_record, render_heatmap, train_log_lines, verification_record};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "saliency", version, about = "Saliency-regularized CNN text classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    settings: Settings,
}

/// Run settings; each overrides the same key of the config file.
#[derive(Debug, Default, Args)]
struct Settings {
    /// `key = value` settings file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// event or qa
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    vocab_size: Option<String>,
    #[arg(long, global = true)]
    triggers: Option<String>,
    /// probability of adding the bias token to a positive
    #[arg(long, global = true)]
    bias_rate: Option<String>,
    #[arg(long, global = true)]
    min_len: Option<String>,
    #[arg(long, global = true)]
    max_len: Option<String>,
    #[arg(long, global = true)]
    positive_fraction: Option<String>,
    #[arg(long, global = true)]
    count: Option<String>,
    #[arg(long, global = true)]
    embed_dim: Option<String>,
    /// comma-separated odd window sizes
    #[arg(long, global = true)]
    windows: Option<String>,
    #[arg(long, global = true)]
    lr: Option<String>,
    #[arg(long, global = true)]
    batch_size: Option<String>,
    #[arg(long, global = true)]
    dropout: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<String>,
    /// epochs without dev F1 improvement before stopping, or none
    #[arg(long, global = true)]
    patience: Option<String>,
    /// saliency weight; implies all levels unless --levels is given
    #[arg(long, global = true)]
    lambda: Option<String>,
    /// none, all, or a comma list of word, intermediate, decision
    #[arg(long, global = true)]
    levels: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// output directory
    #[arg(long, global = true)]
    out: Option<String>,
}

impl Settings {
    fn flags(&self) -> Vec<(String, String)> {
        let pairs = [
            ("mode", &self.mode),
            ("vocab_size", &self.vocab_size),
            ("triggers", &self.triggers),
            ("bias_rate", &self.bias_rate),
            ("min_len", &self.min_len),
            ("max_len", &self.max_len),
            ("positive_fraction", &self.positive_fraction),
            ("count", &self.count),
            ("embed_dim", &self.embed_dim),
            ("windows", &self.windows),
            ("lr", &self.lr),
            ("batch_size", &self.batch_size),
            ("dropout", &self.dropout),
            ("epochs", &self.epochs),
            ("patience", &self.patience),
            ("lambda", &self.lambda),
            ("levels", &self.levels),
            ("seed", &self.seed),
            ("out", &self.out),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RemovalArg {
    Delete,
    Mask,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic annotated dataset
    Synth {
        /// file stem under the output directory
        #[arg(long, default_value = "data")]
        name: String,
    },
    /// Train a model and write a checkpoint and training log
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// fixed vocabulary; otherwise built from the training data
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// pretrained vectors, one token per line
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Classification metrics and saliency accuracy
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write one saliency heatmap per example
    Saliency {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// baseline checkpoint whose prediction is shown alongside
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        k: usize,
        /// at most this many examples
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// True positive rate before and after removing rationale tokens
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "delete")]
        removal: RemovalArg,
    },
    /// Finite-difference check of the full cost gradient
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 6)]
        n: usize,
        /// positive examples to check
        #[arg(long, default_value_t = 5)]
        examples: usize,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// One-sided McNemar test that model B beats model A
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

/// Parses `args` (program name first), runs the command, and returns the
/// exit code. Results go to `out`, diagnostics to
/// `err`.
pub fn run<I, T>(args: I, env_seed: Option<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match execute(cli, env_seed.as_deref(), out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{}: no such file", path.display())))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(out: &mut dyn Write, path: &Path, record: &serde_json::Value) -> Result<()> {
    let line = format!("{record}\n");
    write_file(path, &line)?;
    out.write_all(line.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn load_model(path: &Path) -> Result<(ModelConfig, ModelParams, Vocabulary)> {
    require_file(path)?;
    checkpoint::load(path)
}

fn load_eval_data(path: &Path, vocab: &Vocabulary) -> Result<Vec<Example>> {
    require_file(path)?;
    let mut vocab = vocab.clone();
    load_jsonl(path, &mut vocab, Unseen::Unknown)
}

fn execute(cli: Cli, env_seed: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    if let Some(path) = &cli.settings.config {
        require_file(path)?;
    }
    let cfg = resolve(cli.settings.config.as_deref(), env_seed, &cli.settings.flags())?;
    match cli.command {
        Command::Synth { name } => synth(&cfg, &name, out),
        Command::Train {
            train,
            dev,
            vocab,
            embeddings,
        } => train_cmd(&cfg, &train, dev.as_deref(), vocab.as_deref(), embeddings.as_deref(), out, err),
        Command::Eval { model, data } => {
            let (config, params, vocab) = load_model(&model)?;
            let examples = load_eval_data(&data, &vocab)?;
            let (report, _) = evaluate(&examples, &params, &config)?;
            create_dir(&cfg.out)?;
            emit(out, &cfg.out.join("metrics.json"), &metrics_record(&report))
        }
        Command::Saliency {
            model,
            data,
            baseline,
            k,
            limit,
        } => saliency_cmd(&cfg, &model, &data, baseline.as_deref(), k, limit, out),
        Command::Verify { model, data, removal } => {
            let (config, params, vocab) = load_model(&model)?;
            let examples = load_eval_data(&data, &vocab)?;
            let positives: Vec<Example> = examples.into_iter().filter(|e| e.label && e.marked() > 0).collect();
            let removal = match removal {
                RemovalArg::Delete => Removal::Delete,
                RemovalArg::Mask => Removal::Mask,
            };
            let report = verify_tpr_drop(&positives, &params, &config, removal)?;
            create_dir(&cfg.out)?;
            emit(out, &cfg.out.join("verification.json"), &verification_record(&report))
        }
        Command::Gradcheck {
            d,
            n,
            examples,
            eps,
            tolerance,
        } => gradcheck_cmd(&cfg, d, n, examples, eps, tolerance, out),
        Command::Compare { a, b, data } => {
            let (config_a, params_a, vocab_a) = load_model(&a)?;
            let (config_b, params_b, vocab_b) = load_model(&b)?;
            if vocab_a != vocab_b {
                return Err(Error::Invalid("the two checkpoints use different vocabularies".into()));
            }
            let examples = load_eval_data(&data, &vocab_a)?;
            let labels: Vec<bool> = examples.iter().map(|e| e.label).collect();
            let pa: Vec<bool> = predict_all(&examples, &params_a, &config_a)?.iter().map(|p| p.label).collect();
            let pb: Vec<bool> = predict_all(&examples, &params_b, &config_b)?.iter().map(|p| p.label).collect();
            let (only_a, only_b) = discordant(&pa, &pb, &labels);
            let p = if only_a + only_b == 0 {
                1.0
            } else {
                mcnemar_one_sided(only_a, only_b)
            };
            create_dir(&cfg.out)?;
            emit(out, &cfg.out.join("compare.json"), &mcnemar_record(only_a, only_b, p))
        }
    }
}

fn synth(cfg: &RunConfig, name: &str, out: &mut dyn Write) -> Result<()> {
    let data = gen_synthetic(&cfg.synth)?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join(format!("{name}.jsonl"));
    write_jsonl(&path, &data.examples, &data.vocab)?;
    write_vocab(&cfg.out.join("vocab.txt"), &data.vocab)?;
    writeln!(out, "wrote {} examples to {}", data.examples.len(), path.display()).map_err(|e| Error::io("<stdout>", e))
}

fn train_cmd(
    cfg: &RunConfig,
    train_path: &Path,
    dev_path: Option<&Path>,
    vocab_path: Option<&Path>,
    embeddings: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    require_file(train_path)?;
    for p in [dev_path, vocab_path, embeddings].into_iter().flatten() {
        require_file(p)?;
    }
    let (mut vocab, unseen) = match vocab_path {
        Some(p) => (read_vocab(p)?, Unseen::Unknown),
        None => (Vocabulary::new(), Unseen::Grow),
    };
    let train_set = load_jsonl(train_path, &mut vocab, unseen)?;
    let dev_set = match dev_path {
        Some(p) => load_jsonl(p, &mut vocab.clone(), Unseen::Unknown)?,
        None => Vec::new(),
    };
    let mut model = cfg.model.clone();
    model.vocab_size = vocab.len();
    let mut params = ModelParams::init(&model, cfg.seed)?;
    if let Some(path) = embeddings {
        let loaded = load_embeddings(path, &vocab, model.embed_dim, cfg.seed)?;
        model.embed_dim = loaded.dim;
        params = ModelParams::init(&model, cfg.seed)?;
        params.embedding = loaded.table;
        writeln!(err, "embeddings cover {} of {} tokens", loaded.coverage, vocab.len()).ok();
    }
    let start = Instant::now();
    let outcome = train(params, &model, &train_set, &dev_set, &cfg.train)?;
    writeln!(
        err,
        "trained {} epochs in {:.1}s",
        outcome.log.epochs.len(),
        start.elapsed().as_secs_f64()
    )
    .ok();
    create_dir(&cfg.out)?;
    let ckpt = cfg.out.join("model.ckpt");
    checkpoint::save(&ckpt, &model, &outcome.params, &vocab)?;
    write_file(&cfg.out.join("train_log.jsonl"), &train_log_lines(&outcome.log))?;
    writeln!(out, "wrote {}", ckpt.display()).map_err(|e| Error::io("<stdout>", e))
}

fn saliency_cmd(
    cfg: &RunConfig,
    model_path: &Path,
    data: &Path,
    baseline: Option<&Path>,
    k: usize,
    limit: usize,
    out: &mut dyn Write,
) -> Result<()> {
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    let (config, params, vocab) = load_model(model_path)?;
    let base = baseline.map(load_model).transpose()?;
    if let Some((_, _, v)) = &base {
        if *v != vocab {
            return Err(Error::Invalid("baseline uses a different vocabulary".into()));
        }
    }
    let examples = load_eval_data(data, &vocab)?;
    create_dir(&cfg.out)?;
    for (i, example) in examples.iter().take(limit).enumerate() {
        let report = saliency_report(example, &params, &config, k)?;
        let base_pred = base
            .as_ref()
            .map(|(c, p, _)| predict_example(example, p, c))
            .transpose()?;
        let pair = base_pred.as_ref().map(|b| (b, &report.prediction));
        let path = cfg.out.join(format!("heatmap_{i:04}.html"));
        write_file(&path, &render_heatmap(example, &report, &vocab, pair))?;
        writeln!(out, "wrote {}", path.display()).map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn gradcheck_cmd(
    cfg: &RunConfig,
    d: usize,
    n: usize,
    count: usize,
    eps: f64,
    tolerance: f64,
    out: &mut dyn Write,
) -> Result<()> {
    let mut synth = cfg.synth.clone();
    synth.max_len = n;
    synth.min_len = synth.min_len.min(n);
    synth.count = 20 * count.max(1);
    let data = gen_synthetic(&synth)?;
    let model = ModelConfig {
        embed_dim: d,
        max_len: n,
        vocab_size: data.vocab.len(),
        ..cfg.model.clone()
    };
    let params = ModelParams::init(&model, cfg.seed)?;
    let lambda = if cfg.train.saliency.enabled() {
        cfg.train.saliency.lambda
    } else {
        SaliencyConfig::default().lambda
    };
    let saliency = SaliencyConfig::all_levels(lambda);
    let positives: Vec<&Example> = data.examples.iter().filter(|e| e.label).take(count).collect();
    if positives.len() < count {
        return Err(Error::Invalid(format!("only {} positive examples generated", positives.len())));
    }
    let mut worst: f64 = 0.0;
    for (i, example) in positives.iter().enumerate() {
        let check = cost_gradcheck(example, &params, &model, &saliency, eps)?;
        worst = worst.max(check.max_rel_error);
        writeln!(
            out,
            "example {i}: max rel error {:.3e} over {} coordinates ({} near kinks)",
            check.max_rel_error, check.checked, check.kinks
        )
        .map_err(|e| Error::io("<stdout>", e))?;
    }
    let levels: Vec<&str> = Level::ALL.iter().map(|l| l.name()).collect();
    writeln!(out, "cost levels {}: max rel error {worst:.3e}", levels.join(",")).map_err(|e| Error::io("<stdout>", e))?;
    if worst < tolerance {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check failed: {worst:.3e} >= {tolerance:.1e}"
        )))
    }
}
