//! Run configuration.
//!
//! Settings come from, highest priority first: command-line flags, a
//! `key = value` config file, the `SF_SEED` environment variable (seed only),
//! built-in defaults. Flags and file lines go through the same [`RunConfig::set`].

use std::path::{Path, PathBuf};

use saliency_core::data::SynthConfig;
use saliency_core::loss::Level;
use saliency_core::model::{Mode, ModelConfig};
use saliency_core::train::TrainConfig;

use crate::{Error, Result};

pub const SEED_ENV: &str = "SF_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

/// Keys accepted by [`RunConfig::set`].
pub const KEYS: &[&str] = &[
    "mode",
    "vocab_size",
    "triggers",
    "bias_rate",
    "min_len",
    "max_len",
    "positive_fraction",
    "count",
    "embed_dim",
    "windows",
    "lr",
    "batch_size",
    "dropout",
    "epochs",
    "patience",
    "lambda",
    "levels",
    "seed",
    "out",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("{key}: cannot parse {value:?}: {e}"))
}

pub fn parse_mode(value: &str) -> std::result::Result<Mode, String> {
    match value {
        "event" => Ok(Mode::Event),
        "qa" => Ok(Mode::Qa),
        other => Err(format!("mode must be event or qa, got {other:?}")),
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Event => "event",
        Mode::Qa => "qa",
    }
}

/// `none`, `all`, or a comma list of level names.
pub fn parse_levels(value: &str) -> std::result::Result<Vec<Level>, String> {
    match value {
        "none" | "" => Ok(Vec::new()),
        "all" => Ok(Level::ALL.to_vec()),
        list => {
            let mut out = Vec::new();
            for part in list.split(',') {
                let level = Level::parse(part.trim())
                    .ok_or_else(|| format!("unknown level {part:?}"))?;
                if !out.contains(&level) {
                    out.push(level);
                }
            }
            out.sort();
            Ok(out)
        }
    }
}

impl RunConfig {
    /// Applies one setting. `lambda` also turns on all levels; [`resolve`]
    /// applies `levels` last so an explicit list wins.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        match key {
            "mode" => {
                let mode = parse_mode(value)?;
                self.synth.mode = mode;
                self.model.mode = mode;
            }
            "vocab_size" => {
                let v = num(key, value)?;
                self.synth.vocab_size = v;
                self.model.vocab_size = v;
            }
            "triggers" => self.synth.triggers = num(key, value)?,
            "bias_rate" => self.synth.bias_rate = num(key, value)?,
            "min_len" => self.synth.min_len = num(key, value)?,
            "max_len" => {
                let v = num(key, value)?;
                self.synth.max_len = v;
                self.model.max_len = v;
            }
            "positive_fraction" => self.synth.positive_fraction = num(key, value)?,
            "count" => self.synth.count = num(key, value)?,
            "embed_dim" => self.model.embed_dim = num(key, value)?,
            "windows" => {
                self.model.window_sizes = value
                    .split(',')
                    .map(|w| num(key, w.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "lr" => self.train.adam.learning_rate = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "dropout" => self.train.dropout = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "patience" => {
                self.train.patience = match value {
                    "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "lambda" => {
                self.train.saliency.lambda = num(key, value)?;
                self.train.saliency.levels = Level::ALL.to_vec();
            }
            "levels" => self.train.saliency.levels = parse_levels(value)?,
            "seed" => self.seed = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => return Err(format!("unknown setting {other:?}")),
        }
        Ok(())
    }

    /// Copies the run seed into the generator and trainer and validates.
    pub fn finish(mut self) -> Result<Self> {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(self)
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, i + 1, "expected key = value"))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(Error::parse(path, i + 1, format!("unknown setting {key:?}")));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Builds the configuration for one run.
pub fn resolve(
    file: Option<&Path>,
    env_seed: Option<&str>,
    flags: &[(String, String)],
) -> Result<RunConfig> {
    let mut layered = Vec::new();
    if let Some(seed) = env_seed {
        layered.push(("seed".to_string(), seed.to_string()));
    }
    if let Some(path) = file {
        layered.extend(parse_file(path)?);
    }
    layered.extend(flags.iter().cloned());
    let mut cfg = RunConfig::default();
    let (levels, rest): (Vec<_>, Vec<_>) = layered.into_iter().partition(|(k, _)| k == "levels");
    for (key, value) in rest.iter().chain(levels.last()) {
        cfg.set(key, value).map_err(Error::Invalid)?;
    }
    cfg.finish()
}
