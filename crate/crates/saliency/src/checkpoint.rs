//! Parameter checkpoints.
//!
//! ```text
//! saliency-checkpoint 1
//! config mode=event embed_dim=32 windows=3,5 max_len=16 vocab_size=200
//! tensor embedding 200 32
//! tensor conv3.kernel 3 32 32
//! ...
//! end
//! ```
//!
//! followed by every tensor's values as little-endian `f64`, in header order.
//! The vocabulary lives next to it in `vocab.txt`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use saliency_core::autodiff::Array;
use saliency_core::data::Vocabulary;
use saliency_core::model::{ModelConfig, ModelParams};

use crate::config::{mode_name, parse_mode};
use crate::dataset::{read_vocab, write_vocab};
use crate::{Error, Result};

const MAGIC: &str = "saliency-checkpoint 1";

pub fn vocab_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_file_name("vocab.txt")
}

fn config_line(config: &ModelConfig) -> String {
    let windows: Vec<String> = config.window_sizes.iter().map(|w| w.to_string()).collect();
    format!(
        "config mode={} embed_dim={} windows={} max_len={} vocab_size={}",
        mode_name(config.mode),
        config.embed_dim,
        windows.join(","),
        config.max_len,
        config.vocab_size
    )
}

fn parse_config(line: &str) -> std::result::Result<ModelConfig, String> {
    let rest = line.strip_prefix("config ").ok_or("expected config line")?;
    let mut config = ModelConfig::default();
    for field in rest.split_whitespace() {
        let (key, value) = field.split_once('=').ok_or("expected key=value")?;
        let bad = |e: std::num::ParseIntError| format!("{key}: {e}");
        match key {
            "mode" => config.mode = parse_mode(value)?,
            "embed_dim" => config.embed_dim = value.parse().map_err(bad)?,
            "max_len" => config.max_len = value.parse().map_err(bad)?,
            "vocab_size" => config.vocab_size = value.parse().map_err(bad)?,
            "windows" => {
                config.window_sizes = value
                    .split(',')
                    .map(|w| w.parse().map_err(bad))
                    .collect::<std::result::Result<_, _>>()?
            }
            other => return Err(format!("unknown config field {other:?}")),
        }
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

/// Writes the checkpoint and its vocabulary.
pub fn save(path: &Path, config: &ModelConfig, params: &ModelParams, vocab: &Vocabulary) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{MAGIC}").unwrap();
    writeln!(buf, "{}", config_line(config)).unwrap();
    let named = params.named();
    for (name, array) in &named {
        let dims: String = array.shape().iter().map(|d| format!(" {d}")).collect();
        writeln!(buf, "tensor {name}{dims}").unwrap();
    }
    writeln!(buf, "end").unwrap();
    for (_, array) in &named {
        for x in array.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    write_vocab(&vocab_path(path), vocab)
}

/// Reads a checkpoint and its vocabulary.
pub fn load(path: &Path) -> Result<(ModelConfig, ModelParams, Vocabulary)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::parse(path, lines.len() + 1, "missing end of header"));
        }
        let line = line.trim_end().to_string();
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(Error::parse(path, 1, "not a checkpoint"));
    }
    let config = lines
        .get(1)
        .ok_or_else(|| Error::parse(path, 2, "missing config line"))
        .and_then(|l| parse_config(l).map_err(|m| Error::parse(path, 2, m)))?;
    let mut tensors = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(2) {
        let mut parts = line.split_whitespace();
        let (Some("tensor"), Some(name)) = (parts.next(), parts.next()) else {
            return Err(Error::parse(path, i + 1, "expected tensor line"));
        };
        let shape: Vec<usize> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, i + 1, format!("bad dimension: {e}")))?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        reader
            .read_exact(&mut bytes)
            .map_err(|_| Error::Invalid(format!("{}: payload too short for {name}", path.display())))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name.to_string(), Array::new(&shape, data)));
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::Invalid(format!("{}: trailing payload bytes", path.display())));
    }
    let params = ModelParams::from_named(&config, tensors)?;
    let vocab = read_vocab(&vocab_path(path))?;
    if vocab.len() != config.vocab_size {
        return Err(Error::Invalid(format!(
            "vocabulary has {} tokens, checkpoint expects {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    Ok((config, params, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (ModelConfig, ModelParams, Vocabulary) {
        let config = ModelConfig {
            embed_dim: 4,
            window_sizes: vec![3, 5],
            max_len: 6,
            vocab_size: 5,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&config, 3).unwrap();
        let vocab = Vocabulary::from_tokens(["<pad>", "<unk>", "<blank>", "a", "b"]).unwrap();
        (config, params, vocab)
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (config, params, vocab) = small();
        save(&path, &config, &params, &vocab).unwrap();
        let (c, p, v) = load(&path).unwrap();
        assert_eq!(c, config);
        assert_eq!(p, params);
        assert_eq!(v, vocab);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (config, params, vocab) = small();
        save(&path, &config, &params, &vocab).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn header_names_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (config, params, vocab) = small();
        save(&path, &config, &params, &vocab).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("tensor embedding 5 4\n"));
        assert!(text.contains("tensor conv3.kernel 3 4 4\n"));
        assert!(text.contains("tensor classifier.bias\n"));
    }
}
