//! Newline-delimited JSON datasets.
//!
//! One record per line:
//!
//! ```text
//! {"tokens":["a","b"],"query":["<blank>","c"],"label":1,"rationale":[1]}
//! ```
//!
//! `query` is optional; `rationale` lists the indices of marked tokens.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use saliency_core::data::{Example, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query: Option<Vec<String>>,
    label: u8,
    #[serde(default)]
    rationale: Vec<usize>,
}

/// How unseen tokens are mapped while loading.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unseen {
    /// Add them to the vocabulary.
    Grow,
    /// Map them to the unknown id.
    Unknown,
}

/// Reads a dataset, mapping tokens through `vocab`.
pub fn load_jsonl(path: &Path, vocab: &mut Vocabulary, unseen: Unseen) -> Result<Vec<Example>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        out.push(to_example(rec, vocab, unseen).map_err(|m| Error::parse(path, lineno, m))?);
    }
    Ok(out)
}

fn to_example(rec: Record, vocab: &mut Vocabulary, unseen: Unseen) -> std::result::Result<Example, String> {
    let label = match rec.label {
        0 => false,
        1 => true,
        other => return Err(format!("label must be 0 or 1, got {other}")),
    };
    let mut map = |t: &String| match unseen {
        Unseen::Grow => vocab.insert(t),
        Unseen::Unknown => vocab.id_or_unk(t),
    };
    let tokens: Vec<u32> = rec.tokens.iter().map(&mut map).collect();
    let query = rec.query.map(|q| q.iter().map(&mut map).collect());
    let mut rationale = vec![false; tokens.len()];
    for &i in &rec.rationale {
        if i >= tokens.len() {
            return Err(format!(
                "rationale index {i} out of range for {} tokens",
                tokens.len()
            ));
        }
        rationale[i] = true;
    }
    Example::new(tokens, query, label, rationale).map_err(|e| e.to_string())
}

/// Writes examples with token strings from `vocab`.
pub fn write_jsonl(path: &Path, examples: &[Example], vocab: &Vocabulary) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let word = |id: &u32| vocab.token(*id).unwrap_or(Vocabulary::UNK).to_string();
    for e in examples {
        let rec = Record {
            tokens: e.tokens.iter().map(word).collect(),
            query: e.query.as_ref().map(|q| q.iter().map(word).collect()),
            label: u8::from(e.label),
            rationale: e
                .rationale
                .iter()
                .enumerate()
                .filter(|(_, &z)| z)
                .map(|(i, _)| i)
                .collect(),
        };
        let line = serde_json::to_string(&rec).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Vocabulary file: one token per line, line number = id.
pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut text = vocab.tokens().join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vocabulary::from_tokens(text.lines()).map_err(|e| Error::parse(path, 1, e.to_string()))
}
