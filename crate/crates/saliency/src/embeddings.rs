//! Pretrained embeddings in whitespace-separated text form: a token followed
//! by its vector, one token per line.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use saliency_core::autodiff::Array;
use saliency_core::data::Vocabulary;
use saliency_core::model::init_embedding;

use crate::{Error, Result};

/// An initial embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedEmbeddings {
    pub dim: usize,
    /// `[vocab, dim]`; the padding row is zero unless the file covers it.
    pub table: Array,
    /// Vocabulary rows taken from the file.
    pub coverage: usize,
}

/// Reads vectors for the tokens of `vocab`. Rows the file does not cover get
/// the model's default initialization from `seed`. The dimension comes from
/// the file, or `default_dim` when the file is empty.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, default_dim: usize, seed: u64) -> Result<LoadedEmbeddings> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut dim: Option<usize> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else {
            continue;
        };
        let values: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, i + 1, format!("bad number: {e}")))?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected {d} values, found {}", values.len()),
                ))
            }
            _ => {}
        }
        if let Some(id) = vocab.id(token) {
            rows[id as usize] = Some(values);
        }
    }
    let dim = dim.unwrap_or(default_dim);
    let mut table = init_embedding(vocab.len(), dim, seed);
    let mut coverage = 0;
    for (id, row) in rows.into_iter().enumerate() {
        if let Some(values) = row {
            coverage += 1;
            table.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
        }
    }
    Ok(LoadedEmbeddings {
        dim,
        table,
        coverage,
    })
}
