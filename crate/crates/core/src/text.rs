//! Tokenization and pretrained word-vector lookup.
//!
//! A [`Vocabulary`] holds one embedding row per known token plus a zero
//! pad row and a shared out-of-vocabulary row. The embedding matrix is
//! copied into the model as a trainable parameter, so these rows are
//! initial values, not frozen features.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

/// Lowercases, splits on whitespace and strips leading/trailing
/// punctuation; apostrophes inside words survive.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed)
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    /// (V+2) x dim: one row per token, then the pad row, then the OOV row.
    pub matrix: Tensor,
    pub dim: usize,
    pub pad_index: usize,
    pub oov_index: usize,
    /// Lines skipped for wrong arity plus duplicate tokens dropped.
    pub warnings: usize,
}

/// Token indices padded/truncated to a fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub indices: Vec<usize>,
    pub n_valid: usize,
}

impl Vocabulary {
    fn build(rows: Vec<(String, Vec<f64>)>, dim: usize, warnings: usize, seed: u64) -> Self {
        let v = rows.len();
        let mut data = Vec::with_capacity((v + 2) * dim);
        let mut index = HashMap::with_capacity(v);
        for (i, (token, vals)) in rows.into_iter().enumerate() {
            index.insert(token, i);
            data.extend_from_slice(&vals);
        }
        // pad row: zeros
        data.extend(std::iter::repeat(0.0).take(dim));
        // oov row: seeded normal, std 0.1
        let mut rng = SeededRng::new(seed);
        data.extend((0..dim).map(|_| rng.normal() * 0.1));
        Vocabulary {
            index,
            matrix: Tensor::new(vec![v + 2, dim], data).expect("row arity enforced"),
            dim,
            pad_index: v,
            oov_index: v + 1,
            warnings,
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.index.len()
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.oov_index)
    }

    /// Tokenizes and maps a transcript to a fixed-length index
    /// sequence.
    pub fn encode(&self, text: &str, m_max: usize) -> TokenSequence {
        let tokens = tokenize(text);
        let n_valid = tokens.len().min(m_max);
        let mut indices: Vec<usize> = tokens[..n_valid].iter().map(|t| self.lookup(t)).collect();
        indices.resize(m_max, self.pad_index);
        TokenSequence { indices, n_valid }
    }
}

/// Parses a GloVe-style text file: one `token v1 .. v_dim` entry per
/// line. Lines with the wrong arity are skipped and counted; on a
/// duplicated token the first occurrence wins.
pub fn load_pretrained(path: impl AsRef<Path>, dim: usize) -> Result<Vocabulary> {
    let display = path.as_ref().display().to_string();
    let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(&display, e))?;
    let reader = std::io::BufReader::new(file);

    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut warnings = 0usize;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = match parts.next() {
            Some(t) => t.to_string(),
            None => continue,
        };
        let fields: Vec<&str> = parts.collect();
        if fields.len() != dim {
            warnings += 1;
            continue;
        }
        let vals: Vec<f64> = fields.iter().filter_map(|p| p.parse::<f64>().ok()).collect();
        if vals.len() != dim {
            warnings += 1;
            continue;
        }
        if seen.contains_key(&token) {
            warnings += 1;
            continue;
        }
        seen.insert(token.clone(), ());
        rows.push((token, vals));
    }
    if rows.is_empty() {
        return Err(Error::Format {
            path: display,
            detail: format!("no usable {dim}-dimensional entries"),
        });
    }
    Ok(Vocabulary::build(rows, dim, warnings, 0x6f6f76)) // fixed oov seed
}

/// Builds a vocabulary directly from tokens with seeded random rows,
/// for datasets that ship no pretrained vectors.
pub fn vocabulary_from_tokens(tokens: &[String], dim: usize, rng: &mut SeededRng) -> Vocabulary {
    let mut uniq: Vec<String> = Vec::new();
    let mut seen = HashMap::new();
    for t in tokens {
        if seen.insert(t.clone(), ()).is_none() {
            uniq.push(t.clone());
        }
    }
    let rows: Vec<(String, Vec<f64>)> = uniq
        .into_iter()
        .map(|t| {
            let vals = (0..dim).map(|_| rng.normal() * 0.1).collect();
            (t, vals)
        })
        .collect();
    Vocabulary::build(rows, dim, 0, rng.seed())
}

/// Looks up already-tokenized words, truncating/padding to `m_max`
/// rows. Rows at or beyond `n_valid` are zero.
pub fn embed_sequence(tokens: &[String], vocab: &Vocabulary, m_max: usize) -> Result<(Tensor, usize)> {
    if m_max == 0 {
        return Err(Error::contract("embed_sequence: m_max must be >= 1"));
    }
    let n_valid = tokens.len().min(m_max);
    let mut data = vec![0.0; m_max * vocab.dim];
    for (i, token) in tokens[..n_valid].iter().enumerate() {
        let row = vocab.lookup(token);
        data[i * vocab.dim..(i + 1) * vocab.dim].copy_from_slice(vocab.matrix.row(row));
    }
    Ok((Tensor::new(vec![m_max, vocab.dim], data)?, n_valid))
}
