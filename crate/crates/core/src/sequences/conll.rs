//! Whitespace-column token-classification files (one token per line, blank
//! lines between sentences, tag in the last column).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use sha2::{Digest, Sha256};

use super::{LabeledDataset, SeparationParams, TokenSequence};
use crate::error::{Error, Result};
use crate::numeric::{rng, unit_vector};

/// Reserved word whose embedding pads short sentences.
pub const PAD_TOKEN: &str = "<pad>";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConllOptions {
    pub embed_dim: usize,
    pub seed: u64,
    pub params: SeparationParams,
}

impl ConllOptions {
    pub fn new(embed_dim: usize, seed: u64) -> Self {
        Self {
            embed_dim,
            seed,
            params: SeparationParams {
                r_min: 0.5,
                r_max: 1.0,
                eps: 1e-3,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConllCorpus {
    pub dataset: LabeledDataset,
    /// Tag strings; class id `c` is `tags[c - 1]`.
    pub tags: Vec<String>,
    /// Distinct words, sorted.
    pub words: Vec<String>,
    /// Original sentence lengths before padding.
    pub lengths: Vec<usize>,
}

/// Deterministic embedding of a word: a seeded hash picks a Gaussian
/// direction and a radius inside the middle half of the shell.
pub fn embed_word(word: &str, opts: &ConllOptions) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(opts.seed.to_le_bytes());
    h.update(word.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 8];
    key.copy_from_slice(&digest[..8]);
    let mut r = rng(u64::from_le_bytes(key));
    let dir = unit_vector(&mut r, opts.embed_dim);
    let p = opts.params;
    let rad = p.r_min + (p.r_max - p.r_min) * (0.25 + 0.5 * r.random::<f64>());
    dir.into_iter().map(|x| x * rad).collect()
}

pub fn load_conll_columns(path: &Path, opts: &ConllOptions) -> Result<ConllCorpus> {
    parse_conll_str(&fs::read_to_string(path)?, opts)
}

pub fn parse_conll_str(text: &str, opts: &ConllOptions) -> Result<ConllCorpus> {
    if opts.embed_dim == 0 {
        return Err(Error::InvalidParams("embedding dimension must be at least 1".into()));
    }
    let mut sentences: Vec<Vec<(String, String)>> = Vec::new();
    let mut current = Vec::new();
    let mut width = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols[0] == "-DOCSTART-" {
            continue;
        }
        match width {
            None => width = Some(cols.len()),
            Some(w) if w != cols.len() => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected {w} columns, found {}", cols.len()),
                })
            }
            _ => {}
        }
        if cols.len() < 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "need at least a word and a tag column".into(),
            });
        }
        current.push((cols[0].to_string(), cols[cols.len() - 1].to_string()));
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    if sentences.is_empty() {
        return Err(Error::Empty("no sentences in column file".into()));
    }

    let tags: Vec<String> = sentences
        .iter()
        .flatten()
        .map(|(_, t)| t.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let tag_id: BTreeMap<&str, usize> = tags.iter().enumerate().map(|(i, t)| (t.as_str(), i + 1)).collect();
    let words: Vec<String> = sentences
        .iter()
        .flatten()
        .map(|(w, _)| w.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut cache: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for w in words.iter().map(String::as_str).chain([PAD_TOKEN]) {
        cache.insert(w, embed_word(w, opts));
    }

    let n = sentences.iter().map(Vec::len).max().unwrap_or(0);
    let d = opts.embed_dim;
    let lengths: Vec<usize> = sentences.iter().map(Vec::len).collect();
    let mut seqs = Vec::with_capacity(sentences.len());
    let mut labels = Vec::with_capacity(sentences.len());
    let mut valid = Vec::with_capacity(sentences.len());
    for s in &sentences {
        let cols: Vec<&Vec<f64>> = (0..n)
            .map(|k| s.get(k).map_or(&cache[PAD_TOKEN], |(w, _)| &cache[w.as_str()]))
            .collect();
        seqs.push(TokenSequence::new(Array2::from_shape_fn((d, n), |(t, k)| cols[k][t]))?);
        labels.push((0..n).map(|k| s.get(k).map_or(0, |(_, t)| tag_id[t.as_str()])).collect());
        valid.push((0..n).map(|k| k < s.len()).collect::<Vec<bool>>());
    }
    let padded = lengths.iter().any(|&l| l < n);
    let mut ds = LabeledDataset::new(seqs)?.with_seed(opts.seed);
    if padded {
        ds = ds.with_valid_mask(valid)?;
    }
    let dataset = ds.with_labels(labels, tags.len())?;
    Ok(ConllCorpus {
        dataset,
        tags,
        words,
        lengths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> ConllOptions {
        ConllOptions::new(4, 3)
    }

    #[test]
    fn two_lines_make_one_sequence() {
        let c = parse_conll_str("EU NNP B-ORG\nrejects VBZ O\n\n", &opts()).unwrap();
        assert_eq!(c.dataset.len(), 1);
        assert_eq!(c.dataset.seq_len(), 2);
        assert_eq!(c.dataset.valid, None);
    }

    #[test]
    fn repeated_word_has_identical_embedding() {
        let c = parse_conll_str("the O\ncat O\nthe O\n", &opts()).unwrap();
        let s = &c.dataset.sequences[0];
        assert!(crate::numeric::bitwise_eq(s.token(0), s.token(2)));
        assert!(!crate::numeric::bitwise_eq(s.token(0), s.token(1)));
    }

    #[test]
    fn three_tags_three_classes() {
        let c = parse_conll_str("a X\nb Y\n\nc Z\na X\n", &opts()).unwrap();
        assert_eq!(c.dataset.num_classes, 3);
        assert_eq!(c.tags, vec!["X", "Y", "Z"]);
        assert_eq!(c.dataset.labels.as_ref().unwrap()[1], vec![3, 1]);
    }

    #[test]
    fn short_sentences_are_padded_and_masked() {
        let c = parse_conll_str("a X\nb Y\nc X\n\nd Y\n", &opts()).unwrap();
        assert_eq!(c.dataset.seq_len(), 3);
        assert_eq!(c.dataset.valid.as_ref().unwrap()[1], vec![true, false, false]);
        assert_eq!(c.dataset.labels.as_ref().unwrap()[1], vec![2, 0, 0]);
        assert_eq!(c.lengths, vec![3, 1]);
    }

    #[test]
    fn embeddings_lie_in_shell() {
        let o = opts();
        for w in ["x", "y", PAD_TOKEN, "longer-word"] {
            let nrm = crate::numeric::norm(&embed_word(w, &o));
            assert!(nrm > o.params.r_min && nrm < o.params.r_max);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_conll_str("\n\n", &opts()), Err(Error::Empty(_))));
        assert!(matches!(
            parse_conll_str("a B C\nd E\n", &opts()),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
