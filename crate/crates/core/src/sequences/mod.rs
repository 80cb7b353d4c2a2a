//! Token sequences, tokenwise separatedness, dataset generation and vocabularies.
//!
//! A sequence is a `d x n` matrix whose columns are tokens. Token identity is
//! bitwise equality of columns; no epsilon-deduplication happens anywhere.

mod conll;
mod io;

pub use conll::{embed_word, load_conll_columns, parse_conll_str, ConllCorpus, ConllOptions, PAD_TOKEN};
pub use io::{load_dataset, save_dataset, DatasetFile, DatasetFormat};

use std::collections::{BTreeSet, HashMap};

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{bit_key, rng, sub_seed, unit_vector, view_dist, view_norm};

/// A `d x n` real matrix whose columns are tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence(Array2<f64>);

impl TokenSequence {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (d, n) = data.dim();
        if d == 0 || n == 0 {
            return Err(Error::Empty(format!("sequence of shape {d}x{n}")));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("token sequence entry".into()));
        }
        Ok(Self(data))
    }

    /// Build from a list of token columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.len();
        let d = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != d) {
            return Err(Error::DimensionMismatch("ragged token columns".into()));
        }
        let data = Array2::from_shape_fn((d, n), |(t, k)| columns[k][t]);
        Self::new(data)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn len(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn token(&self, k: usize) -> ArrayView1<'_, f64> {
        self.0.column(k)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    /// True if two columns of this sequence are bitwise equal.
    pub fn has_duplicate_tokens(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.0.columns().into_iter().any(|c| !seen.insert(bit_key(c)))
    }
}

/// `N` sequences sharing `d` and `n`, with optional per-token class labels.
///
/// Labels are 1-based class ids. When a validity mask is present, positions
/// marked invalid are padding and carry label 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub sequences: Vec<TokenSequence>,
    pub labels: Option<Vec<Vec<usize>>>,
    pub num_classes: usize,
    pub valid: Option<Vec<Vec<bool>>>,
    pub seed: Option<u64>,
}

impl LabeledDataset {
    pub fn new(sequences: Vec<TokenSequence>) -> Result<Self> {
        let first = sequences
            .first()
            .ok_or_else(|| Error::Empty("dataset has no sequences".into()))?;
        let (d, n) = (first.dim(), first.len());
        for (i, s) in sequences.iter().enumerate() {
            if s.dim() != d || s.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "sequence {i} has shape {}x{}, expected {d}x{n}",
                    s.dim(),
                    s.len()
                )));
            }
        }
        Ok(Self {
            sequences,
            labels: None,
            num_classes: 0,
            valid: None,
            seed: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<Vec<usize>>, num_classes: usize) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} label rows for {} sequences",
                labels.len(),
                self.len()
            )));
        }
        for (i, row) in labels.iter().enumerate() {
            if row.len() != self.seq_len() {
                return Err(Error::DimensionMismatch(format!("label row {i} has wrong length")));
            }
            for (k, &c) in row.iter().enumerate() {
                let padding = !self.is_valid(i, k);
                if !(padding && c == 0) && (c == 0 || c > num_classes) {
                    return Err(Error::InvalidParams(format!(
                        "label {c} at ({i},{k}) outside 1..={num_classes}"
                    )));
                }
            }
        }
        self.labels = Some(labels);
        self.num_classes = num_classes;
        Ok(self)
    }

    pub fn with_valid_mask(mut self, valid: Vec<Vec<bool>>) -> Result<Self> {
        if valid.len() != self.len() || valid.iter().any(|r| r.len() != self.seq_len()) {
            return Err(Error::DimensionMismatch("validity mask shape".into()));
        }
        self.valid = Some(valid);
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sequences[0].dim()
    }

    pub fn seq_len(&self) -> usize {
        self.sequences[0].len()
    }

    pub fn is_valid(&self, i: usize, k: usize) -> bool {
        self.valid.as_ref().is_none_or(|v| v[i][k])
    }

    pub fn label(&self, i: usize, k: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i][k])
    }

    /// Index of the first sequence containing a repeated token, if any.
    pub fn first_duplicate_sequence(&self) -> Option<usize> {
        self.sequences.iter().position(TokenSequence::has_duplicate_tokens)
    }
}

/// The separatedness regime `(r_min, r_max, eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationParams {
    pub r_min: f64,
    pub r_max: f64,
    pub eps: f64,
}

impl SeparationParams {
    pub fn new(r_min: f64, r_max: f64, eps: f64) -> Result<Self> {
        if !(r_min > 0.0 && r_min < r_max && r_max.is_finite() && eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "separation params need 0 < r_min < r_max and eps > 0, got ({r_min}, {r_max}, {eps})"
            )));
        }
        Ok(Self { r_min, r_max, eps })
    }
}

/// A position `(sequence, token)` inside a dataset.
pub type TokenPos = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    NormTooSmall { at: TokenPos, norm: f64 },
    NormTooLarge { at: TokenPos, norm: f64 },
    TooClose { a: TokenPos, b: TokenPos, dist: f64 },
}

/// Cap on the number of violations stored in a report.
pub const MAX_REPORTED_VIOLATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub passes: bool,
    pub min_norm: f64,
    pub max_norm: f64,
    /// Smallest distance between tokens that are not bitwise equal; `inf` when there are none.
    pub min_pair_dist: f64,
    /// `min_norm - r_min`, `r_max - max_norm`, `min_pair_dist - eps`.
    pub margins: [f64; 3],
    pub violation_count: usize,
    pub violating_indices: Vec<Violation>,
}

/// Check the three tokenwise separatedness conditions with strict inequalities.
pub fn check_separated(ds: &LabeledDataset, p: &SeparationParams) -> Result<SeparationReport> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let d = ds.dim();
    if ds.sequences.iter().any(|s| s.dim() != d) {
        return Err(Error::DimensionMismatch("sequences differ in embedding dimension".into()));
    }
    let vocab = extract_vocab(ds);
    let mut violations = Vec::new();
    let mut count = 0usize;
    let mut push = |v: Violation, violations: &mut Vec<Violation>| {
        count += 1;
        if violations.len() < MAX_REPORTED_VIOLATIONS {
            violations.push(v);
        }
    };

    let mut min_norm = f64::INFINITY;
    let mut max_norm = 0.0_f64;
    for (i, s) in ds.sequences.iter().enumerate() {
        for k in 0..s.len() {
            let nrm = view_norm(s.token(k));
            min_norm = min_norm.min(nrm);
            max_norm = max_norm.max(nrm);
            if !(nrm > p.r_min) {
                push(Violation::NormTooSmall { at: (i, k), norm: nrm }, &mut violations);
            }
            if !(nrm < p.r_max) {
                push(Violation::NormTooLarge { at: (i, k), norm: nrm }, &mut violations);
            }
        }
    }

    let mut min_pair = f64::INFINITY;
    for a in 0..vocab.len() {
        for b in (a + 1)..vocab.len() {
            let dd = view_dist(vocab.tokens[a].view(), vocab.tokens[b].view());
            min_pair = min_pair.min(dd);
            if !(dd > p.eps) {
                push(
                    Violation::TooClose {
                        a: vocab.first_seen[a],
                        b: vocab.first_seen[b],
                        dist: dd,
                    },
                    &mut violations,
                );
            }
        }
    }

    Ok(SeparationReport {
        passes: count == 0,
        min_norm,
        max_norm,
        min_pair_dist: min_pair,
        margins: [min_norm - p.r_min, p.r_max - max_norm, min_pair - p.eps],
        violation_count: count,
        violating_indices: violations,
    })
}

/// The deduplicated vocabulary of a dataset and each sequence's token index set.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub tokens: Vec<Array1<f64>>,
    pub per_sequence: Vec<BTreeSet<usize>>,
    /// Vocabulary index of every `(sequence, token)` position.
    pub index_of: Vec<Vec<usize>>,
    /// First position at which each vocabulary entry appears.
    pub first_seen: Vec<TokenPos>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Deduplicate tokens by bitwise equality, in order of first appearance.
pub fn extract_vocab(ds: &LabeledDataset) -> Vocabulary {
    let mut lookup: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut tokens = Vec::new();
    let mut first_seen = Vec::new();
    let mut per_sequence = Vec::with_capacity(ds.len());
    let mut index_of = Vec::with_capacity(ds.len());
    for (i, s) in ds.sequences.iter().enumerate() {
        let mut set = BTreeSet::new();
        let mut row = Vec::with_capacity(s.len());
        for k in 0..s.len() {
            let col = s.token(k);
            let idx = *lookup.entry(bit_key(col)).or_insert_with(|| {
                tokens.push(col.to_owned());
                first_seen.push((i, k));
                tokens.len() - 1
            });
            set.insert(idx);
            row.push(idx);
        }
        per_sequence.push(set);
        index_of.push(row);
    }
    Vocabulary {
        tokens,
        per_sequence,
        index_of,
        first_seen,
    }
}

/// Knobs for [`gen_separated_dataset_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub num_sequences: usize,
    pub seq_len: usize,
    pub dim: usize,
    pub params: SeparationParams,
    pub no_dup_tokens: bool,
    /// Size of the shared vocabulary; defaults to `num_sequences * seq_len`.
    pub vocab_size: Option<usize>,
    pub seed: u64,
    /// Rejection budget per vocabulary token.
    pub budget_per_token: usize,
}

impl GenConfig {
    pub fn new(num_sequences: usize, seq_len: usize, dim: usize, params: SeparationParams, seed: u64) -> Self {
        Self {
            num_sequences,
            seq_len,
            dim,
            params,
            no_dup_tokens: true,
            vocab_size: None,
            seed,
            budget_per_token: 10_000,
        }
    }

    pub fn vocab_size(mut self, v: usize) -> Self {
        self.vocab_size = Some(v);
        self
    }

    pub fn allow_duplicates(mut self) -> Self {
        self.no_dup_tokens = false;
        self
    }
}

/// Generate `N` sequences of length `n` in `R^d` that are tokenwise separated under `p`.
pub fn gen_separated_dataset(
    num_sequences: usize,
    seq_len: usize,
    dim: usize,
    p: SeparationParams,
    no_dup_tokens: bool,
    seed: u64,
) -> Result<LabeledDataset> {
    let mut cfg = GenConfig::new(num_sequences, seq_len, dim, p, seed);
    cfg.no_dup_tokens = no_dup_tokens;
    gen_separated_dataset_with(&cfg)
}

/// Sample a separated vocabulary in the shell `r_min < |x| < r_max`, then draw sequences from it.
pub fn gen_separated_dataset_with(cfg: &GenConfig) -> Result<LabeledDataset> {
    let (big_n, n, d) = (cfg.num_sequences, cfg.seq_len, cfg.dim);
    if big_n == 0 || n == 0 || d == 0 {
        return Err(Error::InvalidParams("N, n and d must be at least 1".into()));
    }
    let p = cfg.params;
    let vocab_size = cfg.vocab_size.unwrap_or(big_n * n);
    if vocab_size == 0 {
        return Err(Error::InvalidParams("vocabulary must be nonempty".into()));
    }
    if cfg.no_dup_tokens && vocab_size < n {
        return Err(Error::Infeasible(format!(
            "{n} distinct tokens per sequence need a vocabulary of at least {n}, got {vocab_size}"
        )));
    }
    if vocab_size > 1 && p.eps >= 2.0 * p.r_max {
        return Err(Error::Infeasible(format!(
            "eps = {} cannot separate two points inside a ball of diameter {}",
            p.eps,
            2.0 * p.r_max
        )));
    }

    let mut r = rng(sub_seed(cfg.seed, 1));
    let mut vocab: Vec<Array1<f64>> = Vec::with_capacity(vocab_size);
    let (lo, hi) = (p.r_min.powi(d as i32), p.r_max.powi(d as i32));
    for _ in 0..vocab_size {
        let mut accepted = None;
        for _ in 0..cfg.budget_per_token {
            let dir = unit_vector(&mut r, d);
            let u: f64 = r.random();
            // radius with density proportional to r^(d-1): uniform in the shell volume
            let rad = (lo + u * (hi - lo)).powf(1.0 / d as f64);
            let cand = Array1::from_iter(dir.into_iter().map(|x| x * rad));
            let nrm = view_norm(cand.view());
            if !(nrm > p.r_min && nrm < p.r_max) {
                continue;
            }
            if vocab.iter().all(|v| view_dist(v.view(), cand.view()) > p.eps) {
                accepted = Some(cand);
                break;
            }
        }
        match accepted {
            Some(c) => vocab.push(c),
            None => {
                return Err(Error::Infeasible(format!(
                    "could not place token {} of {vocab_size} after {} candidates",
                    vocab.len() + 1,
                    cfg.budget_per_token
                )))
            }
        }
    }

    let mut sequences = Vec::with_capacity(big_n);
    for _ in 0..big_n {
        let ids: Vec<usize> = if cfg.no_dup_tokens {
            sample_indices(&mut r, vocab_size, n).into_vec()
        } else {
            (0..n).map(|_| r.random_range(0..vocab_size)).collect()
        };
        let data = Array2::from_shape_fn((d, n), |(t, k)| vocab[ids[k]][t]);
        sequences.push(TokenSequence::new(data)?);
    }
    Ok(LabeledDataset::new(sequences)?.with_seed(cfg.seed))
}

/// Assign labels that depend only on `(sequence vocabulary, token)`, so the
/// result is consistently labeled by construction.
pub fn assign_context_labels(ds: LabeledDataset, num_classes: usize, seed: u64) -> Result<LabeledDataset> {
    if num_classes == 0 {
        return Err(Error::InvalidParams("need at least one class".into()));
    }
    let vocab = extract_vocab(&ds);
    let labels = (0..ds.len())
        .map(|i| {
            let ctx = vocab.per_sequence[i]
                .iter()
                .fold(sub_seed(seed, 0xC0), |h, &t| sub_seed(h, t as u64 + 1));
            vocab.index_of[i]
                .iter()
                .map(|&tok| (sub_seed(ctx, tok as u64 + 7) % num_classes as u64) as usize + 1)
                .collect()
        })
        .collect();
    ds.with_labels(labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ds_from(cols: &[&[Vec<f64>]]) -> LabeledDataset {
        LabeledDataset::new(
            cols.iter()
                .map(|c| TokenSequence::from_columns(c).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn params(a: f64, b: f64, e: f64) -> SeparationParams {
        SeparationParams::new(a, b, e).unwrap()
    }

    #[test]
    fn single_token_passes() {
        let ds = ds_from(&[&[vec![1.0, 0.0]]]);
        let rep = check_separated(&ds, &params(0.5, 1.5, 0.1)).unwrap();
        assert!(rep.passes);
        assert_eq!(rep.min_pair_dist, f64::INFINITY);
        assert_eq!(rep.violation_count, 0);
    }

    #[test]
    fn identical_tokens_across_sequences_are_not_pairs() {
        let a = vec![1.0, 0.0];
        let b = vec![0.0, 1.0];
        let ds = ds_from(&[&[a.clone(), b.clone()], &[b, a]]);
        let rep = check_separated(&ds, &params(0.5, 1.5, 0.1)).unwrap();
        assert!(rep.passes);
        assert!((rep.min_pair_dist - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn close_tokens_fail_with_exact_distance() {
        let ds = ds_from(&[&[vec![1.0, 0.0], vec![1.0, 0.05]]]);
        let rep = check_separated(&ds, &params(0.5, 1.5, 0.1)).unwrap();
        assert!(!rep.passes);
        assert!((rep.min_pair_dist - 0.05).abs() < 1e-15);
        assert!(matches!(rep.violating_indices[0], Violation::TooClose { a: (0, 0), b: (0, 1), .. }));
    }

    #[test]
    fn norm_bounds_are_strict() {
        let ds = ds_from(&[&[vec![1.0, 0.0]]]);
        assert!(!check_separated(&ds, &params(1.0, 2.0, 0.1)).unwrap().passes);
        assert!(!check_separated(&ds, &params(0.5, 1.0, 0.1)).unwrap().passes);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let a = TokenSequence::from_columns(&[vec![1.0, 0.0]]).unwrap();
        let b = TokenSequence::from_columns(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(LabeledDataset::new(vec![a, b]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn tiny_generation_round_trips_through_check() {
        let p = params(0.5, 1.0, 0.1);
        let ds = gen_separated_dataset(1, 1, 2, p, true, 11).unwrap();
        assert!(check_separated(&ds, &p).unwrap().passes);
    }

    #[test]
    fn generation_is_deterministic() {
        let p = params(0.5, 1.0, 0.1);
        let a = gen_separated_dataset(5, 4, 3, p, true, 42).unwrap();
        let b = gen_separated_dataset(5, 4, 3, p, true, 42).unwrap();
        for (x, y) in a.sequences.iter().zip(&b.sequences) {
            assert!(x.as_array().iter().zip(y.as_array()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
        let c = gen_separated_dataset(5, 4, 3, p, true, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn eps_beyond_diameter_is_infeasible() {
        let p = params(0.5, 1.0, 2.5);
        assert!(matches!(gen_separated_dataset(2, 2, 2, p, true, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn no_dup_generation_has_distinct_columns() {
        let p = params(0.5, 1.0, 0.1);
        let cfg = GenConfig::new(30, 5, 4, p, 9).vocab_size(8);
        let ds = gen_separated_dataset_with(&cfg).unwrap();
        assert_eq!(ds.first_duplicate_sequence(), None);
        assert!(extract_vocab(&ds).len() <= 8);
    }

    #[test]
    fn vocab_examples() {
        let t: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 + 1.0, 0.5]).collect();
        let one = ds_from(&[&t[..3]]);
        assert_eq!(extract_vocab(&one).len(), 3);

        let two = ds_from(&[&[t[0].clone(), t[1].clone()], &[t[1].clone(), t[2].clone()]]);
        assert_eq!(extract_vocab(&two).len(), 3); // 2n - 1 with n = 2

        let same = ds_from(&[&[t[0].clone(), t[0].clone()], &[t[0].clone(), t[0].clone()]]);
        let v = extract_vocab(&same);
        assert_eq!(v.len(), 1);
        assert_eq!(v.per_sequence[1], BTreeSet::from([0]));
    }

    #[test]
    fn context_labels_are_consistent() {
        let p = params(0.5, 1.0, 0.1);
        let cfg = GenConfig::new(40, 3, 3, p, 5).vocab_size(4);
        let ds = assign_context_labels(gen_separated_dataset_with(&cfg).unwrap(), 3, 1).unwrap();
        let vocab = extract_vocab(&ds);
        let labels = ds.labels.as_ref().unwrap();
        let mut seen: HashMap<(Vec<usize>, usize), usize> = HashMap::new();
        for i in 0..ds.len() {
            let ctx: Vec<usize> = vocab.per_sequence[i].iter().copied().collect();
            for k in 0..ds.seq_len() {
                let key = (ctx.clone(), vocab.index_of[i][k]);
                let prev = *seen.entry(key).or_insert(labels[i][k]);
                assert_eq!(prev, labels[i][k]);
                assert!((1..=3).contains(&labels[i][k]));
            }
        }
    }

    #[test]
    fn labels_out_of_range_rejected() {
        let ds = ds_from(&[&[vec![1.0, 0.0]]]);
        assert!(ds.clone().with_labels(vec![vec![3]], 2).is_err());
        assert!(ds.clone().with_labels(vec![vec![0]], 2).is_err());
        assert!(ds.with_labels(vec![vec![2]], 2).is_ok());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(TokenSequence::new(array![[f64::NAN]]).is_err());
    }
}
