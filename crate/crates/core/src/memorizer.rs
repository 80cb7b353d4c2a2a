//! Exact memorization with one attention layer and one ReLU layer.
//!
//! Attention turns every `(sequence vocabulary, token)` context into a distinct
//! vector. Those vectors are projected onto a certified direction and a
//! piecewise-linear ReLU interpolant maps each projection to its label.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::attention::{build_contextual_map, self_attention_softmax, verify_contextual_map, AttentionWeights, CMMode};
use crate::error::{Error, Result};
use crate::ffn::{FFNet, InputWeights};
use crate::numeric::{dist, dot, sub_seed};
use crate::projection::{augment_with_origin, certify_direction, find_distance_preserving_direction, DEFAULT_MAX_TRIES};
use crate::sequences::{check_separated, extract_vocab, LabeledDataset, SeparationParams, TokenSequence};

/// Number of certified directions tried when keying the interpolant.
pub const DIRECTION_CANDIDATES: usize = 8;

/// Class `c` as the vector `c e_1`.
pub fn encode_label(c: usize, d: usize) -> Array1<f64> {
    let mut y = Array1::zeros(d);
    y[0] = c as f64;
    y
}

/// Nearest class to the first coordinate.
pub fn decode_label(y: &[f64]) -> usize {
    y[0].round().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FFMemorizerInfo {
    pub keys: usize,
    pub min_key_dist: f64,
    /// Smallest gap between consecutive projected keys.
    pub min_projected_gap: f64,
    pub direction: Vec<f64>,
}

/// A ReLU network that maps each key `h` to `h + net(h) = target`.
///
/// Keys are sorted by their projection `t_j = w . h_j` and the residual
/// `target - key` is linearly interpolated between consecutive keys with
/// `K - 1` ramps that all read the same projection.
pub fn build_ff_memorizer(keys: &[Vec<f64>], targets: &[Vec<f64>], gap: f64) -> Result<FFNet> {
    build_ff_memorizer_with_info(keys, targets, gap, 0).map(|(net, _)| net)
}

pub fn build_ff_memorizer_with_info(
    keys: &[Vec<f64>],
    targets: &[Vec<f64>],
    gap: f64,
    seed: u64,
) -> Result<(FFNet, FFMemorizerInfo)> {
    if keys.is_empty() {
        return Err(Error::Empty("no keys to memorize".into()));
    }
    if keys.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!("{} keys, {} targets", keys.len(), targets.len())));
    }
    let d = keys[0].len();
    if keys.iter().chain(targets).any(|v| v.len() != d) {
        return Err(Error::DimensionMismatch("keys and targets must share one dimension".into()));
    }

    // merge bitwise-equal keys, insisting their targets agree
    let mut uniq: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    let mut ks: Vec<&Vec<f64>> = Vec::new();
    let mut ys: Vec<&Vec<f64>> = Vec::new();
    for (k, y) in keys.iter().zip(targets) {
        let key: Vec<u64> = k.iter().map(|x| x.to_bits()).collect();
        match uniq.get(&key) {
            Some(&i) if ys[i] != y => {
                return Err(Error::InconsistentLabels("equal keys with different targets".into()));
            }
            Some(_) => {}
            None => {
                uniq.insert(key, ks.len());
                ks.push(k);
                ys.push(y);
            }
        }
    }

    let mut min_key_dist = f64::INFINITY;
    for i in 0..ks.len() {
        for j in (i + 1)..ks.len() {
            min_key_dist = min_key_dist.min(dist(ks[i], ks[j]));
        }
    }
    if !(min_key_dist > gap) {
        return Err(Error::KeysTooClose(format!("closest keys are {min_key_dist} apart, need more than {gap}")));
    }

    let owned: Vec<Vec<f64>> = ks.iter().map(|k| (*k).clone()).collect();
    let (w, t) = best_direction(&owned, seed)?;
    let mut order: Vec<usize> = (0..ks.len()).collect();
    order.sort_by(|&a, &b| t[a].total_cmp(&t[b]));
    let ts: Vec<f64> = order.iter().map(|&i| t[i]).collect();
    let min_projected_gap = ts.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min);
    if !(min_projected_gap > 0.0) {
        return Err(Error::KeysTooClose("projected keys collide".into()));
    }
    // residual the network must add on top of the skip connection
    let res: Vec<Array1<f64>> = order
        .iter()
        .map(|&i| Array1::from_iter(ys[i].iter().zip(ks[i]).map(|(y, h)| y - h)))
        .collect();

    let k = ks.len();
    let q = k - 1;
    let mut w2 = Array2::zeros((d, q));
    let mut prev = Array1::zeros(d);
    for j in 0..q {
        let slope = (&res[j + 1] - &res[j]) / (ts[j + 1] - ts[j]);
        w2.column_mut(j).assign(&(&slope - &prev));
        prev = slope;
    }
    let b1 = Array1::from_iter(ts[..q].iter().map(|t| -t));
    let net = FFNet::new(
        InputWeights::Shared(Array1::from(w.clone())),
        b1,
        w2,
        res[0].clone(),
        true,
    )?;
    Ok((
        net,
        FFMemorizerInfo {
            keys: k,
            min_key_dist,
            min_projected_gap,
            direction: w,
        },
    ))
}

/// Among several certified directions, keep the one whose projections are most spread out.
fn best_direction(keys: &[Vec<f64>], seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let set = augment_with_origin(keys)?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for c in 0..DIRECTION_CANDIDATES {
        let cert = find_distance_preserving_direction(keys, DEFAULT_MAX_TRIES, sub_seed(seed, c as u64))?;
        debug_assert!(certify_direction(&cert.v, &set).is_some());
        let mut t: Vec<f64> = keys.iter().map(|k| dot(&cert.v, k)).collect();
        t.sort_by(f64::total_cmp);
        let g = t.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|(bg, _)| g > *bg) {
            best = Some((g, cert.v));
        }
    }
    let v = best.map(|(_, v)| v).unwrap_or_default();
    let t = keys.iter().map(|k| dot(&v, k)).collect();
    Ok((v, t))
}

/// Column `k` is `2 k r_max` in every coordinate, `k = 1..n`.
pub fn build_positional_encoding(n: usize, d: usize, r_max: f64) -> Array2<f64> {
    Array2::from_shape_fn((d, n), |(_, k)| 2.0 * (k + 1) as f64 * r_max)
}

/// Shell parameters that `X + E` is guaranteed to satisfy, with the
/// separation taken from the data since the shift alone does not provide one.
pub fn shifted_params(shifted: &LabeledDataset, n: usize, d: usize, r_max: f64) -> Result<SeparationParams> {
    let vocab = extract_vocab(shifted);
    let pts: Vec<Vec<f64>> = vocab.tokens.iter().map(|t| t.to_vec()).collect();
    let min_d = crate::projection::min_pairwise_dist(&pts);
    let eps = if min_d.is_finite() { min_d * (1.0 - 1e-9) } else { r_max };
    if !(eps > 0.0) {
        return Err(Error::Precondition("shifted tokens coincide".into()));
    }
    SeparationParams::new(r_max, (2.0 * n as f64 * (d as f64).sqrt() + 1.0) * r_max, eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerModel {
    pub attn: AttentionWeights,
    pub ff: FFNet,
    pub pos_enc: Option<Array2<f64>>,
}

impl TransformerModel {
    pub fn forward(&self, x: &TokenSequence) -> Result<TokenSequence> {
        let input = match &self.pos_enc {
            Some(e) => TokenSequence::new(x.as_array() + e)?,
            None => x.clone(),
        };
        TokenSequence::new(self.ff.forward_matrix(self_attention_softmax(&input, &self.attn)?.as_array())?)
    }

    pub fn param_count(&self) -> usize {
        self.attn.param_count() + self.ff.param_count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationReport {
    pub exact_match_rate: f64,
    pub param_count: usize,
    /// `4(s + d) + d(2nN + d)`
    pub param_bound: usize,
    pub contexts: usize,
    pub min_key_dist: f64,
    pub min_projected_gap: f64,
    pub attention_min_gap_log: f64,
    pub used_pos_enc: bool,
}

/// Memorize a consistently labeled dataset with attention followed by one ReLU layer.
pub fn build_one_layer_memorizer(
    ds: &LabeledDataset,
    p: &SeparationParams,
    mode: CMMode,
    use_pos_enc: bool,
    seed: u64,
) -> Result<(TransformerModel, MemorizationReport)> {
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::Precondition("memorization needs labels".into()))?;
    let (n, d) = (ds.seq_len(), ds.dim());
    let sep = check_separated(ds, p)?;
    if !sep.passes {
        return Err(Error::Precondition(format!("dataset is not separated ({} violations)", sep.violation_count)));
    }

    let (input, params, pos_enc) = if use_pos_enc {
        let e = build_positional_encoding(n, d, p.r_max);
        let shifted = LabeledDataset {
            sequences: ds
                .sequences
                .iter()
                .map(|s| TokenSequence::new(s.as_array() + &e))
                .collect::<Result<_>>()?,
            ..ds.clone()
        };
        let sp = shifted_params(&shifted, n, d, p.r_max)?;
        (shifted, sp, Some(e))
    } else {
        if let Some(i) = ds.first_duplicate_sequence() {
            return Err(Error::DuplicateTokens { sequence: i });
        }
        (ds.clone(), *p, None)
    };

    let s = 1;
    let attn = build_contextual_map(&input, &params, mode, s, sub_seed(seed, 1))?;
    let cm = verify_contextual_map(&attn, &input, &params)?;

    // one key per context (vocabulary set, token)
    let vocab = extract_vocab(&input);
    let mut contexts: BTreeMap<(BTreeSet<usize>, usize), (Vec<f64>, usize)> = BTreeMap::new();
    for (i, x) in input.sequences.iter().enumerate() {
        let h = self_attention_softmax(x, &attn)?;
        for k in 0..n {
            if !ds.is_valid(i, k) {
                continue;
            }
            let ctx = (vocab.per_sequence[i].clone(), vocab.index_of[i][k]);
            let c = labels[i][k];
            match contexts.get(&ctx) {
                Some((_, prev)) if *prev != c => {
                    return Err(Error::InconsistentLabels(format!(
                        "sequence {i} token {k} has label {c}, an identical context has {prev}"
                    )));
                }
                Some(_) => {}
                None => {
                    contexts.insert(ctx, (h.token(k).to_vec(), c));
                }
            }
        }
    }
    let keys: Vec<Vec<f64>> = contexts.values().map(|(h, _)| h.clone()).collect();
    let targets: Vec<Vec<f64>> = contexts.values().map(|(_, c)| encode_label(*c, d).to_vec()).collect();
    let (ff, info) = build_ff_memorizer_with_info(&keys, &targets, 0.0, sub_seed(seed, 2))?;

    let model = TransformerModel { attn, ff, pos_enc };
    let rate = eval_memorization(&model, ds)?;
    let report = MemorizationReport {
        exact_match_rate: rate,
        param_count: model.param_count(),
        param_bound: 4 * (s + d) + d * (2 * n * ds.len() + d),
        contexts: info.keys,
        min_key_dist: info.min_key_dist,
        min_projected_gap: info.min_projected_gap,
        attention_min_gap_log: cm.min_distinct_gap_log,
        used_pos_enc: use_pos_enc,
    };
    Ok((model, report))
}

/// Fraction of labeled (unpadded) tokens whose decoded output equals the label.
pub fn eval_memorization(model: &TransformerModel, ds: &LabeledDataset) -> Result<f64> {
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::Precondition("evaluation needs labels".into()))?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, x) in ds.sequences.iter().enumerate() {
        let y = model.forward(x)?;
        for k in 0..x.len() {
            if !ds.is_valid(i, k) {
                continue;
            }
            total += 1;
            if decode_label(&y.token(k).to_vec()) == labels[i][k] {
                hit += 1;
            }
        }
    }
    Ok(if total == 0 { 1.0 } else { hit as f64 / total as f64 })
}
