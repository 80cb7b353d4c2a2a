//! Building rank-1 attention that acts as a contextual mapping, and checking
//! that a given attention layer is one on a dataset.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{projections, self_attention_softmax, AttentionWeights};
use crate::boltzmann::boltz_log_gap;
use crate::error::{Error, Result};
use crate::numeric::{view_dist, view_norm};
use crate::projection::{build_kq_weights, build_kq_weights_with_scale, max_projection};
use crate::sequences::{check_separated, extract_vocab, LabeledDataset, SeparationParams};

/// How large to make the logit scale `|u . u'|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CMMode {
    /// The worst-case scale `(|V|+1)^4 (pi d / 8)(2 log n + 3) / (eps r_min)`.
    ExactConstant,
    /// A fixed scale.
    Scaled { beta: f64 },
    /// Pick the scale so the largest logit magnitude over the vocabulary is `target`.
    MaxLogit { target: f64 },
}

/// Log of the guaranteed gap between outputs of different contexts.
pub fn contextual_delta_log(n: usize, vocab_size: usize, d: usize, p: &SeparationParams) -> f64 {
    let ln_n = (n as f64).ln();
    let big = 2.0 * ln_n + 3.0;
    let v1 = vocab_size as f64 + 1.0;
    let d = d as f64;
    2f64.ln() + 2.0 * ln_n.ln() + 2.0 * p.eps.ln() + p.r_min.ln()
        - 2.0 * p.r_max.ln()
        - 4.0 * v1.ln()
        - big.ln()
        - PI.ln()
        - d.ln()
        - v1.powi(4) * big * PI * d * p.r_max * p.r_max / (4.0 * p.eps * p.r_min)
}

/// Rank-1 weights with `u'' = e_1` and `u'''` along `v`, `|W_O u''| = eps / (4 r_max)`.
pub fn build_contextual_map(
    ds: &LabeledDataset,
    p: &SeparationParams,
    mode: CMMode,
    s: usize,
    seed: u64,
) -> Result<AttentionWeights> {
    let sep = check_separated(ds, p)?;
    if !sep.passes {
        return Err(Error::Precondition(format!(
            "dataset is not separated: {} violations, margins {:?}",
            sep.violation_count, sep.margins
        )));
    }
    if let Some(i) = ds.first_duplicate_sequence() {
        return Err(Error::DuplicateTokens { sequence: i });
    }
    let vocab = extract_vocab(ds);
    let delta = 2.0 * (ds.seq_len() as f64).ln() + 3.0;
    let kq = match mode {
        CMMode::ExactConstant => build_kq_weights(&vocab, p, delta, s, seed)?,
        CMMode::Scaled { beta } => build_kq_weights_with_scale(&vocab, beta, s, seed)?,
        CMMode::MaxLogit { target } => {
            if !(target > 0.0 && target.is_finite()) {
                return Err(Error::InvalidParams(format!("max-logit target must be positive, got {target}")));
            }
            let mut kq = build_kq_weights_with_scale(&vocab, 1.0, s, seed)?;
            let tokens: Vec<Vec<f64>> = vocab.tokens.iter().map(|t| t.to_vec()).collect();
            let m = max_projection(&kq.v, &tokens);
            kq.scale = target / (m * m);
            kq.u[0] = kq.scale.sqrt();
            kq.u_prime[0] = kq.scale.sqrt();
            kq
        }
    };
    let mut u_dd = vec![0.0; s];
    u_dd[0] = 1.0;
    let gain = p.eps / (4.0 * p.r_max);
    let u_ddd = kq.v.iter().map(|x| x * gain).collect();
    AttentionWeights::new(kq, u_dd, u_ddd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CMReport {
    /// `r_max + eps / 4`
    pub r_bound: f64,
    pub delta_theory_log: f64,
    pub max_out_norm: f64,
    /// `exp(min_distinct_gap_log)`; may underflow to 0 for extreme constructions.
    pub min_distinct_gap: f64,
    pub min_distinct_gap_log: f64,
    /// Smallest gap among pairs sharing a token but not a vocabulary.
    pub min_same_token_gap_log: f64,
    pub pairs_checked: usize,
    pub same_token_pairs: usize,
    pub max_logit: f64,
    /// Largest `|F(X)_k - X_k| / ((eps / 4 r_max) max_k' |X_k'|)`.
    pub max_displacement_ratio: f64,
    pub displacement_ok: bool,
    pub passes_cond1: bool,
    pub passes_cond2: bool,
}

/// Evaluate the attention layer on every sequence and check both conditions.
///
/// Outputs for the same token in two different vocabularies differ only
/// through the attention term, `|W_O u''| |Boltz(a) - Boltz(b)| / |kappa v.t|`,
/// which is evaluated in log space rather than by subtracting outputs.
pub fn verify_contextual_map(w: &AttentionWeights, ds: &LabeledDataset, p: &SeparationParams) -> Result<CMReport> {
    let vocab = extract_vocab(ds);
    let n = ds.seq_len();
    let kappa = w.kq.kappa();
    let gain = w.output_gain();
    let disp_unit = p.eps / (4.0 * p.r_max);

    let mut outs = Vec::with_capacity(ds.len());
    let mut zs = Vec::with_capacity(ds.len());
    let mut max_out_norm = 0.0_f64;
    let mut max_ratio = 0.0_f64;
    let mut max_logit = 0.0_f64;
    for x in &ds.sequences {
        let f = self_attention_softmax(x, w)?;
        let max_in = (0..n).map(|k| view_norm(x.token(k))).fold(0.0, f64::max);
        for k in 0..n {
            max_out_norm = max_out_norm.max(view_norm(f.token(k)));
            let moved = view_dist(f.token(k), x.token(k));
            max_ratio = max_ratio.max(moved / (disp_unit * max_in));
        }
        let z = projections(x, &w.kq.v);
        let zmax = z.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        max_logit = max_logit.max((kappa * zmax * zmax).abs());
        outs.push(f);
        zs.push(z);
    }

    let positions: Vec<(usize, usize)> = (0..ds.len()).flat_map(|i| (0..n).map(move |k| (i, k))).collect();
    let mut min_log = f64::INFINITY;
    let mut min_same = f64::INFINITY;
    let mut pairs = 0usize;
    let mut same_pairs = 0usize;
    for (a, &(i, k)) in positions.iter().enumerate() {
        for &(j, l) in &positions[a + 1..] {
            let same_token = vocab.index_of[i][k] == vocab.index_of[j][l];
            let same_vocab = vocab.per_sequence[i] == vocab.per_sequence[j];
            if same_token && same_vocab {
                continue;
            }
            pairs += 1;
            let gap_log = if same_token {
                same_pairs += 1;
                let zt = zs[i][k];
                let log = if gain == 0.0 || kappa * zt == 0.0 {
                    // the attention term cannot tell the two contexts apart
                    f64::NEG_INFINITY
                } else {
                    let la: Vec<f64> = zs[i].iter().map(|zj| kappa * zj * zt).collect();
                    let lb: Vec<f64> = zs[j].iter().map(|zj| kappa * zj * zt).collect();
                    gain.ln() + boltz_log_gap(&la, &lb)?.log_abs - (kappa * zt).abs().ln()
                };
                min_same = min_same.min(log);
                log
            } else {
                view_dist(outs[i].token(k), outs[j].token(l)).ln()
            };
            min_log = min_log.min(gap_log);
        }
    }
    let delta_theory_log = contextual_delta_log(n, vocab.len(), ds.dim(), p);
    let r_bound = p.r_max + p.eps / 4.0;
    Ok(CMReport {
        r_bound,
        delta_theory_log,
        max_out_norm,
        min_distinct_gap: min_log.exp(),
        min_distinct_gap_log: min_log,
        min_same_token_gap_log: min_same,
        pairs_checked: pairs,
        same_token_pairs: same_pairs,
        max_logit,
        max_displacement_ratio: max_ratio,
        displacement_ok: max_ratio < 1.0,
        passes_cond1: max_out_norm < r_bound,
        passes_cond2: pairs == 0 || min_log > delta_theory_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::{gen_separated_dataset_with, GenConfig, TokenSequence};

    fn params() -> SeparationParams {
        SeparationParams::new(0.5, 1.0, 0.1).unwrap()
    }

    #[test]
    fn identity_map_fails_on_shared_token() {
        let t = |a: f64, b: f64| vec![a, b];
        let s1 = TokenSequence::from_columns(&[t(0.8, 0.0), t(0.0, 0.7)]).unwrap();
        let s2 = TokenSequence::from_columns(&[t(0.8, 0.0), t(-0.6, 0.0)]).unwrap();
        let ds = LabeledDataset::new(vec![s1, s2]).unwrap();
        let w = AttentionWeights::zero_output(2, 1);
        let rep = verify_contextual_map(&w, &ds, &params()).unwrap();
        assert!(!rep.passes_cond2);
        assert_eq!(rep.min_distinct_gap, 0.0);
        assert!(rep.passes_cond1);
    }

    #[test]
    fn output_gain_is_eps_over_four_rmax() {
        let p = params();
        let ds = gen_separated_dataset_with(&GenConfig::new(3, 3, 4, p, 1)).unwrap();
        let w = build_contextual_map(&ds, &p, CMMode::MaxLogit { target: 20.0 }, 2, 3).unwrap();
        assert!((w.output_gain() - 0.1 / 4.0).abs() < 1e-9);
        let rep = verify_contextual_map(&w, &ds, &p).unwrap();
        assert!((rep.max_logit - 20.0).abs() < 1e-9);
        assert!(rep.passes_cond1 && rep.displacement_ok);
        assert!(rep.min_distinct_gap > 0.0);
    }

    #[test]
    fn exact_constant_with_shared_token() {
        // vocabulary of 3 over two sequences of length 2 forces a shared token
        let p = params();
        let cfg = GenConfig::new(2, 2, 3, p, 21).vocab_size(3);
        let ds = gen_separated_dataset_with(&cfg).unwrap();
        let w = build_contextual_map(&ds, &p, CMMode::ExactConstant, 1, 5).unwrap();
        let rep = verify_contextual_map(&w, &ds, &p).unwrap();
        assert!(rep.passes_cond1, "{rep:?}");
        assert!(rep.passes_cond2, "{rep:?}");
    }

    #[test]
    fn duplicate_tokens_rejected() {
        let s = TokenSequence::from_columns(&[vec![0.8, 0.0], vec![0.8, 0.0]]).unwrap();
        let ds = LabeledDataset::new(vec![s]).unwrap();
        assert!(matches!(
            build_contextual_map(&ds, &params(), CMMode::ExactConstant, 1, 0),
            Err(Error::DuplicateTokens { sequence: 0 })
        ));
    }

    #[test]
    fn delta_log_is_finite_and_tiny() {
        let d = contextual_delta_log(2, 4, 3, &params());
        assert!(d.is_finite() && d < -1e4);
    }
}
