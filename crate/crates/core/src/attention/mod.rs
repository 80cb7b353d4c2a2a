//! Self-attention kernels with a skip connection, rank-1 weights, masks, and
//! the contextual-mapping constructor and verifier.
//!
//! Attention scores are laid out key-major: `A[j][k]` is the score of key `j`
//! for query `k`, and normalisation runs down each column.

mod contextual;
mod hardmax;

pub use contextual::{
    build_contextual_map, contextual_delta_log, verify_contextual_map, CMMode, CMReport,
};
pub use hardmax::{hardmax_collision_demo, self_attention_hardmax, CollisionReport};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::boltzmann::softmax_stable;
use crate::error::{Error, Result};
use crate::numeric::{dot, norm};
use crate::projection::{outer, KQWeights, ProjectionCertificate};
use crate::sequences::TokenSequence;

/// Rank-1 single-head weights: `W_K = u v^T`, `W_Q = u' v^T`, `W_V = u'' v^T`,
/// `W_O = u''' u''^T`. Only the factors are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub kq: KQWeights,
    pub u_dd: Vec<f64>,
    pub u_ddd: Vec<f64>,
    pub s: usize,
}

impl AttentionWeights {
    pub fn new(kq: KQWeights, u_dd: Vec<f64>, u_ddd: Vec<f64>) -> Result<Self> {
        let s = kq.head_size();
        if u_dd.len() != s || kq.u_prime.len() != s {
            return Err(Error::DimensionMismatch("head-size factors disagree".into()));
        }
        if u_ddd.len() != kq.dim() {
            return Err(Error::DimensionMismatch("output factor has wrong dimension".into()));
        }
        Ok(Self { kq, u_dd, u_ddd, s })
    }

    /// Weights whose output matrix is zero, so attention is the identity map.
    pub fn zero_output(d: usize, s: usize) -> Self {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        let mut u = vec![0.0; s];
        u[0] = 1.0;
        let kq = KQWeights {
            u: u.clone(),
            u_prime: u.clone(),
            v: e,
            scale: 1.0,
            certificate: ProjectionCertificate {
                v: vec![],
                c_lower: 0.0,
                c_required: 0.0,
                num_points: 0,
                tries_used: 0,
            },
        };
        Self {
            kq,
            u_dd: u,
            u_ddd: vec![0.0; d],
            s,
        }
    }

    pub fn dim(&self) -> usize {
        self.kq.dim()
    }

    pub fn w_k(&self) -> Array2<f64> {
        self.kq.w_k()
    }

    pub fn w_q(&self) -> Array2<f64> {
        self.kq.w_q()
    }

    pub fn w_v(&self) -> Array2<f64> {
        outer(&self.u_dd, &self.kq.v)
    }

    pub fn w_o(&self) -> Array2<f64> {
        outer(&self.u_ddd, &self.u_dd)
    }

    /// `|W_O u''|`
    pub fn output_gain(&self) -> f64 {
        norm(&self.u_ddd) * dot(&self.u_dd, &self.u_dd)
    }

    pub fn dense_head(&self) -> DenseHead {
        DenseHead {
            w_k: self.w_k(),
            w_q: self.w_q(),
            w_v: self.w_v(),
            w_o: self.w_o(),
        }
    }

    /// Number of stored factor entries: `u, u', u''` in `R^s`, `v, u'''` in `R^d`.
    pub fn param_count(&self) -> usize {
        3 * self.s + 2 * self.dim()
    }

    /// The same count rounded up to the `4(s + d)` budget form.
    pub fn param_budget(&self) -> usize {
        4 * (self.s + self.dim())
    }
}

/// Dense weights for one head.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead {
    pub w_k: Array2<f64>,
    pub w_q: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
}

impl DenseHead {
    fn check(&self, d: usize) -> Result<()> {
        let s = self.w_k.nrows();
        let ok = self.w_k.dim() == (s, d)
            && self.w_q.dim() == (s, d)
            && self.w_v.dim() == (s, d)
            && self.w_o.dim() == (d, s);
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!("head weights do not match d = {d}")))
        }
    }
}

/// A matrix of `0` / `-inf` entries added to the attention scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix(Array2<f64>);

impl MaskMatrix {
    pub fn new(m: Array2<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidMask("mask must be square".into()));
        }
        if m.iter().any(|&c| !(c == 0.0 || c == f64::NEG_INFINITY)) {
            return Err(Error::InvalidMask("entries must be 0 or -inf".into()));
        }
        if let Some(k) = m.columns().into_iter().position(|c| c.iter().all(|&x| x != 0.0)) {
            return Err(Error::InvalidMask(format!("column {k} is fully masked")));
        }
        Ok(Self(m))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Array2::zeros((n, n)))
    }

    /// Query `k` sees keys `j <= k`.
    pub fn causal(n: usize) -> Self {
        Self(Array2::from_shape_fn((n, n), |(j, k)| if j <= k { 0.0 } else { f64::NEG_INFINITY }))
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalizer {
    Softmax,
    Hardmax,
}

/// `(W_K Z)^T (W_Q Z)`, shape `n x n`.
pub fn attention_scores(z: &Array2<f64>, w_k: &Array2<f64>, w_q: &Array2<f64>) -> Array2<f64> {
    w_k.dot(z).t().dot(&w_q.dot(z))
}

/// Normalise each column of `scores` (plus an optional mask).
pub fn normalize_columns(scores: &Array2<f64>, mask: Option<&MaskMatrix>, kind: Normalizer) -> Result<Array2<f64>> {
    let n = scores.nrows();
    if let Some(m) = mask {
        if m.0.dim() != scores.dim() {
            return Err(Error::DimensionMismatch(format!("mask is {:?}, scores {:?}", m.0.dim(), scores.dim())));
        }
    }
    let mut out = Array2::zeros(scores.dim());
    for k in 0..scores.ncols() {
        let col: Vec<f64> = (0..n)
            .map(|j| scores[[j, k]] + mask.map_or(0.0, |m| m.0[[j, k]]))
            .collect();
        let p = match kind {
            Normalizer::Softmax => softmax_stable(&col)?,
            Normalizer::Hardmax => hardmax(&col)?,
        };
        for (j, pj) in p.into_iter().enumerate() {
            out[[j, k]] = pj;
        }
    }
    Ok(out)
}

/// Indicator of the maximum, split uniformly over exact ties.
pub fn hardmax(a: &[f64]) -> Result<Vec<f64>> {
    if a.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("hardmax input".into()));
    }
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::AllMasked);
    }
    let ties = a.iter().filter(|&&x| x == m).count() as f64;
    Ok(a.iter().map(|&x| if x == m { 1.0 / ties } else { 0.0 }).collect())
}

/// `Z + sum_h W_O (W_V Z) N[(W_K Z)^T (W_Q Z) + C]` for dense heads.
pub fn self_attention_dense(
    z: &TokenSequence,
    heads: &[DenseHead],
    kind: Normalizer,
    mask: Option<&MaskMatrix>,
) -> Result<TokenSequence> {
    let x = z.as_array();
    let mut out = x.clone();
    for h in heads {
        h.check(z.dim())?;
        let p = normalize_columns(&attention_scores(x, &h.w_k, &h.w_q), mask, kind)?;
        out = out + h.w_o.dot(&h.w_v.dot(x)).dot(&p);
    }
    TokenSequence::new(out)
}

fn check_dim(z: &TokenSequence, w: &AttentionWeights) -> Result<()> {
    if z.dim() != w.dim() {
        return Err(Error::DimensionMismatch(format!(
            "sequence has d = {}, weights d = {}",
            z.dim(),
            w.dim()
        )));
    }
    Ok(())
}

pub fn self_attention_softmax(z: &TokenSequence, w: &AttentionWeights) -> Result<TokenSequence> {
    check_dim(z, w)?;
    self_attention_dense(z, &[w.dense_head()], Normalizer::Softmax, None)
}

pub fn self_attention_masked(z: &TokenSequence, w: &AttentionWeights, mask: &MaskMatrix) -> Result<TokenSequence> {
    check_dim(z, w)?;
    if mask.0.nrows() != z.len() {
        return Err(Error::DimensionMismatch("mask size differs from sequence length".into()));
    }
    self_attention_dense(z, &[w.dense_head()], Normalizer::Softmax, Some(mask))
}

/// Scalar projections `v . Z_{:,j}` of every token.
pub fn projections(z: &TokenSequence, v: &[f64]) -> Array1<f64> {
    z.as_array().t().dot(&ndarray::ArrayView1::from(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{gaussian_vec, rng};
    use rand::seq::SliceRandom;

    fn random_weights(d: usize, s: usize, seed: u64) -> AttentionWeights {
        let mut r = rng(seed);
        let v: Vec<f64> = gaussian_vec(&mut r, d);
        let kq = KQWeights {
            u: gaussian_vec(&mut r, s),
            u_prime: gaussian_vec(&mut r, s),
            v: v.clone(),
            scale: 1.0,
            certificate: AttentionWeights::zero_output(d, s).kq.certificate,
        };
        AttentionWeights::new(kq, gaussian_vec(&mut r, s), gaussian_vec(&mut r, d)).unwrap()
    }

    fn random_seq(d: usize, n: usize, seed: u64) -> TokenSequence {
        let mut r = rng(seed);
        TokenSequence::new(Array2::from_shape_vec((d, n), gaussian_vec(&mut r, d * n)).unwrap()).unwrap()
    }

    #[test]
    fn zero_output_is_identity() {
        let z = random_seq(3, 4, 1);
        let mut w = random_weights(3, 2, 2);
        w.u_ddd = vec![0.0; 3];
        assert_eq!(self_attention_softmax(&z, &w).unwrap(), z);
    }

    #[test]
    fn single_token_adds_value_path() {
        let z = random_seq(3, 1, 5);
        let w = random_weights(3, 2, 6);
        let out = self_attention_softmax(&z, &w).unwrap();
        let expect = z.as_array() + &w.w_o().dot(&w.w_v()).dot(z.as_array());
        for (a, b) in out.as_array().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut r = rng(11);
        for t in 0..100 {
            let z = random_seq(4, 5, 100 + t);
            let w = random_weights(4, 3, 200 + t);
            let mut perm: Vec<usize> = (0..5).collect();
            perm.shuffle(&mut r);
            let zp = TokenSequence::new(Array2::from_shape_fn((4, 5), |(i, k)| z.as_array()[[i, perm[k]]])).unwrap();
            let f = self_attention_softmax(&z, &w).unwrap();
            let fp = self_attention_softmax(&zp, &w).unwrap();
            for k in 0..5 {
                for i in 0..4 {
                    let (a, b) = (fp.as_array()[[i, k]], f.as_array()[[i, perm[k]]]);
                    assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn zero_mask_matches_unmasked() {
        let z = random_seq(3, 4, 7);
        let w = random_weights(3, 2, 8);
        let a = self_attention_softmax(&z, &w).unwrap();
        let b = self_attention_masked(&z, &w, &MaskMatrix::zeros(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn causal_first_column_sees_only_itself() {
        let z = random_seq(3, 4, 9);
        let w = random_weights(3, 2, 10);
        let out = self_attention_masked(&z, &w, &MaskMatrix::causal(4)).unwrap();
        let col0 = z.as_array().column(0).to_owned();
        let expect = &col0 + &w.w_o().dot(&w.w_v()).dot(&col0);
        for (a, b) in out.as_array().column(0).iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn masked_scores_do_not_matter() {
        let z = random_seq(3, 4, 12);
        let w = random_weights(3, 2, 13);
        let mask = MaskMatrix::causal(4);
        let x = z.as_array();
        let scores = attention_scores(x, &w.w_k(), &w.w_q());
        let mut bumped = scores.clone();
        for j in 0..4 {
            for k in 0..j {
                bumped[[j, k]] += 37.0;
            }
        }
        let p1 = normalize_columns(&scores, Some(&mask), Normalizer::Softmax).unwrap();
        let p2 = normalize_columns(&bumped, Some(&mask), Normalizer::Softmax).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn fully_masked_column_rejected() {
        let mut m = Array2::zeros((2, 2));
        m[[0, 1]] = f64::NEG_INFINITY;
        m[[1, 1]] = f64::NEG_INFINITY;
        assert!(matches!(MaskMatrix::new(m), Err(Error::InvalidMask(_))));
    }

    #[test]
    fn hardmax_ties_split_evenly() {
        assert_eq!(hardmax(&[1.0, 3.0, 2.0]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(hardmax(&[3.0, 1.0, 3.0]).unwrap(), vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let z = random_seq(3, 2, 1);
        let w = random_weights(4, 2, 1);
        assert!(matches!(self_attention_softmax(&z, &w), Err(Error::DimensionMismatch(_))));
    }
}
