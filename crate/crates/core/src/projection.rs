//! Certified scalar projections and rank-1 key/query weights.
//!
//! A direction `v` is accepted only after an exhaustive check over every pair
//! of the point set (with the origin appended):
//! `c |x - x'| <= |v.(x - x')| <= |x - x'|` with `c = sqrt(8 / (pi d)) / |X|^2`.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{bit_key, dist, dot, norm, rng, sub_seed, unit_vector};
use crate::sequences::{SeparationParams, Vocabulary};

pub const DEFAULT_MAX_TRIES: usize = 10_000;

/// Relative slack on the upper bound, which holds with equality along `v`.
const UPPER_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCertificate {
    pub v: Vec<f64>,
    /// Smallest `|v.(x - x')| / |x - x'|` over the certified set.
    pub c_lower: f64,
    /// The constant the certificate had to beat.
    pub c_required: f64,
    /// Size of the certified set, origin included.
    pub num_points: usize,
    pub tries_used: usize,
}

/// `sqrt(8 / (pi d)) / m^2` for a set of `m` points in `R^d`.
pub fn required_constant(num_points: usize, d: usize) -> f64 {
    (8.0 / (PI * d as f64)).sqrt() / (num_points as f64).powi(2)
}

/// Distinct points plus the origin, in first-seen order.
pub fn augment_with_origin(points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = points.first().map(Vec::len).unwrap_or(0);
    if d == 0 {
        return Err(Error::Empty("projection needs at least one point".into()));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(points.len() + 1);
    for p in points.iter().chain(std::iter::once(&vec![0.0; d])) {
        if p.len() != d {
            return Err(Error::DimensionMismatch("points differ in dimension".into()));
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("projection point".into()));
        }
        // -0.0 and 0.0 are the same point here
        let key = bit_key(ndarray::ArrayView1::from(&p.iter().map(|x| x + 0.0).collect::<Vec<_>>()[..]));
        if seen.insert(key) {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Smallest projection ratio over all pairs if `v` certifies on `points`, else `None`.
///
/// `points` is used as given; callers wanting the origin must include it.
pub fn certify_direction(v: &[f64], points: &[Vec<f64>]) -> Option<f64> {
    let c = required_constant(points.len(), v.len());
    let mut worst = f64::INFINITY;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let diff: Vec<f64> = points[i].iter().zip(&points[j]).map(|(a, b)| a - b).collect();
            let full = norm(&diff);
            if full == 0.0 {
                continue;
            }
            let proj = dot(v, &diff).abs();
            if !(proj >= c * full) || proj > full * (1.0 + UPPER_SLACK) {
                return None;
            }
            worst = worst.min(proj / full);
        }
    }
    Some(worst.min(1.0))
}

/// Sample unit directions until one certifies on `points` plus the origin.
pub fn find_distance_preserving_direction(
    points: &[Vec<f64>],
    max_tries: usize,
    seed: u64,
) -> Result<ProjectionCertificate> {
    let set = augment_with_origin(points)?;
    let d = set[0].len();
    let mut r = rng(sub_seed(seed, 0x5EED));
    for t in 1..=max_tries {
        let v = unit_vector(&mut r, d);
        if let Some(c_lower) = certify_direction(&v, &set) {
            return Ok(ProjectionCertificate {
                v,
                c_lower,
                c_required: required_constant(set.len(), d),
                num_points: set.len(),
                tries_used: t,
            });
        }
    }
    Err(Error::BudgetExhausted { tries: max_tries })
}

/// Rank-1 key and query weights `W_K = u v^T`, `W_Q = u' v^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KQWeights {
    pub u: Vec<f64>,
    pub u_prime: Vec<f64>,
    pub v: Vec<f64>,
    /// `|u . u'|`
    pub scale: f64,
    pub certificate: ProjectionCertificate,
}

impl KQWeights {
    pub fn head_size(&self) -> usize {
        self.u.len()
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// `u . u'`, the factor every logit carries.
    pub fn kappa(&self) -> f64 {
        dot(&self.u, &self.u_prime)
    }

    pub fn w_k(&self) -> Array2<f64> {
        outer(&self.u, &self.v)
    }

    pub fn w_q(&self) -> Array2<f64> {
        outer(&self.u_prime, &self.v)
    }

    /// `(W_K a).(W_Q c)`
    pub fn logit(&self, key: &[f64], query: &[f64]) -> f64 {
        self.kappa() * dot(&self.v, key) * dot(&self.v, query)
    }
}

pub fn outer(a: &[f64], b: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// `(|V| + 1)^4 (pi d / 8) delta / (eps r_min)`
pub fn exact_scale(vocab_size: usize, d: usize, delta: f64, p: &SeparationParams) -> f64 {
    (vocab_size as f64 + 1.0).powi(4) * (PI * d as f64 / 8.0) * delta / (p.eps * p.r_min)
}

/// Key/query weights whose logit rows separate distinct tokens by more than `delta`.
pub fn build_kq_weights(
    vocab: &Vocabulary,
    p: &SeparationParams,
    delta: f64,
    s: usize,
    seed: u64,
) -> Result<KQWeights> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParams(format!("delta must be positive, got {delta}")));
    }
    let scale = exact_scale(vocab.len(), vocab.tokens[0].len(), delta, p);
    build_kq_weights_with_scale(vocab, scale, s, seed)
}

/// Same construction with a caller-chosen `|u . u'|`.
pub fn build_kq_weights_with_scale(vocab: &Vocabulary, scale: f64, s: usize, seed: u64) -> Result<KQWeights> {
    if s == 0 {
        return Err(Error::InvalidParams("head size must be at least 1".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParams(format!("logit scale must be positive and finite, got {scale}")));
    }
    if vocab.is_empty() {
        return Err(Error::Empty("vocabulary".into()));
    }
    let points: Vec<Vec<f64>> = vocab.tokens.iter().map(|t| t.to_vec()).collect();
    let certificate = find_distance_preserving_direction(&points, DEFAULT_MAX_TRIES, seed)?;
    let mut u = vec![0.0; s];
    u[0] = scale.sqrt();
    Ok(KQWeights {
        u_prime: u.clone(),
        u,
        v: certificate.v.clone(),
        scale,
        certificate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitGapReport {
    /// Smallest `|logit(a, c) - logit(b, c)|` over `a != b`, any `c`.
    pub min_gap: f64,
    pub triples: usize,
    pub passes: bool,
}

/// Exhaustive check of the logit-gap property over all `(a, b, c)` triples.
pub fn verify_logit_gaps(kq: &KQWeights, tokens: &[Vec<f64>], delta: f64) -> LogitGapReport {
    let mut min_gap = f64::INFINITY;
    let mut triples = 0;
    for (ia, a) in tokens.iter().enumerate() {
        for (ib, b) in tokens.iter().enumerate() {
            if ia == ib {
                continue;
            }
            for c in tokens {
                triples += 1;
                min_gap = min_gap.min((kq.logit(a, c) - kq.logit(b, c)).abs());
            }
        }
    }
    LogitGapReport {
        min_gap,
        triples,
        passes: min_gap > delta,
    }
}

/// Largest `|v.x|` over the points, used to calibrate scaled logits.
pub fn max_projection(v: &[f64], points: &[Vec<f64>]) -> f64 {
    points.iter().map(|x| dot(v, x).abs()).fold(0.0, f64::max)
}

/// Smallest pairwise distance, `inf` for fewer than two points.
pub fn min_pairwise_dist(points: &[Vec<f64>]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            m = m.min(dist(&points[i], &points[j]));
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::matrix_rank;
    use crate::sequences::{extract_vocab, gen_separated_dataset_with, GenConfig};

    #[test]
    fn axis_direction_certifies_single_point() {
        let set = augment_with_origin(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(certify_direction(&[1.0, 0.0], &set), Some(1.0));
    }

    #[test]
    fn collinear_points_certify_with_unit_constant() {
        let w = [0.6, 0.8];
        let pts: Vec<Vec<f64>> = [1.0, -2.0, 3.5].iter().map(|t| vec![t * w[0], t * w[1]]).collect();
        let set = augment_with_origin(&pts).unwrap();
        let c = certify_direction(&w, &set).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_direction_fails() {
        let set = augment_with_origin(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(certify_direction(&[0.0, 1.0], &set), None);
    }

    #[test]
    fn search_is_deterministic_and_unit() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 1.0, -(i as f64) * 0.5]).collect();
        let a = find_distance_preserving_direction(&pts, 100, 3).unwrap();
        let b = find_distance_preserving_direction(&pts, 100, 3).unwrap();
        assert_eq!(a, b);
        assert!((norm(&a.v) - 1.0).abs() < 1e-12);
        assert!(a.c_lower >= a.c_required);
    }

    #[test]
    fn zero_budget_exhausts() {
        assert!(matches!(
            find_distance_preserving_direction(&[vec![1.0]], 0, 1),
            Err(Error::BudgetExhausted { tries: 0 })
        ));
    }

    #[test]
    fn kq_weights_are_rank_one_with_exact_scale() {
        let p = SeparationParams::new(0.5, 1.0, 0.1).unwrap();
        let ds = gen_separated_dataset_with(&GenConfig::new(2, 2, 3, p, 4)).unwrap();
        let vocab = extract_vocab(&ds);
        let delta = 2.0 * 2f64.ln() + 3.0;
        let kq = build_kq_weights(&vocab, &p, delta, 2, 9).unwrap();
        let expect = (vocab.len() as f64 + 1.0).powi(4) * (PI * 3.0 / 8.0) * delta / (0.1 * 0.5);
        assert_eq!(kq.scale, expect);
        assert!((kq.kappa() - expect).abs() <= 1e-12 * expect);
        assert_eq!(matrix_rank(kq.w_k().view(), 1e-10), 1);
        assert_eq!(matrix_rank(kq.w_q().view(), 1e-10), 1);
    }
}
