//! Hardmax attention and the collinear-vocabulary collision it cannot avoid.
//!
//! With every token a multiple `alpha v` of one direction, the scores seen by
//! any query are a scalar times the coefficient vector, so the maximum always
//! sits on the smallest or largest coefficient. Two sequences that differ
//! only in a middle token then give identical outputs on the shared tokens.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{build_contextual_map, self_attention_dense, self_attention_softmax, CMMode, DenseHead, Normalizer};
use crate::error::{Error, Result};
use crate::numeric::{bitwise_eq, gaussian_vec, rng, sub_seed, view_dist};
use crate::sequences::{LabeledDataset, SeparationParams, TokenSequence};

pub fn self_attention_hardmax(z: &TokenSequence, heads: &[DenseHead]) -> Result<TokenSequence> {
    self_attention_dense(z, heads, Normalizer::Hardmax, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub d: usize,
    pub heads: usize,
    pub trials: usize,
    pub collisions: usize,
    pub collision_rate: f64,
    /// Trials in which softmax attention built for the same pair separated the shared tokens.
    pub softmax_separations: usize,
    pub softmax_min_gap: f64,
}

/// The two sequences `(a1 v, a2 v, a4 v)` and `(a1 v, a3 v, a4 v)` with `v = e_1`.
pub fn collinear_pair(d: usize, alpha: [f64; 4]) -> Result<(TokenSequence, TokenSequence)> {
    let col = |a: f64| {
        let mut c = vec![0.0; d];
        c[0] = a;
        c
    };
    Ok((
        TokenSequence::from_columns(&[col(alpha[0]), col(alpha[1]), col(alpha[3])])?,
        TokenSequence::from_columns(&[col(alpha[0]), col(alpha[2]), col(alpha[3])])?,
    ))
}

fn random_head<R: rand::Rng>(r: &mut R, d: usize, s: usize) -> DenseHead {
    let mut m = |rows: usize, cols: usize| Array2::from_shape_vec((rows, cols), gaussian_vec(r, rows * cols)).unwrap();
    DenseHead {
        w_k: m(s, d),
        w_q: m(s, d),
        w_v: m(s, d),
        w_o: m(d, s),
    }
}

/// Draw `trials` random multi-head weight sets and count bitwise collisions on
/// the shared first and last tokens; also run the softmax constructor on the
/// same pair for comparison.
pub fn hardmax_collision_demo(d: usize, heads: usize, seed: u64, trials: usize) -> Result<CollisionReport> {
    if trials == 0 || heads == 0 || d == 0 {
        return Err(Error::InvalidParams("d, heads and trials must be at least 1".into()));
    }
    let alpha = [1.0, 2.0, 3.0, 4.0];
    let (x1, x2) = collinear_pair(d, alpha)?;
    // tokens have norms 1..4 and are 1 apart
    let p = SeparationParams::new(0.5, 4.5, 0.9)?;
    let ds = LabeledDataset::new(vec![x1.clone(), x2.clone()])?;

    let mut collisions = 0;
    let mut separations = 0;
    let mut min_gap = f64::INFINITY;
    for t in 0..trials {
        let mut r = rng(sub_seed(seed, t as u64));
        let hs: Vec<DenseHead> = (0..heads).map(|_| random_head(&mut r, d, d)).collect();
        let y1 = self_attention_hardmax(&x1, &hs)?;
        let y2 = self_attention_hardmax(&x2, &hs)?;
        if [0, 2].iter().all(|&k| bitwise_eq(y1.token(k), y2.token(k))) {
            collisions += 1;
        }

        let w = build_contextual_map(&ds, &p, CMMode::MaxLogit { target: 10.0 }, 1, sub_seed(seed, 1 << 32 | t as u64))?;
        let s1 = self_attention_softmax(&x1, &w)?;
        let s2 = self_attention_softmax(&x2, &w)?;
        let gap = [0, 2]
            .iter()
            .map(|&k| view_dist(s1.token(k), s2.token(k)))
            .fold(f64::INFINITY, f64::min);
        min_gap = min_gap.min(gap);
        if gap > 0.0 {
            separations += 1;
        }
    }
    Ok(CollisionReport {
        d,
        heads,
        trials,
        collisions,
        collision_rate: collisions as f64 / trials as f64,
        softmax_separations: separations,
        softmax_min_gap: min_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unique_max_gives_one_hot_column() {
        let z = TokenSequence::from_columns(&[vec![1.0], vec![2.0], vec![4.0]]).unwrap();
        let head = DenseHead {
            w_k: Array2::from_elem((1, 1), 1.0),
            w_q: Array2::from_elem((1, 1), 1.0),
            w_v: Array2::from_elem((1, 1), 1.0),
            w_o: Array2::from_elem((1, 1), 1.0),
        };
        // positive scalar: every query attends to the largest coefficient
        let out = self_attention_hardmax(&z, &[head]).unwrap();
        assert_eq!(out.as_array().row(0).to_vec(), vec![5.0, 6.0, 8.0]);
    }

    #[test]
    fn negative_scale_attends_to_smallest() {
        let z = TokenSequence::from_columns(&[vec![1.0], vec![2.0], vec![4.0]]).unwrap();
        let head = DenseHead {
            w_k: Array2::from_elem((1, 1), -1.0),
            w_q: Array2::from_elem((1, 1), 1.0),
            w_v: Array2::from_elem((1, 1), 1.0),
            w_o: Array2::from_elem((1, 1), 1.0),
        };
        let out = self_attention_hardmax(&z, &[head]).unwrap();
        assert_eq!(out.as_array().row(0).to_vec(), vec![2.0, 3.0, 5.0]);
    }

    #[test]
    fn collisions_for_several_head_counts() {
        for h in [1, 2, 4] {
            let rep = hardmax_collision_demo(3, h, 7, 10).unwrap();
            assert_eq!(rep.collision_rate, 1.0);
            assert_eq!(rep.softmax_separations, 10);
        }
    }
}
