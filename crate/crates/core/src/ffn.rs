//! One-hidden-layer ReLU networks applied column by column, optionally with a skip.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequences::TokenSequence;

/// First-layer weights. The structured forms store fewer parameters than the
/// dense `q x d` matrix they stand for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InputWeights {
    Dense(Array2<f64>),
    /// Every hidden unit reads the same projection `w . x`.
    Shared(Array1<f64>),
    /// Unit `i` reads `slopes[i] * (direction . x)`.
    RankOne { slopes: Array1<f64>, direction: Array1<f64> },
}

impl InputWeights {
    fn input_dim(&self) -> usize {
        match self {
            Self::Dense(m) => m.ncols(),
            Self::Shared(w) => w.len(),
            Self::RankOne { direction, .. } => direction.len(),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            Self::Dense(m) => m.len(),
            Self::Shared(w) => w.len(),
            Self::RankOne { slopes, direction } => slopes.len() + direction.len(),
        }
    }

    /// `W1 x` for hidden width `q`.
    fn apply(&self, x: ArrayView1<f64>, q: usize) -> Array1<f64> {
        match self {
            Self::Dense(m) => m.dot(&x),
            Self::Shared(w) => Array1::from_elem(q, w.dot(&x)),
            Self::RankOne { slopes, direction } => slopes * direction.dot(&x),
        }
    }

    /// The equivalent dense `q x d` matrix.
    pub fn to_dense(&self, q: usize) -> Array2<f64> {
        match self {
            Self::Dense(m) => m.clone(),
            Self::Shared(w) => Array2::from_shape_fn((q, w.len()), |(_, j)| w[j]),
            Self::RankOne { slopes, direction } => {
                Array2::from_shape_fn((slopes.len(), direction.len()), |(i, j)| slopes[i] * direction[j])
            }
        }
    }
}

/// `H_k (if skip) + W2 ReLU(W1 H_k + b1) + b2` for each column `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FFNet {
    pub w1: InputWeights,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub uses_skip: bool,
}

impl FFNet {
    pub fn new(w1: InputWeights, b1: Array1<f64>, w2: Array2<f64>, b2: Array1<f64>, uses_skip: bool) -> Result<Self> {
        let q = b1.len();
        let shape_ok = match &w1 {
            InputWeights::Dense(m) => m.nrows() == q,
            InputWeights::Shared(_) => true,
            InputWeights::RankOne { slopes, .. } => slopes.len() == q,
        };
        if !shape_ok || w2.ncols() != q || w2.nrows() != b2.len() {
            return Err(Error::DimensionMismatch("feed-forward weight shapes disagree".into()));
        }
        if uses_skip && w2.nrows() != w1.input_dim() {
            return Err(Error::DimensionMismatch("skip connection needs equal input and output width".into()));
        }
        Ok(Self { w1, b1, w2, b2, uses_skip })
    }

    /// The network that returns its input unchanged.
    pub fn identity(d: usize) -> Self {
        Self {
            w1: InputWeights::Dense(Array2::zeros((0, d))),
            b1: Array1::zeros(0),
            w2: Array2::zeros((d, 0)),
            b2: Array1::zeros(d),
            uses_skip: true,
        }
    }

    /// A zero-output network with no skip.
    pub fn zero(d_in: usize, d_out: usize) -> Self {
        Self {
            w1: InputWeights::Dense(Array2::zeros((0, d_in))),
            b1: Array1::zeros(0),
            w2: Array2::zeros((d_out, 0)),
            b2: Array1::zeros(d_out),
            uses_skip: false,
        }
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.w1.param_count() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn w1_dense(&self) -> Array2<f64> {
        self.w1.to_dense(self.hidden())
    }

    pub fn forward_column(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let pre = self.w1.apply(x, self.hidden()) + &self.b1;
        let act = pre.mapv(|v| v.max(0.0));
        let mut out = self.w2.dot(&act) + &self.b2;
        if self.uses_skip {
            out += &x;
        }
        out
    }

    /// Column-wise forward on a raw matrix.
    pub fn forward_matrix(&self, h: &Array2<f64>) -> Result<Array2<f64>> {
        if h.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} rows, network expects {}",
                h.nrows(),
                self.input_dim()
            )));
        }
        let mut out = Array2::zeros((self.output_dim(), h.ncols()));
        for (k, col) in h.columns().into_iter().enumerate() {
            out.column_mut(k).assign(&self.forward_column(col));
        }
        Ok(out)
    }
}

pub fn ff_forward(net: &FFNet, h: &TokenSequence) -> Result<TokenSequence> {
    TokenSequence::new(net.forward_matrix(h.as_array())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{gaussian_vec, rng};

    fn random_net(d: usize, q: usize, seed: u64) -> FFNet {
        let mut r = rng(seed);
        FFNet::new(
            InputWeights::Dense(Array2::from_shape_vec((q, d), gaussian_vec(&mut r, q * d)).unwrap()),
            Array1::from(gaussian_vec(&mut r, q)),
            Array2::from_shape_vec((d, q), gaussian_vec(&mut r, d * q)).unwrap(),
            Array1::from(gaussian_vec(&mut r, d)),
            true,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_identity() {
        let h = TokenSequence::from_columns(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let net = FFNet::new(
            InputWeights::Dense(Array2::zeros((3, 2))),
            Array1::from(vec![1.0, -1.0, 0.3]),
            Array2::zeros((2, 3)),
            Array1::zeros(2),
            true,
        )
        .unwrap();
        assert_eq!(ff_forward(&net, &h).unwrap(), h);
        assert_eq!(ff_forward(&FFNet::identity(2), &h).unwrap(), h);
    }

    #[test]
    fn single_unit_is_a_ramp() {
        let net = FFNet::new(
            InputWeights::Shared(Array1::from(vec![1.0, 1.0])),
            Array1::from(vec![-1.0]),
            Array2::from_elem((1, 1), 2.0),
            Array1::zeros(1),
            false,
        )
        .unwrap();
        for (x, y) in [(0.0, 0.0), (0.5, 0.0), (1.0, 2.0), (2.0, 6.0)] {
            let out = net.forward_column(Array1::from(vec![x, x]).view());
            assert_eq!(out[0], y);
        }
    }

    #[test]
    fn matches_naive_loops() {
        let net = random_net(3, 5, 4);
        let mut r = rng(5);
        let h = Array2::from_shape_vec((3, 4), gaussian_vec(&mut r, 12)).unwrap();
        let got = net.forward_matrix(&h).unwrap();
        let w1 = net.w1_dense();
        for k in 0..4 {
            for t in 0..3 {
                let mut acc = h[[t, k]] + net.b2[t];
                for i in 0..5 {
                    let mut pre = net.b1[i];
                    for j in 0..3 {
                        pre += w1[[i, j]] * h[[j, k]];
                    }
                    acc += net.w2[[t, i]] * pre.max(0.0);
                }
                assert!((acc - got[[t, k]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn structured_weights_match_dense() {
        let slopes = Array1::from(vec![1.0, -2.0, 0.5]);
        let dir = Array1::from(vec![0.3, 0.4]);
        let rank1 = InputWeights::RankOne {
            slopes: slopes.clone(),
            direction: dir.clone(),
        };
        let dense = InputWeights::Dense(rank1.to_dense(3));
        let x = Array1::from(vec![2.0, -1.0]);
        assert_eq!(rank1.apply(x.view(), 3), dense.apply(x.view(), 3));
        assert_eq!(rank1.param_count(), 5);
        assert_eq!(InputWeights::Shared(dir).param_count(), 2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let net = random_net(3, 2, 1);
        assert!(net.forward_matrix(&Array2::zeros((2, 1))).is_err());
    }
}
