//! Small numeric helpers shared across modules.

use ndarray::{ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floor for the denominator of [`rel_err`].
pub const REL_ERR_FLOOR: f64 = 1e-2;

/// Relative error `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`.
///
/// The floor keeps the measure meaningful for components that are close to zero,
/// where finite-difference rounding dominates any relative comparison.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Deterministic RNG used throughout the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream seed from a base seed and a label.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn gaussian_vec<R: rand::Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// A uniformly distributed unit vector (normalised Gaussian).
pub fn unit_vector<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let g = gaussian_vec(rng, dim);
        let norm = norm(&g);
        if norm > 1e-300 {
            return g.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn view_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn view_norm(a: ArrayView1<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Bitwise equality of two vectors, the notion of token identity used everywhere.
pub fn bitwise_eq(a: ArrayView1<f64>, b: ArrayView1<f64>) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn bit_key(a: ArrayView1<f64>) -> Vec<u64> {
    a.iter().map(|x| x.to_bits()).collect()
}

/// Numerical rank estimate via Gram-Schmidt on the rows.
pub fn matrix_rank(m: ArrayView2<f64>, tol: f64) -> usize {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let scale = m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs())).max(1e-300);
    for row in m.rows() {
        let mut r: Vec<f64> = row.iter().map(|x| x / scale).collect();
        for b in &basis {
            let p = dot(&r, b);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri -= p * bi;
            }
        }
        let n = norm(&r);
        if n > tol {
            basis.push(r.into_iter().map(|x| x / n).collect());
        }
    }
    basis.len()
}

/// `log(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}
