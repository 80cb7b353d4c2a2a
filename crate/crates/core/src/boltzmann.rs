//! The Boltzmann operator `Boltz(a) = a . softmax(a)` and its separation behaviour.
//!
//! Every exponential goes through a max-shifted form. Gaps between Boltzmann
//! values of nearly identical vectors are computed in log space without
//! subtracting the two values, so they stay meaningful long after a direct
//! difference would round to zero.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_finite(a: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::Empty("logit vector".into()));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logit entry (use the masked form for -inf)".into()));
    }
    Ok(())
}

fn max_of(a: &[f64]) -> f64 {
    a.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `log(sum(exp(a)))`; `-inf` entries contribute nothing.
pub fn log_sum_exp(a: &[f64]) -> f64 {
    let m = max_of(a);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + a.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax with max subtraction. `-inf` entries get probability 0.
pub fn softmax_stable(a: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Err(Error::Empty("logit vector".into()));
    }
    if a.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let m = max_of(a);
    if m == f64::NEG_INFINITY {
        return Err(Error::AllMasked);
    }
    let e: Vec<f64> = a.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / z).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoltzReport {
    pub value: f64,
    pub probs: Vec<f64>,
    /// `log(sum(exp(a)))`
    pub log_partition: f64,
    /// Shannon entropy of `probs` in nats.
    pub entropy: f64,
}

pub fn boltz(a: &[f64]) -> Result<BoltzReport> {
    check_finite(a)?;
    let m = max_of(a);
    let shifted: Vec<f64> = a.iter().map(|x| x - m).collect();
    let lse = log_sum_exp(&shifted);
    let probs: Vec<f64> = shifted.iter().map(|x| (x - lse).exp()).collect();
    let value = m + shifted.iter().zip(&probs).map(|(x, p)| x * p).sum::<f64>();
    let entropy = -shifted
        .iter()
        .zip(&probs)
        .map(|(x, p)| p * (x - lse))
        .sum::<f64>();
    Ok(BoltzReport {
        value,
        probs,
        log_partition: m + lse,
        entropy,
    })
}

/// `a . softmax(a + c)` for a mask `c` with entries in `{0, -inf}`.
pub fn boltz_masked(a: &[f64], mask: &[f64]) -> Result<f64> {
    if a.len() != mask.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} logits, {} mask entries",
            a.len(),
            mask.len()
        )));
    }
    check_finite(a)?;
    if let Some(bad) = mask.iter().find(|&&c| !(c == 0.0 || c == f64::NEG_INFINITY)) {
        return Err(Error::InvalidMask(format!("mask entry {bad} is neither 0 nor -inf")));
    }
    let shifted: Vec<f64> = a.iter().zip(mask).map(|(x, c)| x + c).collect();
    let p = softmax_stable(&shifted)?;
    // masked entries have p = 0 exactly; skip them so -inf never meets 0
    Ok(a.iter()
        .zip(&mask.iter().zip(&p).collect::<Vec<_>>())
        .filter(|(_, (c, _))| **c == 0.0)
        .map(|(x, (_, p))| x * *p)
        .sum())
}

/// `d Boltz / d a_i = p_i (1 + log p_i + S(p))`.
pub fn boltz_grad(a: &[f64]) -> Result<Vec<f64>> {
    let r = boltz(a)?;
    Ok(a.iter()
        .zip(&r.probs)
        .map(|(x, p)| {
            let log_p = x - r.log_partition;
            p * (1.0 + log_p + r.entropy)
        })
        .collect())
}

/// `d^2 Boltz / d a_i^2 = p_i [(1 - 2 p_i)(log p_i + S(p) + 1) + 1]`.
pub fn boltz_curvature(a: &[f64], i: usize) -> Result<f64> {
    if i >= a.len() {
        return Err(Error::InvalidParams(format!("index {i} out of range for length {}", a.len())));
    }
    let r = boltz(a)?;
    let p = r.probs[i];
    let log_p = a[i] - r.log_partition;
    Ok(p * ((1.0 - 2.0 * p) * (log_p + r.entropy + 1.0) + 1.0))
}

/// `Boltz(a) - Boltz(b)` as a sign and a log magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogGap {
    /// -1, 0 or 1.
    pub sign: f64,
    /// `log |Boltz(a) - Boltz(b)|`; `-inf` when the values coincide.
    pub log_abs: f64,
}

impl LogGap {
    pub fn value(&self) -> f64 {
        self.sign * self.log_abs.exp()
    }
}

/// Split two vectors into their common multiset part and the remainders.
fn multiset_split(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (mut i, mut j) = (0, 0);
    let (mut shared, mut ra, mut rb) = (Vec::new(), Vec::new(), Vec::new());
    while i < sa.len() || j < sb.len() {
        match (sa.get(i), sb.get(j)) {
            (Some(x), Some(y)) if x.to_bits() == y.to_bits() => {
                shared.push(*x);
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x.total_cmp(y).is_lt() => {
                ra.push(*x);
                i += 1;
            }
            (Some(x), None) => {
                ra.push(*x);
                i += 1;
            }
            (_, Some(y)) => {
                rb.push(*y);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    (shared, ra, rb)
}

/// True when `a` and `b` are equal as multisets (bitwise).
pub fn same_multiset(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && {
        let (_, ra, rb) = multiset_split(a, b);
        ra.is_empty() && rb.is_empty()
    }
}

/// Stable `Boltz(a) - Boltz(b)` for vectors of any lengths.
///
/// Entries common to both vectors are factored out and the remainders are
/// weighted relative to their own maximum, so a difference driven by entries
/// that are `exp(-1000)` lighter than the rest is still resolved.
pub fn boltz_log_gap(a: &[f64], b: &[f64]) -> Result<LogGap> {
    check_finite(a)?;
    check_finite(b)?;
    let (shared, ra, rb) = multiset_split(a, b);
    if ra.is_empty() && rb.is_empty() {
        return Ok(LogGap {
            sign: 0.0,
            log_abs: f64::NEG_INFINITY,
        });
    }
    let big_m = max_of(a).max(max_of(b));
    let m_d = max_of(&ra).max(max_of(&rb));
    let c = if shared.is_empty() { big_m } else { boltz(&shared)?.value };
    let log_rho = m_d - big_m;
    let rho = log_rho.exp();

    let sums = |xs: &[f64], top: f64| -> (f64, f64) {
        xs.iter().fold((0.0, 0.0), |(z, nn), &x| {
            let w = (x - top).exp();
            (z + w, nn + (x - c) * w)
        })
    };
    let (z_s, n_s) = sums(&shared, big_m);
    let (z_a, n_a) = sums(&ra, m_d);
    let (z_b, n_b) = sums(&rb, m_d);

    let first = z_s * (n_a - n_b) + n_s * (z_b - z_a);
    let second = n_a * z_b - n_b * z_a;
    let total = first + rho * second;
    // with nothing shared the whole numerator carries rho^2 and the partitions rho each
    let (total, log_scale) = if shared.is_empty() { (second, 0.0) } else { (total, log_rho) };
    if total == 0.0 {
        return Ok(LogGap {
            sign: 0.0,
            log_abs: f64::NEG_INFINITY,
        });
    }
    let part = |z: f64| if shared.is_empty() { z.ln() } else { (z_s + rho * z).ln() };
    Ok(LogGap {
        sign: total.signum(),
        log_abs: log_scale + total.abs().ln() - part(z_a) - part(z_b),
    })
}

/// `log((log n)^2 e^{-2r})`, the separation floor for Boltzmann outputs.
pub fn separation_bound_log(n: usize, r: f64) -> f64 {
    2.0 * (n as f64).ln().ln() - 2.0 * r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoltzSeparationReport {
    pub lower_bound_log: f64,
    pub measured_gap: f64,
    pub measured_gap_log: f64,
    /// The inputs are equal as multisets, so nothing was compared.
    pub skipped: bool,
    pub passes: bool,
}

fn check_vector_separated(a: &[f64], r: f64, delta: f64, which: &str) -> Result<()> {
    if let Some(x) = a.iter().find(|x| x.abs() > r) {
        return Err(Error::Precondition(format!("{which} has entry {x} with |x| > r = {r}")));
    }
    let mut s = a.to_vec();
    s.sort_by(f64::total_cmp);
    for w in s.windows(2) {
        if w[0].to_bits() == w[1].to_bits() {
            return Err(Error::Precondition(format!("{which} has duplicate entry {}", w[0])));
        }
        if !(w[1] - w[0] > delta) {
            return Err(Error::Precondition(format!(
                "{which} entries {} and {} are not more than delta = {delta} apart",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Check that `|Boltz(a) - Boltz(b)| > (log n)^2 e^{-2r}` for separated, distinct inputs.
///
/// Entries must satisfy `|a_i| <= r`, and distinct entries of `a` and `b`
/// taken together must be more than `delta` apart with `delta > 2 log n + 3`;
/// violations are returned as errors.
pub fn check_boltz_separation(a: &[f64], b: &[f64], r: f64, delta: f64) -> Result<BoltzSeparationReport> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("lengths {} and {}", a.len(), b.len())));
    }
    check_finite(a)?;
    check_finite(b)?;
    let n = a.len();
    let need = 2.0 * (n as f64).ln() + 3.0;
    if !(delta > need) {
        return Err(Error::Precondition(format!("delta = {delta} must exceed 2 log n + 3 = {need}")));
    }
    check_vector_separated(a, r, delta, "a")?;
    check_vector_separated(b, r, delta, "b")?;
    for x in a {
        if let Some(y) = b.iter().find(|y| y.to_bits() != x.to_bits() && !((x - *y).abs() > delta)) {
            return Err(Error::Precondition(format!(
                "entries {x} of a and {y} of b differ but are not more than delta = {delta} apart"
            )));
        }
    }
    let lower_bound_log = separation_bound_log(n, r);
    if same_multiset(a, b) {
        return Ok(BoltzSeparationReport {
            lower_bound_log,
            measured_gap: 0.0,
            measured_gap_log: f64::NEG_INFINITY,
            skipped: true,
            passes: true,
        });
    }
    let gap = boltz_log_gap(a, b)?;
    Ok(BoltzSeparationReport {
        lower_bound_log,
        measured_gap: gap.value().abs(),
        measured_gap_log: gap.log_abs,
        skipped: false,
        passes: gap.log_abs > lower_bound_log,
    })
}

/// Random `n`-vector with `|a_i| <= r` and every gap between sorted entries
/// greater than `delta`, returned in random order. `None` when no such vector fits.
pub fn gen_separated_logits<R: Rng + ?Sized>(rng: &mut R, n: usize, r: f64, delta: f64) -> Option<Vec<f64>> {
    let step = delta * (1.0 + 1e-9);
    let spare = 2.0 * r - (n.saturating_sub(1)) as f64 * step;
    if n == 0 || !(spare > 0.0) {
        return None;
    }
    let mut u: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * spare).collect();
    u.sort_by(f64::total_cmp);
    let mut a: Vec<f64> = u.iter().enumerate().map(|(i, x)| (-r + x + i as f64 * step).clamp(-r, r)).collect();
    a.shuffle(rng);
    Some(a)
}

/// A jointly separated pair: both vectors are drawn from one separated pool
/// of between `n` and `2n` values, so they often share entries.
pub fn gen_separated_pair<R: Rng + ?Sized>(rng: &mut R, n: usize, r: f64, delta: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let fit = ((2.0 * r / (delta * (1.0 + 1e-9))).floor() as usize).saturating_add(1);
    let hi = (2 * n).min(fit);
    if hi < n {
        return None;
    }
    let m = rng.random_range(n..=hi);
    let pool = gen_separated_logits(rng, m, r, delta)?;
    let a: Vec<f64> = pool.choose_multiple(rng, n).copied().collect();
    let b: Vec<f64> = pool.choose_multiple(rng, n).copied().collect();
    Some((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Logistic-form Boltzmann value for two entries.
    fn boltz2(x: f64, y: f64) -> f64 {
        let (hi, lo) = if x > y { (x, y) } else { (y, x) };
        let t = hi - lo;
        hi - t / (1.0 + t.exp())
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_stable(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax_stable(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15);
        let p = softmax_stable(&[1.0, f64::NEG_INFINITY, 2.0]).unwrap();
        assert_eq!(p[1], 0.0);
        assert!(matches!(
            softmax_stable(&[f64::NEG_INFINITY; 2]),
            Err(Error::AllMasked)
        ));
    }

    #[test]
    fn boltz_examples() {
        assert_eq!(boltz(&[3.5; 4]).unwrap().value, 3.5);
        let v = boltz(&[2f64.ln(), 0.0]).unwrap().value;
        assert!((v - 2.0 / 3.0 * 2f64.ln()).abs() < 1e-15);
        assert!((v - 0.46210).abs() < 1e-5);
        let r = boltz(&[0.3, -1.2, 4.0]).unwrap();
        assert!((r.value - (r.log_partition - r.entropy)).abs() < 1e-12);
    }

    #[test]
    fn boltz_rejects_infinite() {
        assert!(boltz(&[0.0, f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn masked_examples() {
        let a = [1.0, 5.0, -2.0];
        let ninf = f64::NEG_INFINITY;
        assert_eq!(boltz_masked(&a, &[ninf, 0.0, ninf]).unwrap(), 5.0);
        assert_eq!(boltz_masked(&a, &[0.0; 3]).unwrap(), boltz(&a).unwrap().value);
        assert!(matches!(boltz_masked(&a, &[ninf; 3]), Err(Error::AllMasked)));
        assert!(matches!(boltz_masked(&a, &[0.0, 1.0, 0.0]), Err(Error::InvalidMask(_))));
    }

    #[test]
    fn masked_identity_holds_exactly() {
        // a.sigma(a + c) = (a + c).sigma(a + c) over unmasked entries
        let a = [0.7, -3.1, 2.2, 1.0];
        let c = [0.0, f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
        let lhs = boltz_masked(&a, &c).unwrap();
        let rhs = boltz(&[0.7, 2.2]).unwrap().value;
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn gradient_uniform() {
        let g = boltz_grad(&[0.3; 4]).unwrap();
        for x in g {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn curvature_of_single_entry_is_zero() {
        assert_eq!(boltz_curvature(&[2.0], 0).unwrap(), 0.0);
    }

    #[test]
    fn log_gap_matches_direct_difference_when_large() {
        let a = [1.0, 2.5, -0.5];
        let b = [1.0, 2.0, -0.5];
        let g = boltz_log_gap(&a, &b).unwrap();
        let direct = boltz(&a).unwrap().value - boltz(&b).unwrap().value;
        assert!((g.value() - direct).abs() < 1e-13 * direct.abs().max(1.0));
    }

    #[test]
    fn log_gap_two_entry_oracle() {
        // shared max, so the gap is f(t_b) - f(t_a) with f(t) = t / (1 + e^t)
        let a = [10.0, 0.0];
        let b = [10.0, -8.0];
        let g = boltz_log_gap(&b, &a).unwrap();
        let expect = 10.0 / (1.0 + 10f64.exp()) - 18.0 / (1.0 + 18f64.exp());
        assert!((g.value() - expect).abs() < 1e-15);
        assert!((g.value() - 4.5e-4).abs() < 1e-5);
        assert!((boltz2(10.0, 0.0) - boltz(&a).unwrap().value).abs() < 1e-14);
    }

    #[test]
    fn log_gap_survives_underflow() {
        // both remainders sit e^-900 below the shared maximum
        let a = [0.0, -900.0];
        let b = [0.0, -910.0];
        let g = boltz_log_gap(&b, &a).unwrap();
        // f(t) = t / (1 + e^t) ~ t e^{-t}; log gap = log(900 e^-900 - 910 e^-910)
        let expect = 900f64.ln() - 900.0 + (-(910.0 / 900.0) * (-10f64).exp()).ln_1p();
        assert!((g.log_abs - expect).abs() < 1e-9, "{} vs {expect}", g.log_abs);
        assert_eq!(g.sign, 1.0);
    }

    #[test]
    fn log_gap_without_shared_entries() {
        let a = [3.0, -1.0];
        let b = [2.0, 0.5];
        let g = boltz_log_gap(&a, &b).unwrap();
        assert!((g.value() - (boltz2(3.0, -1.0) - boltz2(2.0, 0.5))).abs() < 1e-14);
    }

    #[test]
    fn separation_examples() {
        let r = check_boltz_separation(&[10.0, 0.0], &[10.0, -8.0], 10.0, 4.5).unwrap();
        assert!(r.passes && !r.skipped);
        assert!((r.measured_gap - 4.5e-4).abs() < 1e-5);
        assert!((r.lower_bound_log.exp() - 9.9e-10).abs() < 1e-11);

        let r = check_boltz_separation(&[1.0, 9.0], &[9.0, 1.0], 10.0, 4.5).unwrap();
        assert!(r.skipped && r.passes);

        let r = check_boltz_separation(&[20.0, 10.0], &[10.0, 0.0], 20.0, 4.5).unwrap();
        assert!(r.passes);
        assert!((r.measured_gap - 10.0).abs() < 1e-3);
    }

    #[test]
    fn separation_preconditions_are_reported() {
        assert!(matches!(
            check_boltz_separation(&[10.0, 0.0], &[10.0, -8.0], 5.0, 4.5),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            check_boltz_separation(&[1.0, 2.0], &[1.0, 3.0], 5.0, 4.5),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            check_boltz_separation(&[10.0, 0.0], &[10.0, -8.0], 10.0, 3.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn cross_vector_closeness_is_a_precondition_error() {
        let r = check_boltz_separation(&[10.0, 0.0], &[10.0, 0.5], 10.0, 4.5);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn generated_pairs_meet_the_preconditions() {
        let mut g = crate::numeric::rng(3);
        for n in 2..=8 {
            let delta = 2.0 * (n as f64).ln() + 3.1;
            for _ in 0..50 {
                let (a, b) = gen_separated_pair(&mut g, n, 40.0, delta).unwrap();
                assert!(check_boltz_separation(&a, &b, 40.0, delta).unwrap().passes);
            }
        }
    }
}
