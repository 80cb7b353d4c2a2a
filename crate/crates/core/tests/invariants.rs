//! Property tests against direct reimplementations.

use ctxmap::approximator::{
    cell_of, duplicate_fraction, enumerate_subgrid, penalty_scalar, quantize_scalar, sample_duplicate_fraction, QuantizerSpec,
};
use ctxmap::attention::{build_contextual_map, self_attention_softmax, AttentionWeights, CMMode};
use ctxmap::boltzmann::{boltz, boltz_log_gap, softmax_stable};
use ctxmap::sequences::{check_separated, gen_separated_dataset, SeparationParams, TokenSequence};
use ndarray::{Array2, Axis};
use proptest::prelude::*;

fn naive_boltz(a: &[f64]) -> f64 {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = a.iter().map(|x| (x - m).exp()).collect();
    a.iter().zip(&w).map(|(x, wi)| x * wi).sum::<f64>() / w.iter().sum::<f64>()
}

/// `Z + W_O W_V Z softmax(Z^T W_K^T W_Q Z)` with column-wise softmax, written out.
fn naive_attention(z: &Array2<f64>, w: &AttentionWeights) -> Array2<f64> {
    let scores = z.t().dot(&w.w_k().t()).dot(&w.w_q()).dot(z);
    let mut p = scores.clone();
    for mut col in p.columns_mut() {
        let m = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        col.mapv_inplace(|x| (x - m).exp());
        let s = col.sum();
        col /= s;
    }
    z + &w.w_o().dot(&w.w_v()).dot(z).dot(&p)
}

fn logits() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, 1..10)
}

proptest! {
    #[test]
    fn boltz_matches_direct_formula(a in logits()) {
        let v = boltz(&a).unwrap().value;
        prop_assert!((v - naive_boltz(&a)).abs() <= 1e-12 * (1.0 + v.abs()));
    }

    #[test]
    fn boltz_lies_between_mean_and_max(a in logits()) {
        let v = boltz(&a).unwrap().value;
        let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        prop_assert!(v <= max + 1e-12 && v >= mean - 1e-12);
    }

    #[test]
    fn boltz_is_permutation_invariant(a in logits(), k in 0usize..10) {
        let mut b = a.clone();
        b.rotate_left(k % a.len());
        b.reverse();
        prop_assert!((boltz(&a).unwrap().value - boltz(&b).unwrap().value).abs() <= 1e-12 * (1.0 + a.iter().map(|x| x.abs()).sum::<f64>()));
    }

    #[test]
    fn boltz_shifts_with_its_input(a in logits(), c in -100.0..100.0f64) {
        let shifted: Vec<f64> = a.iter().map(|x| x + c).collect();
        let lhs = boltz(&shifted).unwrap().value;
        prop_assert!((lhs - boltz(&a).unwrap().value - c).abs() <= 1e-10 * (1.0 + lhs.abs() + c.abs()));
    }

    #[test]
    fn softmax_is_a_distribution(a in logits()) {
        let p = softmax_stable(&a).unwrap();
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_gap_agrees_with_subtraction(a in prop::collection::vec(-5.0..5.0f64, 2..6), b in prop::collection::vec(-5.0..5.0f64, 2..6)) {
        let direct = naive_boltz(&a) - naive_boltz(&b);
        prop_assume!(direct.abs() > 1e-6);
        let g = boltz_log_gap(&a, &b).unwrap();
        prop_assert!((g.value() - direct).abs() <= 1e-8 * direct.abs());
    }

    #[test]
    fn quantizer_snaps_to_the_cell_top(grid in 2usize..20, z in 0.0..1.0f64) {
        let spec = QuantizerSpec::with_default_delta(grid).unwrap();
        let below = (z * grid as f64).ceil() - 1.0;
        prop_assume!(z - below / grid as f64 > spec.step_delta + 1e-12);
        let want = cell_of(z, grid) as f64 / grid as f64;
        prop_assert!((quantize_scalar(z, &spec) - want).abs() < 1e-12);
        // a cell top maps to itself
        prop_assert!((quantize_scalar(want, &spec) - want).abs() < 1e-12);
    }

    #[test]
    fn penalty_flags_exactly_the_outside(grid in 2usize..20, z in -3.0..4.0f64) {
        let spec = QuantizerSpec::with_default_delta(grid).unwrap();
        let p = penalty_scalar(z, &spec);
        if z < 0.0 || z > 1.0 {
            prop_assert!((p + 1.0).abs() < 1e-12);
        } else if z >= spec.step_delta && z <= 1.0 - spec.step_delta {
            prop_assert!(p.abs() < 1e-12);
        } else {
            prop_assert!((-1.0..=0.0).contains(&p));
        }
    }

    #[test]
    fn attention_matches_dense_formula_and_is_equivariant(seed in 0u64..200, shift in 1usize..5) {
        let p = SeparationParams::new(0.5, 1.0, 0.1).unwrap();
        let ds = gen_separated_dataset(4, 5, 4, p, true, seed).unwrap();
        let w = build_contextual_map(&ds, &p, CMMode::MaxLogit { target: 10.0 }, 1, seed).unwrap();
        let z = ds.sequences[0].as_array();
        let y = self_attention_softmax(&ds.sequences[0], &w).unwrap();
        let oracle = naive_attention(z, &w);
        prop_assert!((y.as_array() - &oracle).iter().all(|e| e.abs() < 1e-10));

        let perm: Vec<usize> = (0..z.ncols()).map(|k| (k + shift) % z.ncols()).collect();
        let zp = TokenSequence::new(z.select(Axis(1), &perm)).unwrap();
        let yp = self_attention_softmax(&zp, &w).unwrap();
        let want = y.as_array().select(Axis(1), &perm);
        prop_assert!((yp.as_array() - &want).iter().all(|e| e.abs() < 1e-10));
    }

    #[test]
    fn generated_data_is_separated(seed in 0u64..500, n in 1usize..8, d in 2usize..6) {
        let p = SeparationParams::new(0.5, 1.0, 0.1).unwrap();
        let ds = gen_separated_dataset(3, n, d, p, true, seed).unwrap();
        let rep = check_separated(&ds, &p).unwrap();
        prop_assert!(rep.passes);
        prop_assert!(ds.first_duplicate_sequence().is_none());
    }
}

#[test]
fn duplicate_fraction_matches_enumeration() {
    for (grid, d, n) in [(3, 1, 2), (4, 1, 3), (2, 2, 3), (3, 2, 2)] {
        let cells = (grid as f64).powi(d as i32);
        let distinct = enumerate_subgrid(grid, d, n).unwrap().len() as f64;
        let exact = 1.0 - distinct / cells.powi(n as i32);
        assert!((duplicate_fraction(grid, d, n) - exact).abs() < 1e-12);
        let (est, se) = sample_duplicate_fraction(grid, d, n, 20_000, 5);
        assert!((est - exact).abs() < 4.0 * se + 1e-9, "{est} vs {exact}");
    }
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let out = out.to_str().unwrap();
    assert_eq!(ctxmap::cli::main(["ctxmap", "hardmax-demo", "--trials", "5", "--out", out]), 0);
    assert_eq!(ctxmap::cli::main(["ctxmap", "hardmax-demo", "--bogus"]), 2);
    let data = dir.path().join("d.json");
    let data = data.to_str().unwrap();
    assert_eq!(ctxmap::cli::main(["ctxmap", "gen-data", "--data", data, "--out", out]), 0);
    // identity weights leave distinct contexts of a shared token unseparated
    assert_eq!(ctxmap::cli::main(["ctxmap", "verify-cm", "--data", data, "--identity", "--out", out]), 1);
    assert_eq!(ctxmap::cli::main(["ctxmap", "check-sep", "--data", "/nonexistent/x.json", "--out", out]), 2);
}
