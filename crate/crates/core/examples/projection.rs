//! Find a unit direction whose scalar projection keeps a constant fraction of
//! every pairwise distance, then build rank-1 key/query weights from it.

use ctxmap::projection::{build_kq_weights, find_distance_preserving_direction, verify_logit_gaps, DEFAULT_MAX_TRIES};
use ctxmap::sequences::{extract_vocab, gen_separated_dataset, SeparationParams};

fn main() -> ctxmap::Result<()> {
    let p = SeparationParams::new(0.5, 1.0, 0.1)?;
    let ds = gen_separated_dataset(6, 3, 4, p, true, 5)?;
    let vocab = extract_vocab(&ds);
    let points: Vec<Vec<f64>> = vocab.tokens.iter().map(|t| t.to_vec()).collect();

    let cert = find_distance_preserving_direction(&points, DEFAULT_MAX_TRIES, 1)?;
    println!(
        "{} points (origin included): worst ratio {:.4} >= required {:.4} after {} tries",
        cert.num_points, cert.c_lower, cert.c_required, cert.tries_used
    );

    let delta = 2.0 * 3f64.ln() + 3.0;
    let kq = build_kq_weights(&vocab, &p, delta, 1, 1)?;
    let gaps = verify_logit_gaps(&kq, &points, delta);
    println!("logit scale {:.3e}; smallest logit gap {:.3e} (needs > {delta:.3})", kq.scale, gaps.min_gap);
    Ok(())
}
