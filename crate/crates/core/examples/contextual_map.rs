//! Rank-1 attention as a contextual map: every (vocabulary, token) context gets
//! its own output, while outputs stay within a small ball around the inputs.

use ctxmap::attention::{build_contextual_map, verify_contextual_map, CMMode};
use ctxmap::sequences::{gen_separated_dataset, gen_separated_dataset_with, GenConfig, SeparationParams};

fn main() -> ctxmap::Result<()> {
    let p = SeparationParams::new(0.5, 1.0, 0.1)?;
    let ds = gen_separated_dataset(20, 6, 8, p, true, 3)?;
    let w = build_contextual_map(&ds, &p, CMMode::MaxLogit { target: 30.0 }, 1, 7)?;
    let rep = verify_contextual_map(&w, &ds, &p)?;
    println!("scaled: N=20 n=6 d=8, {} context pairs", rep.pairs_checked);
    println!("  max output norm {:.4} < {:.4}: {}", rep.max_out_norm, rep.r_bound, rep.passes_cond1);
    println!("  min gap {:.3e} (log {:.2}); guaranteed log gap {:.3e}", rep.min_distinct_gap, rep.min_distinct_gap_log, rep.delta_theory_log);
    println!("  displacement ratio {:.3}", rep.max_displacement_ratio);

    // the worst-case constant on a tiny problem; gaps are only meaningful in log space
    let tiny = gen_separated_dataset_with(&GenConfig::new(2, 2, 3, p, 21).vocab_size(3))?;
    let w = build_contextual_map(&tiny, &p, CMMode::ExactConstant, 1, 5)?;
    let rep = verify_contextual_map(&w, &tiny, &p)?;
    println!(
        "exact constant: scale {:.3e}, log gap {:.1} > {:.1}: {}",
        w.kq.scale, rep.min_distinct_gap_log, rep.delta_theory_log, rep.passes_cond2
    );
    Ok(())
}
