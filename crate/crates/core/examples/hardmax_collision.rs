//! Hardmax attention cannot tell `(a1 v, a2 v, a4 v)` from `(a1 v, a3 v, a4 v)`
//! on the shared tokens, whatever the weights; softmax attention can.

use ctxmap::attention::hardmax_collision_demo;

fn main() -> ctxmap::Result<()> {
    for heads in [1, 2, 4] {
        let rep = hardmax_collision_demo(3, heads, 11, 100)?;
        println!(
            "heads = {heads}: hardmax collision rate {:.2}; softmax separated {}/{} (min gap {:.2e})",
            rep.collision_rate, rep.softmax_separations, rep.trials, rep.softmax_min_gap
        );
    }
    Ok(())
}
