//! Quantize, attend, read out: approximate the broadcast column mean on
//! `[0,1]^{1 x 2}` and watch the L1 error shrink as the grid refines.

use ctxmap::approximator::{build_two_layer_approximator, estimate_dist_p, ApproxConfig, Target};
use ndarray::Array2;

fn main() -> ctxmap::Result<()> {
    let target = Target::ColumnMean;
    for grid in [4, 8, 16] {
        let ap = build_two_layer_approximator(&|z| target.eval(z), &ApproxConfig::new(1, 2, grid, 1))?;
        let f = |z: &Array2<f64>| ap.forward(z);
        let g = |z: &Array2<f64>| Ok(target.eval(z));
        let rep = estimate_dist_p(&f, &g, 1.0, 1, 2, 10_000, 9)?;
        println!("D = {grid:>2}: {} bumps, dist_1 ~ {:.4} +- {:.4}", ap.keys, rep.dist_p_estimate, rep.standard_error);
    }
    Ok(())
}
