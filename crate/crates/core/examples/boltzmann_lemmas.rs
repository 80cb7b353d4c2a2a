//! The Boltzmann operator `a . softmax(a)`: its derivative regions and the
//! separation floor `(log n)^2 e^{-2r}`, evaluated in log space.

use ctxmap::boltzmann::{boltz, boltz_curvature, boltz_grad, check_boltz_separation, separation_bound_log};

fn main() -> ctxmap::Result<()> {
    let a = [3.0, 0.0, -4.0, -9.0];
    let rep = boltz(&a)?;
    println!("Boltz(a) = {:.6}  (log-partition {:.6} - entropy {:.6})", rep.value, rep.log_partition, rep.entropy);

    let g = boltz_grad(&a)?;
    let cutoff = 3.0 - (a.len() as f64).ln();
    for i in 0..a.len() {
        println!(
            "a[{i}] = {:>5}  grad {:>+.3e}  curvature {:>+.3e}  (below max - log n - 1: {})",
            a[i],
            g[i],
            boltz_curvature(&a, i)?,
            a[i] < cutoff - 1.0
        );
    }

    // the lower entry moves a little; both pairs are separated with delta = 2 log n + 3.1
    let delta = 2.0 * 2f64.ln() + 3.1;
    for (x, y, r) in [([10.0, 0.0], [10.0, -8.0], 10.0), ([300.0, 0.0], [300.0, -6.0], 300.0)] {
        let s = check_boltz_separation(&x, &y, r, delta)?;
        println!(
            "r = {r}: log gap {:.3} vs log floor {:.3} -> {}",
            s.measured_gap_log,
            separation_bound_log(2, r),
            if s.passes { "separated" } else { "NOT separated" }
        );
    }
    Ok(())
}
