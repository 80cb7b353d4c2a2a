//! Masks with entries in {0, -inf}: a masked Boltzmann value only sees the
//! survivors, and causal attention leaves the first token's output unaffected by later ones.

use ctxmap::attention::{build_contextual_map, self_attention_masked, CMMode, MaskMatrix};
use ctxmap::boltzmann::boltz_masked;
use ctxmap::sequences::{gen_separated_dataset, SeparationParams, TokenSequence};

fn main() -> ctxmap::Result<()> {
    let inf = f64::NEG_INFINITY;
    println!("masked Boltz(1, 5, 2 | keep 0 and 2) = {:.4}", boltz_masked(&[1.0, 5.0, 2.0], &[0.0, inf, 0.0])?);

    let p = SeparationParams::new(0.5, 1.0, 0.1)?;
    let ds = gen_separated_dataset(1, 4, 3, p, true, 2)?;
    let w = build_contextual_map(&ds, &p, CMMode::MaxLogit { target: 10.0 }, 1, 1)?;
    let x = &ds.sequences[0];
    let mut changed = x.as_array().clone();
    changed.column_mut(3).mapv_inplace(|v| -v);
    let y1 = self_attention_masked(x, &w, &MaskMatrix::causal(4))?;
    let y2 = self_attention_masked(&TokenSequence::new(changed)?, &w, &MaskMatrix::causal(4))?;
    println!("first output unchanged after editing the last token: {}", y1.token(0) == y2.token(0));
    Ok(())
}
