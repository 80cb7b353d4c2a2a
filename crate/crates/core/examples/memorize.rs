//! Memorize token labels with one attention layer plus one ReLU layer, with
//! and without repeated tokens.

use ctxmap::attention::CMMode;
use ctxmap::memorizer::build_one_layer_memorizer;
use ctxmap::sequences::{assign_context_labels, gen_separated_dataset_with, GenConfig, SeparationParams};

fn main() -> ctxmap::Result<()> {
    let p = SeparationParams::new(0.5, 1.0, 0.1)?;
    let mode = CMMode::MaxLogit { target: 2.0 };

    let distinct = assign_context_labels(gen_separated_dataset_with(&GenConfig::new(50, 8, 8, p, 1))?, 5, 2)?;
    let (_, rep) = build_one_layer_memorizer(&distinct, &p, mode, false, 3)?;
    println!("distinct tokens: exact {:.3}, params {} <= {}", rep.exact_match_rate, rep.param_count, rep.param_bound);

    // repeats need the positional encoding to tell positions apart
    let repeats = GenConfig::new(50, 8, 8, p, 4).vocab_size(6).allow_duplicates();
    let dup = assign_context_labels(gen_separated_dataset_with(&repeats)?, 5, 5)?;
    let (_, rep) = build_one_layer_memorizer(&dup, &p, mode, true, 6)?;
    println!("repeated tokens + positions: exact {:.3}, {} contexts", rep.exact_match_rate, rep.contexts);
    Ok(())
}
