//! Generate a tokenwise separated dataset, check it, and round-trip it through both file formats.

use ctxmap::sequences::{
    assign_context_labels, check_separated, gen_separated_dataset_with, load_dataset, save_dataset, GenConfig,
    SeparationParams,
};

fn main() -> ctxmap::Result<()> {
    let p = SeparationParams::new(0.5, 1.0, 0.1)?;
    // 10 sequences of 4 tokens in R^3, drawn from a shared vocabulary of 12 tokens
    let cfg = GenConfig::new(10, 4, 3, p, 42).vocab_size(12);
    let ds = assign_context_labels(gen_separated_dataset_with(&cfg)?, 3, 1)?;

    let rep = check_separated(&ds, &p)?;
    println!("separated: {}  norms in [{:.3}, {:.3}]  closest distinct tokens {:.3}", rep.passes, rep.min_norm, rep.max_norm, rep.min_pair_dist);
    println!("margins (r_min, r_max, eps): {:?}", rep.margins);

    let dir = std::env::temp_dir().join("ctxmap-example");
    std::fs::create_dir_all(&dir)?;
    for name in ["data.json", "data.txt"] {
        let path = dir.join(name);
        save_dataset(&ds, &path)?;
        let back = load_dataset(&path)?;
        println!("{name}: round trip exact = {}", back == ds);
    }
    Ok(())
}
