//! Train 1- and 3-block rank-1 Transformers on a context-dependent labeling task.
//! Pass a path to also write the per-epoch CSV.

use ctxmap::training::{gen_synthetic_task, train, Rank1Model, TrainConfig, DEFAULT_DIM, DEFAULT_HIDDEN};

fn main() -> ctxmap::Result<()> {
    let csv = std::env::args().nth(1);
    let ds = gen_synthetic_task(256, 8, 32, 4, DEFAULT_DIM, 0)?;
    for depth in [1, 3] {
        let mut model = Rank1Model::new(DEFAULT_DIM, DEFAULT_HIDDEN, 4, depth, 100)?;
        let cfg = TrainConfig { stop_at_accuracy: Some(0.98), ..TrainConfig::default() };
        let m = train(&mut model, &ds, &cfg)?;
        println!("depth {depth}: 0.98 train accuracy after {:?} epochs", m.epochs_to_reach(0.98));
        if let Some(path) = &csv {
            std::fs::write(format!("{path}.depth{depth}.csv"), m.to_csv())?;
        }
    }
    Ok(())
}
