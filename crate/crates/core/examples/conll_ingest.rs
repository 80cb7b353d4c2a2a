//! Read a CoNLL-style column file into padded, labeled token sequences.

use ctxmap::sequences::{load_conll_columns, ConllOptions};

fn main() -> ctxmap::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/sample.conll").into());
    let corpus = load_conll_columns(path.as_ref(), &ConllOptions::new(8, 0))?;
    let ds = &corpus.dataset;
    println!("{} sentences padded to {} tokens, d = {}", ds.len(), ds.seq_len(), ds.dim());
    println!("tags: {:?}", corpus.tags);
    println!("{} distinct words, sentence lengths {:?}", corpus.words.len(), corpus.lengths);
    Ok(())
}
