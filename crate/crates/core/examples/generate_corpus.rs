//! Generate a seeded synthetic purchase corpus and write it to disk.
//!
//! ```text
//! cargo run --release --example generate_corpus -- /tmp/corpus
//! ```

use tfrec::io::synth::{generate_synthetic, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "corpus".to_string());
    let spec = SynthSpec { users: 2_000, seed: 7, ..SynthSpec::default() };
    let corpus = generate_synthetic(&spec)?;

    let tax = &corpus.taxonomy;
    println!("taxonomy: depth {}, {} nodes, {} leaves", tax.depth(), tax.node_count(), tax.leaves().len());
    for level in (0..=tax.depth()).rev() {
        println!("  level {level}: {} nodes", tax.level_nodes(level).len());
    }
    println!(
        "log: {} users, {} transactions, {} (user, transaction, item) triples",
        corpus.log.user_count(),
        corpus.log.transaction_count(),
        corpus.log.triple_count()
    );
    println!("cold-start items: {}", corpus.cold_items.len());
    let first = &corpus.users[0];
    println!("user 0 favourite subcategories: {:?}", first.favourites);

    corpus.write_to(&out)?;
    println!("wrote taxonomy, transactions and ground truth to {out}/");
    Ok(())
}
