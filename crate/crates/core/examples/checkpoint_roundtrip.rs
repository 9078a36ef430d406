//! Save a trained model, reload it, and show that corruption and a
//! mismatched taxonomy are rejected.

use tfrec::io::checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint};
use tfrec::io::synth::{generate_synthetic, SynthSpec};
use tfrec::trainer::{train, ModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_synthetic(&SynthSpec { users: 500, branching: vec![5, 4, 6], seed: 6, ..SynthSpec::default() })?;
    let tax = &corpus.taxonomy;
    let config = ModelConfig { factors: 8, epochs: 5, ..ModelConfig::tf(tax, 1) };
    let store = train(&corpus.log, tax, &config)?.store;
    let ckpt = Checkpoint { store, taxonomy_update_levels: config.taxonomy_update_levels, max_prev_transactions: 1 };

    let dir = std::env::temp_dir().join("tfrec-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.tfm");
    save_checkpoint(&ckpt, &path)?;
    println!("wrote {} bytes to {}", std::fs::metadata(&path)?.len(), path.display());

    let loaded = load_checkpoint(&path, tax)?;
    println!("reloaded: K={}, {} users, {} nodes", loaded.store.k(), loaded.store.user_count(), loaded.store.node_count());
    assert_eq!(encode(&loaded), std::fs::read(&path)?, "re-encoding is byte-identical");

    let mut bytes = std::fs::read(&path)?;
    bytes[100] ^= 0x01;
    println!("one flipped bit: {}", decode(&bytes).expect_err("corruption detected"));

    let other = generate_synthetic(&SynthSpec { users: 10, branching: vec![3, 3], seed: 1, ..SynthSpec::default() })?;
    println!("wrong taxonomy: {}", load_checkpoint(&path, &other.taxonomy).expect_err("dimension check"));
    Ok(())
}
