//! With strong accessory co-purchases, a first-order Markov term predicts
//! the next basket better than the user factor alone.

use tfrec::eval::{filter_repeats, holdout_auc, split, SplitSpec};
use tfrec::io::synth::{generate_synthetic, SynthSpec};
use tfrec::trainer::{train, ModelConfig};
use tfrec::DecayWeights;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("lag weights for N=3, alpha=1: {:?}", DecayWeights::new(1.0, 3).weights());
    let spec = SynthSpec { users: 3_000, copurchase_strength: 0.7, seed: 9, ..SynthSpec::default() };
    let corpus = generate_synthetic(&spec)?;
    let tax = &corpus.taxonomy;
    let s = split(&corpus.log, &SplitSpec::new(0.5, 9))?;
    let test = filter_repeats(&s.test, &s.train);
    for order in [0, 1, 2] {
        let config = ModelConfig { factors: 10, epochs: 20, ..ModelConfig::tf(tax, order) };
        let outcome = train(&s.train, tax, &config)?;
        let auc = holdout_auc(&outcome.store, tax, &config, &s.train, &test);
        println!("TF(full, {order}): held-out AUC {auc:.4}");
    }
    Ok(())
}
