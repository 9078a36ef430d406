//! Sibling tuples: inspect one sampled group, then compare training with and
//! without them at the same tuple budget.

use tfrec::eval::{filter_repeats, holdout_auc, split, SplitSpec};
use tfrec::io::synth::{generate_synthetic, SynthSpec};
use tfrec::sampler::{TupleMode, TupleSampler};
use tfrec::trainer::{train, ModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_synthetic(&SynthSpec { users: 3_000, seed: 2, ..SynthSpec::default() })?;
    let tax = &corpus.taxonomy;

    let mut sampler = TupleSampler::new(&corpus.log, tax.full_view(), 1.0, 9)?;
    println!("one sibling group (positive vs sampled sibling, per level):");
    for t in sampler.next_group() {
        assert_eq!(t.mode, TupleMode::Sibling);
        println!("  level {}: node {} vs {}", t.level, t.pos, t.neg);
    }

    let s = split(&corpus.log, &SplitSpec::new(0.5, 2))?;
    let test = filter_repeats(&s.test, &s.train);
    for mix in [0.0, 0.5] {
        let config = ModelConfig { factors: 10, epochs: 20, sibling_mix: mix, ..ModelConfig::tf(tax, 0) };
        let outcome = train(&s.train, tax, &config)?;
        let auc = holdout_auc(&outcome.store, tax, &config, &s.train, &test);
        println!("sibling_mix {mix}: held-out AUC {auc:.4}");
    }
    Ok(())
}
