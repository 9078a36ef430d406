//! Row-locked multi-threaded training: per-epoch time and held-out AUC for
//! several thread counts.

use tfrec::eval::{filter_repeats, holdout_auc, split, SplitSpec};
use tfrec::io::synth::{generate_synthetic, SynthSpec};
use tfrec::trainer::{train, train_parallel, ModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_synthetic(&SynthSpec { seed: 5, ..SynthSpec::default() })?;
    let tax = &corpus.taxonomy;
    let s = split(&corpus.log, &SplitSpec::new(0.5, 5))?;
    let test = filter_repeats(&s.test, &s.train);
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    println!("{cpus} CPU(s) available");

    for threads in [1, 2, 4, 8] {
        let config = ModelConfig { factors: 10, epochs: 10, threads, ..ModelConfig::tf(tax, 0) };
        let outcome =
            if threads == 1 { train(&s.train, tax, &config)? } else { train_parallel(&s.train, tax, &config, None)? };
        let per_epoch = outcome.epochs.iter().map(|e| e.wall_seconds).sum::<f64>() / outcome.epochs.len() as f64;
        let auc = holdout_auc(&outcome.store, tax, &config, &s.train, &test);
        println!("{threads} thread(s): {:.3}s per epoch, held-out AUC {auc:.4}", per_epoch);
    }
    Ok(())
}
