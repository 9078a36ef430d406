//! Split a synthetic log per user, train the taxonomy model and a flat
//! baseline, and compare them on the held-out next transaction.

use tfrec::eval::{evaluate, filter_repeats, split, EvalOptions, SplitSpec};
use tfrec::io::synth::{generate_synthetic, SynthSpec};
use tfrec::trainer::{train, ModelConfig};
use tfrec::ScoringModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_synthetic(&SynthSpec { users: 3_000, seed: 1, ..SynthSpec::default() })?;
    let s = split(&corpus.log, &SplitSpec::new(0.5, 1))?;
    let test = filter_repeats(&s.test, &s.train);
    println!("{} training transactions, {} test users", s.train.transaction_count(), test.len());

    let tax = &corpus.taxonomy;
    for (name, config) in [("MF(0)", ModelConfig::mf(0)), ("TF(full, 0)", ModelConfig::tf(tax, 0))] {
        let config = ModelConfig { factors: 10, epochs: 20, ..config };
        let outcome = train(&s.train, tax, &config)?;
        let last = outcome.epochs.last().expect("at least one epoch");
        let view = tax.restrict_levels(config.taxonomy_update_levels)?;
        let model = ScoringModel::new(&outcome.store, &view, config.decay());
        let report = evaluate(&model, &s.train, &test, &EvalOptions::default())?;
        println!(
            "{name:<12} final mean c {:.3} | AUC {:.4} | mean rank {:.0} | category AUC {:?} | cold-item rank {:?}",
            last.mean_c,
            report.mean_auc,
            report.mean_meanrank,
            report.level_auc.iter().map(|a| a.map(|v| (v * 1000.0).round() / 1000.0)).collect::<Vec<_>>(),
            report.cold_start_mean_rank.map(f64::round)
        );
    }
    Ok(())
}
