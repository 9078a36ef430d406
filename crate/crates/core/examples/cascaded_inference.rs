//! Top-down cascaded ranking versus exhaustive scoring: accuracy against the
//! number of affinity evaluations.

use tfrec::eval::{evaluate, filter_repeats, split, EvalOptions, SplitSpec};
use tfrec::io::synth::{generate_synthetic, SynthSpec};
use tfrec::ranker::{rank_cascaded, CascadeConfig, RankMode};
use tfrec::trainer::{train, ModelConfig};
use tfrec::ScoringModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_synthetic(&SynthSpec { users: 3_000, seed: 3, ..SynthSpec::default() })?;
    let tax = &corpus.taxonomy;
    let s = split(&corpus.log, &SplitSpec::new(0.5, 3))?;
    let test = filter_repeats(&s.test, &s.train);
    let config = ModelConfig { factors: 10, epochs: 20, ..ModelConfig::tf(tax, 0) };
    let store = train(&s.train, tax, &config)?.store;
    let view = tax.restrict_levels(config.taxonomy_update_levels)?;
    let model = ScoringModel::new(&store, &view, config.decay());

    let base = evaluate(&model, &s.train, &test, &EvalOptions::default())?;
    println!("exhaustive: AUC {:.4}", base.mean_auc);
    for fraction in [1.0, 0.5, 0.25, 0.1] {
        let mode = RankMode::Cascaded(CascadeConfig::uniform(fraction, tax)?);
        let r = evaluate(&model, &s.train, &test, &EvalOptions { mode, ..EvalOptions::default() })?;
        println!(
            "cascade {fraction:>4}: AUC {:.4} ({:.1}% of exhaustive) using {:.1}% of the evaluations",
            r.mean_auc,
            100.0 * r.mean_auc / base.mean_auc,
            100.0 * r.evaluations as f64 / r.exhaustive_evaluations as f64
        );
    }

    let cfg = CascadeConfig::uniform(0.1, tax)?;
    let ranked = rank_cascaded(&model, 0, &[], &cfg, 0)?;
    println!("user 0, fraction 0.1: {} leaves reached; best {:?}", ranked.entries.len(), ranked.entries.first());
    Ok(())
}
