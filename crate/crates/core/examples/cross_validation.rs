//! Pick the regularization weight and factor count on a validation slice
//! carved from the end of each user's training history.

use tfrec::eval::{split, SplitSpec};
use tfrec::io::synth::{generate_synthetic, SynthSpec};
use tfrec::trainer::{cross_validate, GridPoint, ModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_synthetic(&SynthSpec { users: 1_500, seed: 10, ..SynthSpec::default() })?;
    let tax = &corpus.taxonomy;
    let s = split(&corpus.log, &SplitSpec::new(0.5, 10))?;
    let base = ModelConfig { epochs: 10, ..ModelConfig::tf(tax, 0) };
    let grid: Vec<GridPoint> = [0.0001, 0.001, 0.01]
        .iter()
        .flat_map(|&lambda| [5, 10].map(|factors| GridPoint { lambda, factors }))
        .collect();
    let outcome = cross_validate(&s.train, tax, &base, &grid, 1)?;
    for (point, auc) in &outcome.scores {
        println!("lambda {:<7} K {:<3} validation AUC {}", point.lambda, point.factors, auc.map_or("diverged".into(), |a| format!("{a:.4}")));
    }
    println!("selected lambda={} K={} (AUC {:.4})", outcome.best.lambda, outcome.best.factors, outcome.best_auc);
    Ok(())
}
