//! Dump user factors, offsets and effective item factors as CSV.

use tfrec::factors::export_csv;
use tfrec::io::synth::{generate_synthetic, SynthSpec};
use tfrec::trainer::{train, ModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_synthetic(&SynthSpec { users: 200, branching: vec![3, 4], seed: 8, ..SynthSpec::default() })?;
    let tax = &corpus.taxonomy;
    let config = ModelConfig { factors: 4, epochs: 10, ..ModelConfig::tf(tax, 0) };
    let store = train(&corpus.log, tax, &config)?.store;
    let csv = export_csv(&store, &tax.restrict_levels(config.taxonomy_update_levels)?);
    let mut kinds = std::collections::BTreeMap::new();
    for line in csv.lines().skip(1) {
        *kinds.entry(line.split(',').next().unwrap_or_default().to_string()).or_insert(0) += 1;
    }
    println!("{}", csv.lines().next().unwrap_or_default());
    println!("rows per kind: {kinds:?}");
    for line in csv.lines().filter(|l| l.starts_with("item_effective")).take(3) {
        println!("{line}");
    }
    Ok(())
}
