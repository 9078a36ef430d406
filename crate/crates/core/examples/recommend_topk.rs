//! Top-k recommendations for one user at the item level and at a category
//! level, with and without already-purchased items.

use tfrec::io::synth::{generate_synthetic, SynthSpec};
use tfrec::ranker::{recommend_at_level, recommend_topk, RankMode};
use tfrec::trainer::{train, ModelConfig};
use tfrec::ScoringModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_synthetic(&SynthSpec { users: 2_000, seed: 4, ..SynthSpec::default() })?;
    let (tax, log) = (&corpus.taxonomy, &corpus.log);
    let config = ModelConfig { factors: 10, epochs: 15, ..ModelConfig::tf(tax, 1) };
    let store = train(log, tax, &config)?.store;
    let view = tax.restrict_levels(config.taxonomy_update_levels)?;
    let model = ScoringModel::new(&store, &view, config.decay());

    let user = 0;
    let history = log.recent(user, config.max_prev_transactions);
    let bought = log.purchased(user);
    println!("user {user} bought {bought:?}");
    println!("top categories: {:?}", corpus.users[user].favourites);

    let mode = RankMode::Exhaustive;
    let items = recommend_topk(&model, user, &history, 5, &mode, None)?;
    println!("top-5 items: {items:?}");
    let fresh = recommend_topk(&model, user, &history, 5, &mode, Some(&bought))?;
    println!("top-5 new items: {fresh:?}");
    for level in 1..tax.depth() {
        let cats = recommend_at_level(&model, user, &history, 3, &mode, None, level)?;
        let ids: Vec<_> = cats.iter().map(|c| c.0).collect();
        println!("top-3 at level {level}: {ids:?}");
    }
    Ok(())
}
