//! Seeded synthetic purchase corpora.
//!
//! The generated taxonomy is a complete tree with the given branching per
//! level (top-down). Each user has a Dirichlet preference over top-level
//! categories and a lazily drawn favourite child under every node they visit;
//! a purchase descends the tree taking the favourite with probability
//! `focus` and a popularity-weighted child otherwise. Popularity within each
//! node follows a Zipf law over a random permutation of its children, which
//! makes item popularity heavy-tailed.
//!
//! After the first basket, with probability `copurchase_strength` a basket is
//! drawn entirely from the "accessory" category of the previous basket: a
//! fixed random sibling of the lowest-level category of its first drawn item.
//! A `cold_start_fraction` of the leaves may only appear in a user's last
//! transaction (and only for users with at least two), so they are absent
//! from training prefixes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Geometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::transactions::{Basket, TransactionLog};
use crate::seed::derive_seed;
use crate::taxonomy::{NodeId, SourceRecord, Taxonomy};

pub const TAXONOMY_FILE: &str = "taxonomy.tsv";
pub const TRANSACTIONS_FILE: &str = "transactions.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid --{flag}: {msg}")]
    Invalid { flag: &'static str, msg: String },
}

fn invalid(flag: &'static str, msg: impl Into<String>) -> SynthError {
    SynthError::Invalid { flag, msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub users: usize,
    /// Children per node, from the root's children down to the leaves.
    pub branching: Vec<usize>,
    /// Mean of the geometric transactions-per-user distribution (>= 1).
    pub mean_transactions: f64,
    /// Relative weights of basket sizes 1, 2, 3, ...
    pub basket_size_weights: Vec<f64>,
    /// Dirichlet concentration of user preferences over top-level categories.
    pub preference_concentration: f64,
    /// Probability of descending into the user's favourite child.
    pub focus: f64,
    /// Zipf exponent of child popularity within a node.
    pub popularity_exponent: f64,
    pub copurchase_strength: f64,
    pub cold_start_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            users: 10_000,
            branching: vec![23, 11, 6, 7],
            mean_transactions: 4.0,
            basket_size_weights: vec![0.6, 0.3, 0.1],
            preference_concentration: 0.1,
            focus: 0.7,
            popularity_exponent: 1.0,
            copurchase_strength: 0.4,
            cold_start_fraction: 0.05,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.users == 0 {
            return Err(invalid("users", "need at least one user"));
        }
        if self.branching.is_empty() || self.branching.iter().any(|&b| b < 2) {
            return Err(invalid("branching", "every level needs at least 2 children per node"));
        }
        let nodes = self.branching.iter().try_fold((1usize, 1usize), |(total, width), &b| {
            let w = width.checked_mul(b)?;
            Some((total.checked_add(w)?, w))
        });
        if nodes.is_none_or(|(total, _)| total > 50_000_000) {
            return Err(invalid("branching", "taxonomy too large"));
        }
        if !(self.mean_transactions >= 1.0 && self.mean_transactions.is_finite()) {
            return Err(invalid("mean-transactions", "must be >= 1"));
        }
        if self.basket_size_weights.is_empty()
            || self.basket_size_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
            || self.basket_size_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(invalid("basket-sizes", "weights must be non-negative with a positive sum"));
        }
        if !(self.preference_concentration > 0.0 && self.preference_concentration.is_finite()) {
            return Err(invalid("concentration", "must be > 0"));
        }
        let unit = |flag, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(flag, format!("{v} is outside [0, 1]")))
            }
        };
        unit("focus", self.focus)?;
        unit("beta", self.copurchase_strength)?;
        unit("cold-start-fraction", self.cold_start_fraction)?;
        if !(self.popularity_exponent >= 0.0 && self.popularity_exponent.is_finite()) {
            return Err(invalid("popularity-exponent", "must be >= 0"));
        }
        Ok(())
    }
}

/// Diagnostic record of one user's latent tastes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user: usize,
    pub top_preferences: Vec<f64>,
    /// `(node, favourite child)` for every node the user descended through.
    pub favourites: Vec<(NodeId, NodeId)>,
    /// Lowest-level category that anchored each basket.
    pub anchors: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub spec: SynthSpec,
    pub taxonomy: Taxonomy,
    pub log: TransactionLog,
    /// Lowest-level category -> its accessory sibling.
    pub accessory: BTreeMap<NodeId, NodeId>,
    pub cold_items: BTreeSet<NodeId>,
    pub users: Vec<UserTruth>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TruthLine<'a> {
    Accessory { map: Vec<(NodeId, NodeId)> },
    ColdItems { items: Vec<NodeId> },
    User(&'a UserTruth),
}

impl SyntheticCorpus {
    pub fn ground_truth_jsonl(&self) -> String {
        let mut out = String::new();
        let mut line = |l: &TruthLine<'_>| {
            let _ = writeln!(out, "{}", serde_json::to_string(l).expect("serializable"));
        };
        line(&TruthLine::Accessory { map: self.accessory.iter().map(|(a, b)| (*a, *b)).collect() });
        line(&TruthLine::ColdItems { items: self.cold_items.iter().copied().collect() });
        for u in &self.users {
            line(&TruthLine::User(u));
        }
        out
    }

    /// Writes the taxonomy, transactions and ground-truth files into `dir`,
    /// creating it if needed.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.taxonomy.save(dir.join(TAXONOMY_FILE))?;
        self.log.save(dir.join(TRANSACTIONS_FILE), &self.taxonomy)?;
        std::fs::write(dir.join(GROUND_TRUTH_FILE), self.ground_truth_jsonl())
    }
}

fn build_taxonomy(branching: &[usize]) -> Taxonomy {
    let mut records = vec![SourceRecord { id: 0, parent: None, label: "root".into() }];
    let mut frontier = vec![0u64];
    let mut next = 1u64;
    for (depth, &b) in branching.iter().enumerate() {
        let kind = if depth + 1 == branching.len() { "item" } else { "cat" };
        let mut below = Vec::with_capacity(frontier.len() * b);
        for &p in &frontier {
            for _ in 0..b {
                records.push(SourceRecord { id: next, parent: Some(p), label: format!("{kind}{next}") });
                below.push(next);
                next += 1;
            }
        }
        frontier = below;
    }
    Taxonomy::from_records(records).expect("generated tree is well formed")
}

/// Zipf weights over a random permutation of each node's children.
fn popularity(tax: &Taxonomy, exponent: f64, rng: &mut ChaCha8Rng) -> Vec<Option<WeightedIndex<f64>>> {
    (0..tax.node_count())
        .map(|n| {
            let k = tax.children(n).len();
            if k == 0 {
                return None;
            }
            let mut ranks: Vec<usize> = (1..=k).collect();
            ranks.shuffle(rng);
            let w: Vec<f64> = ranks.iter().map(|&r| (r as f64).powf(-exponent)).collect();
            Some(WeightedIndex::new(w).expect("positive weights"))
        })
        .collect()
}

struct World<'a> {
    spec: &'a SynthSpec,
    tax: &'a Taxonomy,
    popularity: Vec<Option<WeightedIndex<f64>>>,
    cold: Vec<bool>,
    /// Non-cold children of each lowest-level category.
    warm_children: Vec<Vec<NodeId>>,
}

struct UserState {
    favourites: HashMap<NodeId, NodeId>,
}

impl World<'_> {
    fn popular_child(&self, node: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
        let dist = self.popularity[node].as_ref().expect("internal node");
        self.tax.children(node)[dist.sample(rng)]
    }

    fn descend(&self, mut node: NodeId, user: &mut UserState, allow_cold: bool, rng: &mut ChaCha8Rng) -> NodeId {
        while !self.tax.is_leaf(node) {
            let fav = match user.favourites.get(&node) {
                Some(&f) => f,
                None => {
                    let f = self.popular_child(node, rng);
                    user.favourites.insert(node, f);
                    f
                }
            };
            let parent = node;
            node = if rng.random::<f64>() < self.spec.focus { fav } else { self.popular_child(node, rng) };
            if self.tax.is_leaf(node) && self.cold[node] && !allow_cold {
                let warm = &self.warm_children[parent];
                if !warm.is_empty() {
                    node = warm[rng.random_range(0..warm.len())];
                }
            }
        }
        node
    }
}

/// Generates a corpus; identical specs give identical corpora.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticCorpus, SynthError> {
    spec.validate()?;
    let tax = build_taxonomy(&spec.branching);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth/structure"));
    let popularity = popularity(&tax, spec.popularity_exponent, &mut rng);

    let mut accessory = BTreeMap::new();
    for &c in tax.level_nodes(1) {
        let parent = tax.parent(c).expect("level-1 node has a parent");
        let siblings: Vec<NodeId> = tax.children(parent).iter().copied().filter(|&s| s != c).collect();
        accessory.insert(c, siblings[rng.random_range(0..siblings.len())]);
    }

    let leaves = tax.leaves();
    let cold_count = (spec.cold_start_fraction * leaves.len() as f64).round() as usize;
    let cold_items: BTreeSet<NodeId> = leaves.choose_multiple(&mut rng, cold_count).copied().collect();
    let mut cold = vec![false; tax.node_count()];
    for &c in &cold_items {
        cold[c] = true;
    }
    let warm_children = (0..tax.node_count())
        .map(|n| tax.children(n).iter().copied().filter(|&c| tax.is_leaf(c) && !cold[c]).collect())
        .collect();
    let world = World { spec, tax: &tax, popularity, cold, warm_children };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth/users"));
    let tx_count = Geometric::new(1.0 / spec.mean_transactions).expect("p in (0, 1]");
    let basket_size = WeightedIndex::new(&spec.basket_size_weights).expect("validated weights");
    let pref = Gamma::new(spec.preference_concentration, 1.0).expect("positive shape");
    let tops = tax.level_nodes(tax.depth() - 1);

    let mut users = Vec::with_capacity(spec.users);
    let mut truths = Vec::with_capacity(spec.users);
    for u in 0..spec.users {
        let mut theta: Vec<f64> = (0..tops.len()).map(|_| pref.sample(&mut rng)).collect();
        let total: f64 = theta.iter().sum();
        if total > 0.0 && total.is_finite() {
            theta.iter_mut().for_each(|t| *t /= total);
        } else {
            theta = vec![0.0; tops.len()];
            theta[rng.random_range(0..tops.len())] = 1.0;
        }
        let top_dist = WeightedIndex::new(&theta).expect("normalized preferences");
        let n = 1 + tx_count.sample(&mut rng) as usize;
        let mut state = UserState { favourites: HashMap::new() };
        let mut baskets = Vec::with_capacity(n);
        let mut anchors: Vec<NodeId> = Vec::with_capacity(n);
        for t in 0..n {
            let allow_cold = n >= 2 && t + 1 == n;
            let size = 1 + basket_size.sample(&mut rng);
            let from_accessory = t > 0 && rng.random::<f64>() < spec.copurchase_strength;
            let mut items = Vec::with_capacity(size);
            let anchor = if from_accessory {
                let cat = accessory[anchors.last().expect("previous basket")];
                for _ in 0..size {
                    items.push(world.descend(cat, &mut state, allow_cold, &mut rng));
                }
                cat
            } else {
                for _ in 0..size {
                    let top = tops[top_dist.sample(&mut rng)];
                    items.push(world.descend(top, &mut state, allow_cold, &mut rng));
                }
                tax.parent(items[0]).expect("leaf has a parent")
            };
            anchors.push(anchor);
            baskets.push(Basket::new(items).expect("at least one item"));
        }
        let mut favourites: Vec<(NodeId, NodeId)> = state.favourites.into_iter().collect();
        favourites.sort_unstable();
        truths.push(UserTruth { user: u, top_preferences: theta, favourites, anchors });
        users.push(baskets);
    }
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        log: TransactionLog::from_users(users),
        taxonomy: tax,
        accessory,
        cold_items,
        users: truths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec { users: 2_000, branching: vec![5, 4, 3, 6], seed, ..SynthSpec::default() }
    }

    #[test]
    fn taxonomy_shape_and_ids() {
        let c = generate_synthetic(&small(1)).unwrap();
        let t = &c.taxonomy;
        assert_eq!(t.depth(), 4);
        assert_eq!(t.level_nodes(3).len(), 5);
        assert_eq!(t.leaves().len(), 5 * 4 * 3 * 6);
        assert!(t.nodes().iter().all(|n| n.external_id == Some(n.id as u64)));
        let reparsed = Taxonomy::parse(t.to_tsv().as_bytes()).unwrap();
        assert_eq!(reparsed.to_tsv(), t.to_tsv());
        for b in c.log.users().iter().flatten() {
            assert!(b.items().iter().all(|&i| t.is_leaf(i)));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_synthetic(&small(3)).unwrap();
        let b = generate_synthetic(&small(3)).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.ground_truth_jsonl(), b.ground_truth_jsonl());
        let c = generate_synthetic(&small(4)).unwrap();
        assert_ne!(a.log, c.log);
    }

    #[test]
    fn mean_transactions_tracks_spec() {
        let c = generate_synthetic(&SynthSpec { users: 20_000, ..small(5) }).unwrap();
        let mean = c.log.transaction_count() as f64 / c.log.user_count() as f64;
        assert!((mean - 4.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn full_copurchase_follows_accessories() {
        let c = generate_synthetic(&SynthSpec { copurchase_strength: 1.0, ..small(6) }).unwrap();
        let t = &c.taxonomy;
        for (truth, baskets) in c.users.iter().zip(c.log.users()) {
            for i in 1..baskets.len() {
                let cat = c.accessory[&truth.anchors[i - 1]];
                assert_eq!(truth.anchors[i], cat);
                assert!(baskets[i].items().iter().all(|&x| t.parent(x) == Some(cat)));
            }
        }
    }

    /// Rate at which baskets `lag` apart share a lowest-level category.
    fn repeat_rate(c: &SyntheticCorpus, lag: usize) -> f64 {
        let (mut hits, mut total) = (0usize, 0usize);
        for truth in &c.users {
            for w in truth.anchors.windows(lag + 1) {
                total += 1;
                hits += usize::from(c.accessory[&w[0]] == w[lag]);
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn no_copurchase_means_no_lag_one_signal() {
        let spec = SynthSpec { users: 20_000, copurchase_strength: 0.0, ..small(7) };
        let c = generate_synthetic(&spec).unwrap();
        let (l1, l2) = (repeat_rate(&c, 1), repeat_rate(&c, 2));
        assert!((l1 - l2).abs() < 0.01, "lag1 {l1} lag2 {l2}");
        let strong = generate_synthetic(&SynthSpec { copurchase_strength: 0.4, ..spec }).unwrap();
        assert!(repeat_rate(&strong, 1) > l1 + 0.3);
    }

    #[test]
    fn cold_items_only_in_last_transactions() {
        let c = generate_synthetic(&small(8)).unwrap();
        assert_eq!(c.cold_items.len(), (0.05 * 360.0f64).round() as usize);
        let mut seen_cold = false;
        for baskets in c.log.users() {
            for (t, b) in baskets.iter().enumerate() {
                let has = b.items().iter().any(|i| c.cold_items.contains(i));
                seen_cold |= has;
                assert!(!has || (t + 1 == baskets.len() && t >= 1));
            }
        }
        assert!(seen_cold);
    }

    #[test]
    fn popularity_is_heavy_tailed() {
        let c = generate_synthetic(&small(9)).unwrap();
        let mut counts = vec![0usize; c.taxonomy.node_count()];
        for tr in c.log.triples() {
            counts[tr.item as usize] += 1;
        }
        let mut v: Vec<usize> = c.taxonomy.leaves().iter().map(|&l| counts[l]).collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        let top: usize = v[..v.len() / 10].iter().sum();
        let all: usize = v.iter().sum();
        assert!(top as f64 > 0.3 * all as f64, "top decile share {}", top as f64 / all as f64);
    }

    #[test]
    fn invalid_specs_name_the_flag() {
        let e = generate_synthetic(&SynthSpec { branching: vec![3, 1], ..small(1) }).unwrap_err();
        assert!(e.to_string().contains("--branching"));
        assert!(generate_synthetic(&SynthSpec { copurchase_strength: 1.5, ..small(1) }).is_err());
        assert!(generate_synthetic(&SynthSpec { users: 0, ..small(1) }).is_err());
    }

    #[test]
    fn files_round_trip() {
        let c = generate_synthetic(&SynthSpec { users: 50, ..small(2) }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested/corpus");
        c.write_to(&out).unwrap();
        let tax = Taxonomy::load(out.join(TAXONOMY_FILE)).unwrap();
        let loaded = crate::io::transactions::load_transactions(out.join(TRANSACTIONS_FILE), &tax).unwrap();
        assert_eq!(loaded.log, c.log);
        assert_eq!(loaded.unknown_items, 0);
        let truth = std::fs::read_to_string(out.join(GROUND_TRUTH_FILE)).unwrap();
        assert_eq!(truth.lines().count(), 52);
    }
}
