//! Held-out evaluation: AUC and mean rank per user, category-level AUC, and
//! the cold-start cohort, computed in parallel over users.

pub mod metrics;
pub mod split;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::factors::{FactorStore, ScoringModel};
use crate::io::transactions::TransactionLog;
use crate::ranker::{rank_cascaded_query, RankError, RankMode};
use crate::taxonomy::{NodeId, Taxonomy};
use crate::trainer::ModelConfig;

pub use metrics::{auc, mean_rank};
pub use split::{filter_repeats, hold_out_last, split, HeldOut, Split, SplitError, SplitSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub mode: RankMode,
    pub threads: usize,
    /// Leave the user's training purchases out of the ranked leaf universe.
    pub exclude_train_items: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { mode: RankMode::Exhaustive, threads: 1, exclude_train_items: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean over evaluated users; NaN when no user could be evaluated.
    pub mean_auc: f64,
    pub mean_meanrank: f64,
    /// Mean category AUC for levels `1..depth`, index 0 being level 1.
    pub level_auc: Vec<Option<f64>>,
    /// Mean over users of the mean rank of their test leaves that never
    /// occur in the training log.
    pub cold_start_mean_rank: Option<f64>,
    pub cold_start_users: usize,
    pub users_evaluated: usize,
    /// Leaf-level affinity evaluations actually performed.
    pub evaluations: usize,
    /// Leaf-level evaluations an exhaustive ranking would perform.
    pub exhaustive_evaluations: usize,
}

struct UserResult {
    auc: Option<f64>,
    mean_rank: Option<f64>,
    level_auc: Vec<Option<f64>>,
    cold_rank: Option<f64>,
    evaluations: usize,
    exhaustive: usize,
}

/// 1-based ranks of `positives` among `nodes` minus `excluded`, ordered by
/// descending score then ascending id.
fn exhaustive_ranks(
    model: &ScoringModel<'_>,
    query: &[f64],
    nodes: &[NodeId],
    positives: &[NodeId],
    excluded: &BTreeSet<NodeId>,
) -> (Vec<usize>, usize) {
    let pos_scores: Vec<f64> = positives.iter().map(|&p| model.score(query, p)).collect();
    let mut ranks = vec![1usize; positives.len()];
    let mut universe = 0;
    for &n in nodes {
        if excluded.contains(&n) {
            continue;
        }
        universe += 1;
        let s = model.score(query, n);
        for ((&p, &sp), r) in positives.iter().zip(&pos_scores).zip(ranks.iter_mut()) {
            if s > sp || (s == sp && n < p) {
                *r += 1;
            }
        }
    }
    (ranks, universe)
}

/// Ranks from a cascaded ranking: admitted nodes in cascade order, then the
/// unreached ones by ascending id.
fn cascaded_ranks(
    entries: &[(NodeId, f64)],
    nodes: &[NodeId],
    positives: &[NodeId],
    excluded: &BTreeSet<NodeId>,
) -> (Vec<usize>, usize) {
    let reached: Vec<NodeId> = entries.iter().map(|e| e.0).filter(|n| !excluded.contains(n)).collect();
    let reached_set: BTreeSet<NodeId> = reached.iter().copied().collect();
    let universe = nodes.iter().filter(|n| !excluded.contains(n)).count();
    let ranks = positives
        .iter()
        .map(|p| match reached.iter().position(|n| n == p) {
            Some(i) => i + 1,
            None => {
                let before = nodes
                    .iter()
                    .take_while(|&&n| n < *p)
                    .filter(|n| !excluded.contains(n) && !reached_set.contains(n))
                    .count();
                reached.len() + before + 1
            }
        })
        .collect();
    (ranks, universe)
}

fn level_ranks(
    model: &ScoringModel<'_>,
    query: &[f64],
    level: usize,
    positives: &[NodeId],
    excluded: &BTreeSet<NodeId>,
    mode: &RankMode,
) -> Result<(Vec<usize>, usize, usize), RankError> {
    let nodes = model.taxonomy().level_nodes(level);
    match mode {
        RankMode::Exhaustive => {
            let (r, u) = exhaustive_ranks(model, query, nodes, positives, excluded);
            Ok((r, u, nodes.len()))
        }
        RankMode::Cascaded(cfg) => {
            let ranked = rank_cascaded_query(model, query, cfg, level, false)?;
            let (r, u) = cascaded_ranks(&ranked.entries, nodes, positives, excluded);
            Ok((r, u, ranked.evaluations))
        }
    }
}

fn evaluate_user(
    model: &ScoringModel<'_>,
    train: &TransactionLog,
    held: &HeldOut,
    cold: &BTreeSet<NodeId>,
    options: &EvalOptions,
) -> Result<UserResult, RankError> {
    let tax = model.taxonomy();
    let history = train.recent(held.user, model.decay().order());
    let query = model.query(held.user, &history);
    let positives: Vec<NodeId> = held.items().into_iter().collect();
    let excluded: BTreeSet<NodeId> = if options.exclude_train_items {
        train.purchased(held.user).into_iter().filter(|i| positives.binary_search(i).is_err()).collect()
    } else {
        BTreeSet::new()
    };
    let (ranks, universe, evaluations) = level_ranks(model, &query, 0, &positives, &excluded, &options.mode)?;
    let cold_ranks: Vec<usize> =
        positives.iter().zip(&ranks).filter(|(p, _)| cold.contains(p)).map(|(_, &r)| r).collect();
    let none = BTreeSet::new();
    let level_auc = (1..tax.depth())
        .map(|level| {
            let cats: BTreeSet<NodeId> = positives.iter().filter_map(|&p| tax.ancestor_at_level(p, level)).collect();
            let cats: Vec<NodeId> = cats.into_iter().collect();
            let (r, u, _) = level_ranks(model, &query, level, &cats, &none, &options.mode)?;
            Ok(auc(&r, u))
        })
        .collect::<Result<Vec<_>, RankError>>()?;
    Ok(UserResult {
        auc: auc(&ranks, universe),
        mean_rank: mean_rank(&ranks),
        level_auc,
        cold_rank: mean_rank(&cold_ranks),
        evaluations,
        exhaustive: tax.leaves().len(),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (if n == 0 { f64::NAN } else { sum / n as f64 }, n)
}

/// Scores every held-out user against the model. `train` supplies each
/// user's Markov history and the items to exclude. Aggregation follows the
/// order of `held_out`, so the report does not depend on `threads`.
pub fn evaluate(
    model: &ScoringModel<'_>,
    train: &TransactionLog,
    held_out: &[HeldOut],
    options: &EvalOptions,
) -> Result<EvalReport, RankError> {
    let tax = model.taxonomy();
    let seen = train.purchased_anywhere();
    let cold: BTreeSet<NodeId> = tax.leaves().iter().copied().filter(|l| !seen.contains(l)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads.max(1))
        .build()
        .expect("evaluation thread pool");
    let results: Vec<UserResult> = pool.install(|| {
        held_out
            .par_iter()
            .map(|h| evaluate_user(model, train, h, &cold, options))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let scored: Vec<&UserResult> = results.iter().filter(|r| r.auc.is_some()).collect();
    let (mean_auc, users_evaluated) = mean(scored.iter().filter_map(|r| r.auc));
    let (mean_meanrank, _) = mean(scored.iter().filter_map(|r| r.mean_rank));
    let level_auc = (0..tax.depth().saturating_sub(1))
        .map(|i| {
            let (m, n) = mean(results.iter().filter_map(|r| r.level_auc[i]));
            (n > 0).then_some(m)
        })
        .collect();
    let (cold_mean, cold_start_users) = mean(results.iter().filter_map(|r| r.cold_rank));
    Ok(EvalReport {
        mean_auc,
        mean_meanrank,
        level_auc,
        cold_start_mean_rank: (cold_start_users > 0).then_some(cold_mean),
        cold_start_users,
        users_evaluated,
        evaluations: results.iter().map(|r| r.evaluations).sum(),
        exhaustive_evaluations: results.iter().map(|r| r.exhaustive).sum(),
    })
}

/// Exhaustive, single-threaded mean AUC of `store` on `held_out`.
pub fn holdout_auc(
    store: &FactorStore,
    taxonomy: &Taxonomy,
    config: &ModelConfig,
    train: &TransactionLog,
    held_out: &[HeldOut],
) -> f64 {
    let view = taxonomy.restrict_levels(config.taxonomy_update_levels).expect("validated config");
    let model = ScoringModel::new(store, &view, config.decay());
    evaluate(&model, train, held_out, &EvalOptions::default()).expect("exhaustive ranking cannot fail").mean_auc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{DecayWeights, Matrix};
    use crate::io::transactions::Basket;
    use crate::ranker::CascadeConfig;

    /// 4 categories x 5 leaves.
    fn tree() -> Taxonomy {
        let mut tsv = String::from("0\t-1\tr\n");
        for c in 1..=4 {
            tsv.push_str(&format!("{c}\t0\tc\n"));
        }
        for leaf in 5..25 {
            tsv.push_str(&format!("{leaf}\t{}\tl\n", 1 + (leaf - 5) / 5));
        }
        Taxonomy::parse(tsv.as_bytes()).unwrap()
    }

    fn b(items: &[NodeId]) -> Basket {
        Basket::new(items.to_vec()).unwrap()
    }

    fn fixture(users: usize) -> (TransactionLog, Vec<HeldOut>) {
        let train = TransactionLog::from_users((0..users).map(|u| vec![b(&[5 + u % 20])]).collect());
        let held = (0..users).map(|u| HeldOut { user: u, baskets: vec![b(&[5 + (u * 7 + 3) % 20])] }).collect();
        (train, held)
    }

    #[test]
    fn random_store_is_near_chance() {
        let tax = tree();
        let (train, held) = fixture(400);
        let store = FactorStore::random(8, 400, tax.node_count(), 11);
        let model = ScoringModel::new(&store, &tax.full_view(), DecayWeights::new(1.0, 0));
        let r = evaluate(&model, &train, &held, &EvalOptions::default()).unwrap();
        assert!((0.45..=0.55).contains(&r.mean_auc), "{}", r.mean_auc);
        assert_eq!(r.users_evaluated, 400);
    }

    #[test]
    fn oracle_store_scores_perfectly() {
        let tax = tree();
        let (train, held) = fixture(20);
        // Every user likes exactly their test item.
        let store = {
            let mut s = FactorStore::zeros(20, 20, tax.node_count());
            for h in &held {
                let item = h.baskets[0].items()[0];
                s.row_mut(Matrix::User, h.user)[h.user] = 1.0;
                s.row_mut(Matrix::Item, item)[h.user] = 1.0;
            }
            s
        };
        let model = ScoringModel::new(&store, &tax.full_view(), DecayWeights::new(1.0, 0));
        let r = evaluate(&model, &train, &held, &EvalOptions::default()).unwrap();
        assert_eq!(r.mean_auc, 1.0);
        assert_eq!(r.mean_meanrank, 1.0);
    }

    #[test]
    fn thread_count_does_not_change_report() {
        let tax = tree();
        let (train, held) = fixture(60);
        let store = FactorStore::random(4, 60, tax.node_count(), 2);
        let model = ScoringModel::new(&store, &tax.full_view(), DecayWeights::new(1.0, 1));
        let one = evaluate(&model, &train, &held, &EvalOptions::default()).unwrap();
        let four = evaluate(&model, &train, &held, &EvalOptions { threads: 4, ..Default::default() }).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn full_cascade_matches_exhaustive() {
        let tax = tree();
        let (train, held) = fixture(40);
        let store = FactorStore::random(4, 40, tax.node_count(), 3);
        let model = ScoringModel::new(&store, &tax.full_view(), DecayWeights::new(1.0, 0));
        let ex = evaluate(&model, &train, &held, &EvalOptions::default()).unwrap();
        let cfg = CascadeConfig::uniform(1.0, &tax).unwrap();
        let opts = EvalOptions { mode: RankMode::Cascaded(cfg), ..Default::default() };
        let ca = evaluate(&model, &train, &held, &opts).unwrap();
        assert_eq!(ex.mean_auc, ca.mean_auc);
        assert_eq!(ex.mean_meanrank, ca.mean_meanrank);
        assert_eq!(ex.level_auc, ca.level_auc);
        assert_eq!(ca.evaluations, 40 * (4 + 20));
    }

    #[test]
    fn ranks_agree_with_sorted_ranking() {
        let tax = tree();
        let store = FactorStore::random(3, 1, tax.node_count(), 8);
        let model = ScoringModel::new(&store, &tax.full_view(), DecayWeights::new(1.0, 0));
        let q = model.query(0, &[]);
        let excluded: BTreeSet<NodeId> = [6, 9].into();
        let positives = vec![7, 12, 20];
        let (ranks, universe) = exhaustive_ranks(&model, &q, tax.leaves(), &positives, &excluded);
        let mut order: Vec<(NodeId, f64)> =
            tax.leaves().iter().filter(|n| !excluded.contains(n)).map(|&n| (n, model.score(&q, n))).collect();
        order.sort_by(crate::ranker::by_score);
        assert_eq!(universe, 18);
        for (p, r) in positives.iter().zip(&ranks) {
            assert_eq!(order.iter().position(|e| e.0 == *p).unwrap() + 1, *r);
        }
        // A truncated cascade keeps admitted ranks and appends the rest by id.
        let (c, u) = cascaded_ranks(&order[..5], tax.leaves(), &positives, &excluded);
        assert_eq!(u, 18);
        for (p, r) in positives.iter().zip(&c) {
            match order[..5].iter().position(|e| e.0 == *p) {
                Some(i) => assert_eq!(*r, i + 1),
                None => assert!(*r > 5),
            }
        }
    }

    #[test]
    fn cold_start_cohort() {
        let tax = tree();
        let train = TransactionLog::from_users(vec![vec![b(&[5])], vec![b(&[6])]]);
        let held = vec![
            HeldOut { user: 0, baskets: vec![b(&[6, 24])] },
            HeldOut { user: 1, baskets: vec![b(&[5])] },
        ];
        let store = FactorStore::zeros(2, 2, tax.node_count());
        let model = ScoringModel::new(&store, &tax.full_view(), DecayWeights::new(1.0, 0));
        let r = evaluate(&model, &train, &held, &EvalOptions::default()).unwrap();
        assert_eq!(r.cold_start_users, 1);
        // All scores tie: leaf 24 is last among 19 non-excluded leaves.
        assert_eq!(r.cold_start_mean_rank, Some(19.0));
    }
}
