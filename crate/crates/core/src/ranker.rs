//! Top-k recommendation: exhaustive scoring of one taxonomy level, and
//! cascaded inference that descends the taxonomy keeping only the best
//! nodes of each level.
//!
//! Cascade fractions are indexed top-down: `fractions[0]` applies to the
//! highest internal level (`depth - 1`), `fractions[1]` to the level below,
//! and so on. Levels without a fraction keep every node.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use thiserror::Error;

use crate::factors::ScoringModel;
use crate::io::transactions::{Basket, UserId};
use crate::taxonomy::{NodeId, Taxonomy};

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("cascade fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("{given} cascade fractions for a taxonomy with {levels} non-root levels")]
    TooManyFractions { given: usize, levels: usize },
    #[error("level {level} outside [0, {max}]")]
    BadLevel { level: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    fractions: Vec<f64>,
}

impl CascadeConfig {
    pub fn new(fractions: Vec<f64>) -> Result<Self, RankError> {
        if let Some(&f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(RankError::BadFraction(f));
        }
        Ok(CascadeConfig { fractions })
    }

    /// The same fraction at every internal level of `taxonomy`.
    pub fn uniform(fraction: f64, taxonomy: &Taxonomy) -> Result<Self, RankError> {
        Self::new(vec![fraction; taxonomy.depth().saturating_sub(1)])
    }

    /// Upper internal levels kept whole, `fraction` at the lowest internal
    /// level.
    pub fn lowest_level(fraction: f64, taxonomy: &Taxonomy) -> Result<Self, RankError> {
        let n = taxonomy.depth().saturating_sub(1);
        let mut fractions = vec![1.0; n];
        if let Some(last) = fractions.last_mut() {
            *last = fraction;
        }
        Self::new(fractions)
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn fraction_for(&self, taxonomy: &Taxonomy, level: usize) -> f64 {
        let top = taxonomy.depth().saturating_sub(1);
        top.checked_sub(level).and_then(|i| self.fractions.get(i)).copied().unwrap_or(1.0)
    }

    /// `ceil(fraction * size(level))`, clamped to `[1, frontier]`.
    pub fn keep_count(&self, taxonomy: &Taxonomy, level: usize, frontier: usize) -> usize {
        let size = taxonomy.level_nodes(level).len();
        let n = (self.fraction_for(taxonomy, level) * size as f64).ceil() as usize;
        n.clamp(1, frontier.max(1))
    }

    fn check(&self, taxonomy: &Taxonomy) -> Result<(), RankError> {
        if self.fractions.len() > taxonomy.depth() {
            return Err(RankError::TooManyFractions { given: self.fractions.len(), levels: taxonomy.depth() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RankMode {
    Exhaustive,
    Cascaded(CascadeConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub level: usize,
    /// Descending score, ties by ascending node id.
    pub entries: Vec<(NodeId, f64)>,
    /// For cascaded results, the admitting ancestors of each entry from the
    /// top level down; empty in exhaustive mode.
    pub cascade_path: Vec<Vec<NodeId>>,
    /// Number of affinity evaluations performed.
    pub evaluations: usize,
}

impl RankedResult {
    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.iter().map(|(n, _)| *n)
    }
}

pub(crate) fn by_score(a: &(NodeId, f64), b: &(NodeId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn score_all(model: &ScoringModel<'_>, query: &[f64], nodes: &[NodeId]) -> Vec<(NodeId, f64)> {
    let mut scored: Vec<(NodeId, f64)> = nodes.iter().map(|&n| (n, model.score(query, n))).collect();
    scored.sort_unstable_by(by_score);
    scored
}

fn check_level(taxonomy: &Taxonomy, level: usize) -> Result<(), RankError> {
    if level > taxonomy.depth() {
        return Err(RankError::BadLevel { level, max: taxonomy.depth() });
    }
    Ok(())
}

/// Scores every node at `level` against a precomputed query vector.
pub fn rank_exhaustive_query(model: &ScoringModel<'_>, query: &[f64], level: usize) -> Result<RankedResult, RankError> {
    let tax = model.taxonomy();
    check_level(tax, level)?;
    let nodes = tax.level_nodes(level);
    Ok(RankedResult { level, entries: score_all(model, query, nodes), cascade_path: Vec::new(), evaluations: nodes.len() })
}

pub fn rank_exhaustive(
    model: &ScoringModel<'_>,
    user: UserId,
    history: &[&Basket],
    level: usize,
) -> Result<RankedResult, RankError> {
    rank_exhaustive_query(model, &model.query(user, history), level)
}

/// Top-down cascade ending at `target_level`. Every node of the target
/// level's frontier is returned, sorted; a fraction configured for the target
/// level itself truncates the result to its keep count.
pub fn rank_cascaded_query(
    model: &ScoringModel<'_>,
    query: &[f64],
    config: &CascadeConfig,
    target_level: usize,
    with_paths: bool,
) -> Result<RankedResult, RankError> {
    let tax = model.taxonomy();
    config.check(tax)?;
    let top = tax.depth().saturating_sub(1);
    if target_level > top {
        return Err(RankError::BadLevel { level: target_level, max: top });
    }
    let mut frontier: Vec<NodeId> = tax.level_nodes(top).to_vec();
    let mut evaluations = 0;
    let mut level = top;
    loop {
        let mut scored = score_all(model, query, &frontier);
        evaluations += scored.len();
        let keep = config.keep_count(tax, level, scored.len());
        if level == target_level {
            if config.fraction_for(tax, level) < 1.0 {
                scored.truncate(keep);
            }
            let cascade_path = if with_paths {
                scored
                    .iter()
                    .map(|(n, _)| {
                        let mut path: Vec<NodeId> =
                            tax.path_iter(*n).skip(1).take_while(|&a| tax.level(a) <= top).collect();
                        path.reverse();
                        path
                    })
                    .collect()
            } else {
                Vec::new()
            };
            return Ok(RankedResult { level, entries: scored, cascade_path, evaluations });
        }
        scored.truncate(keep);
        let mut next: Vec<NodeId> = scored.iter().flat_map(|(n, _)| tax.children(*n).iter().copied()).collect();
        next.sort_unstable();
        frontier = next;
        level -= 1;
    }
}

pub fn rank_cascaded(
    model: &ScoringModel<'_>,
    user: UserId,
    history: &[&Basket],
    config: &CascadeConfig,
    target_level: usize,
) -> Result<RankedResult, RankError> {
    rank_cascaded_query(model, &model.query(user, history), config, target_level, true)
}

/// Best `k` leaves for `user`, optionally skipping `exclude` (e.g. items the
/// user already bought). Fewer than `k` when the cascade admits fewer.
pub fn recommend_topk(
    model: &ScoringModel<'_>,
    user: UserId,
    history: &[&Basket],
    k: usize,
    mode: &RankMode,
    exclude: Option<&BTreeSet<NodeId>>,
) -> Result<Vec<(NodeId, f64)>, RankError> {
    recommend_at_level(model, user, history, k, mode, exclude, 0)
}

/// Like [`recommend_topk`] at an arbitrary taxonomy level.
pub fn recommend_at_level(
    model: &ScoringModel<'_>,
    user: UserId,
    history: &[&Basket],
    k: usize,
    mode: &RankMode,
    exclude: Option<&BTreeSet<NodeId>>,
    level: usize,
) -> Result<Vec<(NodeId, f64)>, RankError> {
    let ranked = match mode {
        RankMode::Exhaustive => rank_exhaustive(model, user, history, level)?,
        RankMode::Cascaded(cfg) => rank_cascaded_query(model, &model.query(user, history), cfg, level, false)?,
    };
    Ok(ranked
        .entries
        .into_iter()
        .filter(|(n, _)| exclude.is_none_or(|ex| !ex.contains(n)))
        .take(k)
        .collect())
}
