//! Training tuple generation.
//!
//! Random tuples pit a purchased leaf against a uniformly drawn leaf outside
//! the basket. Sibling groups walk up the purchased leaf's path and pit each
//! ancestor against one of its siblings, one tuple per level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::io::transactions::{TransactionLog, Triple, UserId};
use crate::taxonomy::{LevelView, NodeId};

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("transaction log has no purchases")]
    EmptyLog,
    #[error("user {user} transaction {t} contains every leaf; no negative exists")]
    NoNegative { user: UserId, t: usize },
    #[error("sibling mix {0} outside [0, 1]")]
    BadMix(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TupleMode {
    Random,
    Sibling,
}

/// One term of the pairwise objective: user `user` at transaction `t`
/// prefers `pos` over `neg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainTuple {
    pub user: UserId,
    pub t: usize,
    pub pos: NodeId,
    pub neg: NodeId,
    pub mode: TupleMode,
    /// Level at which `pos` and `neg` are siblings; 0 for random tuples.
    pub level: usize,
}

/// Draws `(u, t, i)` uniformly over positive triples and `j` uniformly over
/// leaves outside `B^u_t`.
pub fn sample_random_tuple<R: Rng + ?Sized>(log: &TransactionLog, leaves: &[NodeId], rng: &mut R) -> TrainTuple {
    let triple = log.triples()[rng.random_range(0..log.triple_count())];
    random_tuple_for(log, leaves, triple, rng)
}

fn random_tuple_for<R: Rng + ?Sized>(log: &TransactionLog, leaves: &[NodeId], triple: Triple, rng: &mut R) -> TrainTuple {
    let (user, t) = (triple.user as usize, triple.t as usize);
    let basket = &log.transactions(user)[t];
    let neg = loop {
        let j = leaves[rng.random_range(0..leaves.len())];
        if !basket.contains(j) {
            break j;
        }
    };
    TrainTuple { user, t, pos: triple.item as NodeId, neg, mode: TupleMode::Random, level: 0 }
}

/// Appends one sibling tuple per level of `purchased`'s restricted path that
/// has a sibling. Returns the number appended (0 for chain taxonomies).
pub fn sample_sibling_tuples<R: Rng + ?Sized>(
    view: &LevelView<'_>,
    user: UserId,
    t: usize,
    purchased: NodeId,
    rng: &mut R,
    out: &mut Vec<TrainTuple>,
) -> usize {
    let tax = view.taxonomy();
    let before = out.len();
    for node in view.path(purchased) {
        if let Ok(sib) = tax.sample_sibling(node, rng) {
            out.push(TrainTuple { user, t, pos: node, neg: sib, mode: TupleMode::Sibling, level: tax.level(node) });
        }
    }
    out.len() - before
}

/// Deterministic tuple stream mixing random tuples and sibling groups.
#[derive(Debug, Clone)]
pub struct TupleSampler<'a> {
    log: &'a TransactionLog,
    view: LevelView<'a>,
    leaves: &'a [NodeId],
    sibling_mix: f64,
    rng: ChaCha8Rng,
    pending: Vec<TrainTuple>,
    cursor: usize,
}

impl<'a> TupleSampler<'a> {
    pub fn new(log: &'a TransactionLog, view: LevelView<'a>, sibling_mix: f64, seed: u64) -> Result<Self, SamplerError> {
        if !(0.0..=1.0).contains(&sibling_mix) {
            return Err(SamplerError::BadMix(sibling_mix));
        }
        if log.is_empty() {
            return Err(SamplerError::EmptyLog);
        }
        let leaves = view.taxonomy().leaves();
        for (user, txs) in log.users().iter().enumerate() {
            if let Some(t) = txs.iter().position(|b| b.len() >= leaves.len()) {
                return Err(SamplerError::NoNegative { user, t });
            }
        }
        Ok(TupleSampler {
            log,
            view,
            leaves,
            sibling_mix,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: Vec::new(),
            cursor: 0,
        })
    }

    /// Replaces the buffer with the next draw: a sibling group with
    /// probability `sibling_mix`, otherwise one random tuple. A purchase with
    /// no siblings on its path falls back to a random tuple.
    pub fn next_group(&mut self) -> &[TrainTuple] {
        self.pending.clear();
        self.cursor = 0;
        let sibling = self.rng.random::<f64>() < self.sibling_mix;
        let triple = self.log.triples()[self.rng.random_range(0..self.log.triple_count())];
        if sibling {
            let (user, t) = (triple.user as usize, triple.t as usize);
            sample_sibling_tuples(&self.view, user, t, triple.item as NodeId, &mut self.rng, &mut self.pending);
        }
        if self.pending.is_empty() {
            let tuple = random_tuple_for(self.log, self.leaves, triple, &mut self.rng);
            self.pending.push(tuple);
        }
        &self.pending
    }
}

impl Iterator for TupleSampler<'_> {
    type Item = TrainTuple;

    fn next(&mut self) -> Option<TrainTuple> {
        if self.cursor >= self.pending.len() {
            self.next_group();
        }
        let t = self.pending[self.cursor];
        self.cursor += 1;
        Some(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::transactions::Basket;
    use crate::taxonomy::Taxonomy;

    fn fig3() -> Taxonomy {
        // R(0) -> S(1), T(2); S -> M(3), N(4), O(5); T -> P(6);
        // M -> A(7), B(8), C(9), D(10); N -> E(11); O -> F(12); P -> G(13), H(14)
        let tsv = "0\t-1\tR\n1\t0\tS\n2\t0\tT\n3\t1\tM\n4\t1\tN\n5\t1\tO\n6\t2\tP\n\
                   7\t3\tA\n8\t3\tB\n9\t3\tC\n10\t3\tD\n11\t4\tE\n12\t5\tF\n13\t6\tG\n14\t6\tH\n";
        Taxonomy::parse(tsv.as_bytes()).unwrap()
    }

    fn basket(items: &[NodeId]) -> Basket {
        Basket::new(items.to_vec()).unwrap()
    }

    /// Validating wrapper: checks a tuple against its mode's invariant.
    fn check(tuple: &TrainTuple, log: &TransactionLog, tax: &Taxonomy) {
        let b = &log.transactions(tuple.user)[tuple.t];
        match tuple.mode {
            TupleMode::Random => {
                assert!(b.contains(tuple.pos) && !b.contains(tuple.neg));
                assert!(tax.is_leaf(tuple.pos) && tax.is_leaf(tuple.neg));
                assert_eq!(tuple.level, 0);
            }
            TupleMode::Sibling => {
                assert_ne!(tuple.pos, tuple.neg);
                assert_eq!(tax.parent(tuple.pos), tax.parent(tuple.neg));
                assert_eq!(tax.level(tuple.pos), tuple.level);
                assert!(b.items().iter().any(|&i| tax.path_iter(i).any(|a| a == tuple.pos)));
            }
        }
    }

    #[test]
    fn forced_random_tuple() {
        let tax = Taxonomy::parse("0\t-1\tr\n1\t0\ta\n2\t0\tb\n".as_bytes()).unwrap();
        let log = TransactionLog::from_users(vec![vec![basket(&[1])]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let t = sample_random_tuple(&log, tax.leaves(), &mut rng);
            assert_eq!((t.user, t.t, t.pos, t.neg), (0, 0, 1, 2));
        }
    }

    #[test]
    fn negatives_never_in_basket() {
        let tax = fig3();
        let log = TransactionLog::from_users(vec![
            vec![basket(&[7, 8, 9]), basket(&[13])],
            vec![basket(&[11, 12, 14, 10])],
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100_000 {
            check(&sample_random_tuple(&log, tax.leaves(), &mut rng), &log, &tax);
        }
    }

    #[test]
    fn user_frequency_follows_triple_counts() {
        let tax = fig3();
        // Triple counts 3:1.
        let log = TransactionLog::from_users(vec![vec![basket(&[7, 8]), basket(&[9])], vec![basket(&[11])]]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = 1_000_000;
        let first = (0..draws).filter(|_| sample_random_tuple(&log, tax.leaves(), &mut rng).user == 0).count();
        let freq = first as f64 / draws as f64;
        assert!((freq - 0.75).abs() < 0.01, "{freq}");
    }

    #[test]
    fn sibling_group_matches_figure() {
        let tax = fig3();
        let log = TransactionLog::from_users(vec![vec![basket(&[7])]]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut out = Vec::new();
        let n = sample_sibling_tuples(&tax.full_view(), 0, 0, 7, &mut rng, &mut out);
        assert_eq!(n, 3);
        assert_eq!(out.iter().map(|t| t.pos).collect::<Vec<_>>(), vec![7, 3, 1]);
        assert!([8, 9, 10].contains(&out[0].neg));
        assert!([4, 5].contains(&out[1].neg));
        assert_eq!(out[2].neg, 2);
        assert_eq!(out.iter().map(|t| t.level).collect::<Vec<_>>(), vec![0, 1, 2]);
        for t in &out {
            check(t, &log, &tax);
        }

        out.clear();
        assert!(sample_sibling_tuples(&tax.restrict_levels(1).unwrap(), 0, 0, 7, &mut rng, &mut out) <= 1);
        assert_eq!(out[0].level, 0);
    }

    #[test]
    fn chain_taxonomy_yields_no_sibling_tuples() {
        let tax = Taxonomy::parse("0\t-1\tr\n1\t0\tc\n2\t1\tleaf\n".as_bytes()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::new();
        assert_eq!(sample_sibling_tuples(&tax.full_view(), 0, 0, 2, &mut rng, &mut out), 0);
    }

    fn mixed_log() -> TransactionLog {
        TransactionLog::from_users(vec![
            vec![basket(&[7, 8]), basket(&[13]), basket(&[11])],
            vec![basket(&[12]), basket(&[9, 14])],
        ])
    }

    #[test]
    fn mix_extremes() {
        let tax = fig3();
        let log = mixed_log();
        let random: Vec<_> = TupleSampler::new(&log, tax.full_view(), 0.0, 1).unwrap().take(5000).collect();
        assert!(random.iter().all(|t| t.mode == TupleMode::Random));
        let sib: Vec<_> = TupleSampler::new(&log, tax.full_view(), 1.0, 1).unwrap().take(5000).collect();
        assert!(sib.iter().all(|t| t.mode == TupleMode::Sibling));
        for t in random.iter().chain(&sib) {
            check(t, &log, &tax);
        }
    }

    #[test]
    fn half_mix_draw_fraction() {
        let tax = fig3();
        let log = mixed_log();
        let mut s = TupleSampler::new(&log, tax.full_view(), 0.5, 77).unwrap();
        let draws = 100_000;
        let random = (0..draws).filter(|_| s.next_group()[0].mode == TupleMode::Random).count();
        let frac = random as f64 / draws as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn stream_is_deterministic() {
        let tax = fig3();
        let log = mixed_log();
        let a: Vec<_> = TupleSampler::new(&log, tax.full_view(), 0.5, 5).unwrap().take(2000).collect();
        let b: Vec<_> = TupleSampler::new(&log, tax.full_view(), 0.5, 5).unwrap().take(2000).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn construction_errors() {
        let tax = Taxonomy::parse("0\t-1\tr\n1\t0\ta\n2\t0\tb\n".as_bytes()).unwrap();
        let full = TransactionLog::from_users(vec![vec![basket(&[1, 2])]]);
        assert_eq!(
            TupleSampler::new(&full, tax.full_view(), 0.0, 0).unwrap_err(),
            SamplerError::NoNegative { user: 0, t: 0 }
        );
        let empty = TransactionLog::default();
        assert_eq!(TupleSampler::new(&empty, tax.full_view(), 0.0, 0).unwrap_err(), SamplerError::EmptyLog);
        let log = TransactionLog::from_users(vec![vec![basket(&[1])]]);
        assert!(matches!(TupleSampler::new(&log, tax.full_view(), 1.5, 0), Err(SamplerError::BadMix(_))));
    }
}
