//! Latent factors and the affinity model.
//!
//! Every taxonomy node owns two offset vectors: `item` (w^I) and `next`
//! (w^{I→•}). A node's effective factor is the sum of its offsets along the
//! path to the root, restricted to the levels of a [`LevelView`]. The
//! affinity of a user to a node combines a long-term term with a decayed
//! average over the next-item factors of the user's previous baskets.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::io::transactions::{Basket, UserId};
use crate::seed::derive_seed;
use crate::taxonomy::{LevelView, NodeId, Taxonomy};

pub const INIT_STD: f64 = 0.01;

/// Which factor matrix a row lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Matrix {
    User = 0,
    Item = 1,
    Next = 2,
}

/// Which per-node offset to accumulate into an effective factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    Item,
    Next,
}

impl From<FactorKind> for Matrix {
    fn from(k: FactorKind) -> Self {
        match k {
            FactorKind::Item => Matrix::Item,
            FactorKind::Next => Matrix::Next,
        }
    }
}

/// Dense row-major storage for user factors and the two node-offset matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorStore {
    k: usize,
    users: Vec<f64>,
    item: Vec<f64>,
    next: Vec<f64>,
}

impl FactorStore {
    pub fn zeros(k: usize, user_count: usize, node_count: usize) -> Self {
        assert!(k > 0, "factor dimensionality must be positive");
        FactorStore {
            k,
            users: vec![0.0; user_count * k],
            item: vec![0.0; node_count * k],
            next: vec![0.0; node_count * k],
        }
    }

    /// I.i.d. N(0, 0.01²) entries drawn from the `init` stream of `seed`.
    pub fn random(k: usize, user_count: usize, node_count: usize, seed: u64) -> Self {
        let mut store = Self::zeros(k, user_count, node_count);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for v in store.users.iter_mut().chain(store.item.iter_mut()).chain(store.next.iter_mut()) {
            *v = normal.sample(&mut rng);
        }
        store
    }

    pub fn from_parts(k: usize, users: Vec<f64>, item: Vec<f64>, next: Vec<f64>) -> Self {
        assert!(k > 0);
        assert_eq!(users.len() % k, 0);
        assert_eq!(item.len() % k, 0);
        assert_eq!(item.len(), next.len());
        FactorStore { k, users, item, next }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn user_count(&self) -> usize {
        self.users.len() / self.k
    }

    pub fn node_count(&self) -> usize {
        self.item.len() / self.k
    }

    pub fn matrix(&self, m: Matrix) -> &[f64] {
        match m {
            Matrix::User => &self.users,
            Matrix::Item => &self.item,
            Matrix::Next => &self.next,
        }
    }

    pub fn matrix_mut(&mut self, m: Matrix) -> &mut [f64] {
        match m {
            Matrix::User => &mut self.users,
            Matrix::Item => &mut self.item,
            Matrix::Next => &mut self.next,
        }
    }

    #[inline]
    pub fn row(&self, m: Matrix, r: usize) -> &[f64] {
        let k = self.k;
        &self.matrix(m)[r * k..(r + 1) * k]
    }

    #[inline]
    pub fn row_mut(&mut self, m: Matrix, r: usize) -> &mut [f64] {
        let k = self.k;
        &mut self.matrix_mut(m)[r * k..(r + 1) * k]
    }

    pub fn user(&self, u: UserId) -> &[f64] {
        self.row(Matrix::User, u)
    }

    pub fn is_finite(&self) -> bool {
        self.users.iter().chain(&self.item).chain(&self.next).all(|v| v.is_finite())
    }

    /// First non-finite entry as `(matrix, row)`.
    pub fn first_non_finite(&self) -> Option<(Matrix, usize)> {
        for m in [Matrix::User, Matrix::Item, Matrix::Next] {
            if let Some(pos) = self.matrix(m).iter().position(|v| !v.is_finite()) {
                return Some((m, pos / self.k));
            }
        }
        None
    }

    /// Sum of the offsets of `node`'s ancestors (itself included) that lie
    /// inside the view.
    pub fn effective_factor(&self, view: &LevelView<'_>, node: NodeId, kind: FactorKind) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        self.add_effective(view, node, kind, &mut out);
        out
    }

    pub(crate) fn add_effective(&self, view: &LevelView<'_>, node: NodeId, kind: FactorKind, out: &mut [f64]) {
        let m = Matrix::from(kind);
        for n in view.path(node) {
            for (o, w) in out.iter_mut().zip(self.row(m, n)) {
                *o += w;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-lag weights `alpha_n = alpha * exp(-n / N)` for `n = 1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayWeights {
    alpha: f64,
    weights: Vec<f64>,
}

impl DecayWeights {
    pub fn new(alpha: f64, order: usize) -> Self {
        assert!(alpha > 0.0, "decay base must be positive");
        let weights = (1..=order).map(|n| alpha * (-(n as f64) / order as f64).exp()).collect();
        DecayWeights { alpha, weights }
    }

    pub fn order(&self) -> usize {
        self.weights.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Weight of lag `n` (1-based).
    pub fn weight(&self, n: usize) -> f64 {
        self.weights[n - 1]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Combined coefficient of every history item: for each distinct leaf
    /// `l`, the sum over lags `n` with `l ∈ B_{t-n}` of `alpha_n / |B_{t-n}|`.
    /// `history` is most-recent-first; lags beyond the order are ignored and
    /// short histories are not renormalized.
    pub fn item_weights(&self, history: &[&Basket]) -> Vec<(NodeId, f64)> {
        let mut out: Vec<(NodeId, f64)> = Vec::new();
        for (lag, basket) in history.iter().take(self.order()).enumerate() {
            let w = self.weights[lag] / basket.len() as f64;
            for &item in basket.items() {
                match out.iter_mut().find(|(i, _)| *i == item) {
                    Some((_, acc)) => *acc += w,
                    None => out.push((item, w)),
                }
            }
        }
        out
    }
}

/// Affinity of `user` to `candidate` computed literally from the model:
/// `<v_u, v_j> + sum_n alpha_n/|B_{t-n}| sum_{l in B_{t-n}} <v^next_l, v_j>`.
///
/// Baskets are non-empty by construction, so the per-lag normalizer is always
/// defined. At most `decay.order()` baskets of `history` are used.
pub fn affinity(
    store: &FactorStore,
    view: &LevelView<'_>,
    decay: &DecayWeights,
    user: UserId,
    candidate: NodeId,
    history: &[&Basket],
) -> f64 {
    let target = store.effective_factor(view, candidate, FactorKind::Item);
    let mut score = dot(store.user(user), &target);
    for (lag, basket) in history.iter().take(decay.order()).enumerate() {
        let coeff = decay.weight(lag + 1) / basket.len() as f64;
        let short: f64 = basket
            .items()
            .iter()
            .map(|&l| dot(&store.effective_factor(view, l, FactorKind::Next), &target))
            .sum();
        score += coeff * short;
    }
    score
}

/// Effective factors for every node precomputed once, for scoring many
/// candidates per user.
#[derive(Debug, Clone)]
pub struct ScoringModel<'s> {
    store: &'s FactorStore,
    view: LevelView<'s>,
    k: usize,
    item: Vec<f64>,
    next: Vec<f64>,
    decay: DecayWeights,
}

impl<'s> ScoringModel<'s> {
    pub fn new(store: &'s FactorStore, view: &LevelView<'s>, decay: DecayWeights) -> Self {
        let k = store.k();
        let tax = view.taxonomy();
        let n = tax.node_count();
        let mut item = vec![0.0; n * k];
        let mut next = vec![0.0; n * k];
        for level in (0..view.levels()).rev() {
            for &node in tax.level_nodes(level) {
                let parent = tax.parent(node).filter(|&p| tax.level(p) < view.levels());
                for (table, m) in [(&mut item, Matrix::Item), (&mut next, Matrix::Next)] {
                    // Parents sit on a higher level and were filled first.
                    let mut eff = store.row(m, node).to_vec();
                    if let Some(p) = parent {
                        for (e, up) in eff.iter_mut().zip(&table[p * k..(p + 1) * k]) {
                            *e += up;
                        }
                    }
                    table[node * k..(node + 1) * k].copy_from_slice(&eff);
                }
            }
        }
        ScoringModel { store, view: *view, k, item, next, decay }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn store(&self) -> &FactorStore {
        self.store
    }

    pub fn view(&self) -> &LevelView<'s> {
        &self.view
    }

    pub fn taxonomy(&self) -> &'s Taxonomy {
        self.view.taxonomy()
    }

    pub fn decay(&self) -> &DecayWeights {
        &self.decay
    }

    pub fn item_factor(&self, node: NodeId) -> &[f64] {
        &self.item[node * self.k..(node + 1) * self.k]
    }

    pub fn next_factor(&self, node: NodeId) -> &[f64] {
        &self.next[node * self.k..(node + 1) * self.k]
    }

    /// `v_u + sum_l weight_l * v^next_l`; the score of any node is its dot
    /// product with this vector.
    pub fn query(&self, user: UserId, history: &[&Basket]) -> Vec<f64> {
        let mut q = self.store.user(user).to_vec();
        for (item, w) in self.decay.item_weights(history) {
            for (qi, ni) in q.iter_mut().zip(self.next_factor(item)) {
                *qi += w * ni;
            }
        }
        q
    }

    #[inline]
    pub fn score(&self, query: &[f64], node: NodeId) -> f64 {
        dot(query, self.item_factor(node))
    }
}

/// Writes `kind,node_or_user_id,level,f_0..f_{K-1}` rows: user factors, both
/// offset matrices, and the effective item factor of every node. Nodes are
/// identified by their external id; the user rows leave `level` empty.
pub fn export_factors(store: &FactorStore, view: &LevelView<'_>, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(export_csv(store, view).as_bytes())?;
    file.flush()
}

pub fn export_csv(store: &FactorStore, view: &LevelView<'_>) -> String {
    let k = store.k();
    let tax = view.taxonomy();
    let mut out = String::from("kind,node_or_user_id,level");
    for f in 0..k {
        let _ = write!(out, ",f_{f}");
    }
    out.push('\n');
    let row = |out: &mut String, kind: &str, id: u64, level: Option<usize>, values: &[f64]| {
        let _ = write!(out, "{kind},{id},");
        if let Some(l) = level {
            let _ = write!(out, "{l}");
        }
        for v in values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    };
    let ext = |n: NodeId| tax.nodes()[n].external_id.unwrap_or(n as u64);
    for u in 0..store.user_count() {
        row(&mut out, "user", u as u64, None, store.user(u));
    }
    for n in 0..store.node_count() {
        row(&mut out, "item_offset", ext(n), Some(tax.level(n)), store.row(Matrix::Item, n));
    }
    for n in 0..store.node_count() {
        row(&mut out, "next_offset", ext(n), Some(tax.level(n)), store.row(Matrix::Next, n));
    }
    for n in 0..store.node_count() {
        let eff = store.effective_factor(view, n, FactorKind::Item);
        row(&mut out, "item_effective", ext(n), Some(tax.level(n)), &eff);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::Taxonomy;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn depth3() -> Taxonomy {
        let tsv = "0\t-1\troot\n1\t0\ta\n2\t0\tb\n3\t1\taa\n4\t1\tab\n5\t2\tba\n\
                   6\t3\ti6\n7\t3\ti7\n8\t3\ti8\n9\t3\ti9\n10\t4\ti10\n11\t5\ti11\n";
        Taxonomy::parse(tsv.as_bytes()).unwrap()
    }

    /// Oracle: scalar loop over the explicit ancestor path.
    fn scalar_effective(store: &FactorStore, tax: &Taxonomy, node: NodeId, levels: usize, m: Matrix) -> Vec<f64> {
        let path = tax.ancestor_path(node).unwrap();
        let mut out = vec![0.0; store.k()];
        for n in path.into_iter().take_while(|&n| tax.level(n) < levels) {
            for f in 0..store.k() {
                out[f] += store.matrix(m)[n * store.k() + f];
            }
        }
        out
    }

    #[test]
    fn effective_factor_cases() {
        let tax = depth3();
        let zero = FactorStore::zeros(6, 1, tax.node_count());
        assert_eq!(zero.effective_factor(&tax.full_view(), 6, FactorKind::Item), vec![0.0; 6]);

        let mut store = FactorStore::zeros(6, 1, tax.node_count());
        for (axis, node) in [6, 3, 1, 0].into_iter().enumerate() {
            store.row_mut(Matrix::Item, node)[axis] = 1.0;
        }
        let full = tax.restrict_levels(4).unwrap();
        let eff = store.effective_factor(&full, 6, FactorKind::Item);
        assert_eq!(eff, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(eff, scalar_effective(&store, &tax, 6, 4, Matrix::Item));

        let flat = tax.restrict_levels(1).unwrap();
        assert_eq!(store.effective_factor(&flat, 6, FactorKind::Item), store.row(Matrix::Item, 6));
        assert_eq!(store.effective_factor(&flat, 6, FactorKind::Next), vec![0.0; 6]);
    }

    #[test]
    fn sibling_leaves_with_zero_offsets_share_factors() {
        let tax = depth3();
        let mut store = FactorStore::random(4, 2, tax.node_count(), 3);
        store.row_mut(Matrix::Item, 7).fill(0.0);
        store.row_mut(Matrix::Item, 8).fill(0.0);
        let view = tax.full_view();
        assert_eq!(
            store.effective_factor(&view, 7, FactorKind::Item),
            store.effective_factor(&view, 8, FactorKind::Item)
        );
        let decay = DecayWeights::new(1.0, 0);
        for u in 0..2 {
            assert_eq!(affinity(&store, &view, &decay, u, 7, &[]), affinity(&store, &view, &decay, u, 8, &[]));
        }
    }

    #[test]
    fn decay_weights_shape() {
        let d = DecayWeights::new(2.0, 3);
        assert_eq!(d.order(), 3);
        assert!(d.weights().windows(2).all(|w| w[0] > w[1] && w[1] > 0.0));
        assert_relative_eq!(d.weight(3), 2.0 * (-1.0f64).exp());
        assert!(DecayWeights::new(1.0, 0).weights().is_empty());
    }

    #[test]
    fn affinity_hand_example() {
        // Flat taxonomy: root with leaves j=1 and l=2.
        let tax = Taxonomy::parse("0\t-1\tr\n1\t0\tj\n2\t0\tl\n".as_bytes()).unwrap();
        let view = tax.restrict_levels(1).unwrap();
        let mut store = FactorStore::zeros(2, 1, 3);
        store.row_mut(Matrix::User, 0).copy_from_slice(&[1.0, 0.0]);
        store.row_mut(Matrix::Item, 1).copy_from_slice(&[2.0, 3.0]);
        store.row_mut(Matrix::Next, 2).copy_from_slice(&[0.0, 1.0]);
        let decay = DecayWeights::new(1.0, 1);
        let basket = Basket::new(vec![2]).unwrap();
        let got = affinity(&store, &view, &decay, 0, 1, &[&basket]);
        // Independent scalar evaluation.
        let alpha1 = 1.0 * (-1.0f64 / 1.0).exp();
        let oracle = (1.0 * 2.0 + 0.0 * 3.0) + alpha1 / 1.0 * (0.0 * 2.0 + 1.0 * 3.0);
        assert_relative_eq!(got, oracle, max_relative = 1e-12);
        assert_relative_eq!(got, 3.103638323514327, max_relative = 1e-9);

        let zero_user = FactorStore::zeros(2, 1, 3);
        assert_eq!(affinity(&zero_user, &view, &decay, 0, 1, &[]), 0.0);
        let no_markov = DecayWeights::new(1.0, 0);
        assert_eq!(affinity(&store, &view, &no_markov, 0, 1, &[&basket]), 2.0);
    }

    #[test]
    fn scoring_model_matches_literal_affinity() {
        let tax = depth3();
        let store = FactorStore::random(3, 2, tax.node_count(), 11);
        for levels in 1..=4 {
            let view = tax.restrict_levels(levels).unwrap();
            let decay = DecayWeights::new(0.7, 2);
            let model = ScoringModel::new(&store, &view, decay.clone());
            let b1 = Basket::new(vec![6, 10]).unwrap();
            let b2 = Basket::new(vec![6]).unwrap();
            let b3 = Basket::new(vec![11]).unwrap();
            let history = [&b1, &b2, &b3];
            let q = model.query(1, &history);
            for node in 0..tax.node_count() {
                let literal = affinity(&store, &view, &decay, 1, node, &history);
                assert_relative_eq!(model.score(&q, node), literal, epsilon = 1e-12, max_relative = 1e-9);
                let eff = store.effective_factor(&view, node, FactorKind::Item);
                for (a, b) in eff.iter().zip(model.item_factor(node)) {
                    assert_relative_eq!(*a, *b, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn export_counts_and_round_trip() {
        let root_only = Taxonomy::parse("0\t-1\tr\n".as_bytes()).unwrap();
        let store = FactorStore::zeros(2, 0, 1);
        let csv = export_csv(&store, &root_only.full_view());
        assert_eq!(csv.lines().count(), 1 + 2 + 1);

        let tax = depth3();
        let store = FactorStore::random(3, 2, tax.node_count(), 5);
        let view = tax.full_view();
        let csv = export_csv(&store, &view);
        let mut offsets = std::collections::HashMap::new();
        let mut effective = std::collections::HashMap::new();
        for line in csv.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let values: Vec<f64> = f[3..].iter().map(|v| v.parse().unwrap()).collect();
            let id: usize = f[1].parse().unwrap();
            match f[0] {
                "user" => {
                    for (a, b) in values.iter().zip(store.user(id)) {
                        assert!((a - b).abs() < 1e-6);
                    }
                }
                "item_offset" => {
                    offsets.insert(id, values);
                }
                "item_effective" => {
                    effective.insert(id, values);
                }
                _ => {}
            }
        }
        for (node, eff) in &effective {
            let mut sum = [0.0; 3];
            for n in tax.ancestor_path(*node).unwrap() {
                for (s, v) in sum.iter_mut().zip(&offsets[&n]) {
                    *s += v;
                }
            }
            for (a, b) in sum.iter().zip(eff) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn additivity(seed in 0u64..1000, node in 1usize..12, levels in 1usize..=4) {
            let tax = depth3();
            let store = FactorStore::random(4, 1, tax.node_count(), seed);
            let view = tax.restrict_levels(levels).unwrap();
            let parent = tax.parent(node).unwrap();
            prop_assume!(tax.level(node) < levels);
            for (kind, m) in [(FactorKind::Item, Matrix::Item), (FactorKind::Next, Matrix::Next)] {
                let child = store.effective_factor(&view, node, kind);
                let up = store.effective_factor(&view, parent, kind);
                for f in 0..4 {
                    let diff = child[f] - up[f];
                    let own = store.row(m, node)[f];
                    prop_assert!((diff - own).abs() <= 1e-6 * child[f].abs().max(own.abs()).max(1e-12) + 1e-15);
                }
            }
        }

        #[test]
        fn long_term_term_is_linear_in_user_factor(seed in 0u64..500, scale in -3.0f64..3.0) {
            let tax = depth3();
            let view = tax.full_view();
            let decay = DecayWeights::new(1.0, 1);
            let store = FactorStore::random(3, 1, tax.node_count(), seed);
            let mut scaled = store.clone();
            for v in scaled.row_mut(Matrix::User, 0) { *v *= scale; }
            let b = Basket::new(vec![7]).unwrap();
            let short = affinity(&store, &view, &decay, 0, 9, &[&b]) - affinity(&store, &view, &decay, 0, 9, &[]);
            let long = affinity(&store, &view, &decay, 0, 9, &[]);
            let scaled_total = affinity(&scaled, &view, &decay, 0, 9, &[&b]);
            prop_assert!((scaled_total - (scale * long + short)).abs() < 1e-12);
        }

        #[test]
        fn flat_memoryless_affinity_is_plain_dot(seed in 0u64..500, node in 6usize..12) {
            let tax = depth3();
            let view = tax.restrict_levels(1).unwrap();
            let store = FactorStore::random(4, 1, tax.node_count(), seed);
            let decay = DecayWeights::new(1.0, 0);
            let b = Basket::new(vec![7]).unwrap();
            let plain = dot(store.user(0), store.row(Matrix::Item, node));
            prop_assert_eq!(affinity(&store, &view, &decay, 0, node, &[&b]), plain);
        }
    }
}
