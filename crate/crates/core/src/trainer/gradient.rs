//! Per-tuple gradient of the pairwise objective and the shared update rule.
//!
//! For a tuple `(u, t, i, j)` the model score is `s(x) = <q, v_x>` with
//! `q = v_u + sum_l w_l v^next_l`, where `w_l` collects the decayed,
//! basket-normalized weights of history item `l`. With
//! `c = 1 - sigmoid(s(i) - s(j))` and `delta = v_i - v_j`:
//!
//! ```text
//! d/dv_u      = c * delta            - lambda * v_u
//! d/dv_i      = c * q                - lambda * v_i
//! d/dv_j      = -c * q               - lambda * v_j
//! d/dv^next_l = c * delta * w_l      - lambda * v^next_l
//! ```
//!
//! Each effective-factor gradient is added to every offset on that factor's
//! (level-restricted) path, since every offset enters the sum with weight 1.

use crate::factors::{dot, DecayWeights, FactorStore, Matrix};
use crate::io::transactions::{TransactionLog, UserId};
use crate::sampler::TrainTuple;
use crate::taxonomy::{LevelView, NodeId};

use super::sigmoid;

/// Rows touched by one SGD step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub user: UserId,
    pub pos_path: Vec<NodeId>,
    pub neg_path: Vec<NodeId>,
    /// `(leaf, weight, path)` for every distinct item in the used history.
    pub history: Vec<(NodeId, f64, Vec<NodeId>)>,
}

impl StepPlan {
    pub fn new(tuple: &TrainTuple, view: &LevelView<'_>, log: &TransactionLog, decay: &DecayWeights) -> Self {
        let baskets = log.history(tuple.user, tuple.t, decay.order());
        let history = decay
            .item_weights(&baskets)
            .into_iter()
            .map(|(leaf, w)| (leaf, w, view.path(leaf).collect()))
            .collect();
        StepPlan {
            user: tuple.user,
            pos_path: view.path(tuple.pos).collect(),
            neg_path: view.path(tuple.neg).collect(),
            history,
        }
    }

    /// Every `(matrix, row)` read by the step, sorted and de-duplicated.
    pub fn rows(&self) -> Vec<(Matrix, usize)> {
        let mut rows = vec![(Matrix::User, self.user)];
        rows.extend(self.pos_path.iter().chain(&self.neg_path).map(|&n| (Matrix::Item, n)));
        for (_, _, path) in &self.history {
            rows.extend(path.iter().map(|&n| (Matrix::Next, n)));
        }
        rows.sort_unstable();
        rows.dedup();
        rows
    }

    /// Effective vectors of the step, read through `row`.
    pub fn gather<'r>(&self, k: usize, row: impl Fn(Matrix, usize) -> &'r [f64]) -> StepFactors {
        let sum = |m: Matrix, path: &[NodeId]| -> Vec<f64> {
            let mut out = match path.first() {
                Some(&first) => row(m, first).to_vec(),
                None => vec![0.0; k],
            };
            for &n in path.iter().skip(1) {
                for (o, w) in out.iter_mut().zip(row(m, n)) {
                    *o += w;
                }
            }
            out
        };
        StepFactors {
            user: row(Matrix::User, self.user).to_vec(),
            pos: sum(Matrix::Item, &self.pos_path),
            neg: sum(Matrix::Item, &self.neg_path),
            history: self.history.iter().map(|(_, w, path)| (*w, sum(Matrix::Next, path))).collect(),
        }
    }

    pub fn gather_from(&self, store: &FactorStore) -> StepFactors {
        self.gather(store.k(), |m, r| store.row(m, r))
    }
}

/// Effective factors involved in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFactors {
    pub user: Vec<f64>,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
    /// `(weight, effective next factor)` aligned with [`StepPlan::history`].
    pub history: Vec<(f64, Vec<f64>)>,
}

impl StepFactors {
    pub fn query(&self) -> Vec<f64> {
        let mut q = self.user.clone();
        for (w, next) in &self.history {
            for (qi, ni) in q.iter_mut().zip(next) {
                *qi += w * ni;
            }
        }
        q
    }

    /// Per-tuple objective `ln sigmoid(s(i) - s(j)) - lambda/2 * |theta|^2`
    /// over the effective factors of the step.
    pub fn objective(&self, lambda: f64) -> f64 {
        let q = self.query();
        let x = dot(&q, &self.pos) - dot(&q, &self.neg);
        let norm2 = |v: &[f64]| dot(v, v);
        let reg = norm2(&self.user)
            + norm2(&self.pos)
            + norm2(&self.neg)
            + self.history.iter().map(|(_, n)| norm2(n)).sum::<f64>();
        ln_sigmoid(x) - 0.5 * lambda * reg
    }
}

fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientScratch {
    pub c: f64,
    pub score_pos: f64,
    pub score_neg: f64,
    pub grad_user: Vec<f64>,
    pub grad_pos: Vec<f64>,
    pub grad_neg: Vec<f64>,
    /// Aligned with [`StepPlan::history`].
    pub grad_next: Vec<Vec<f64>>,
}

impl GradientScratch {
    pub fn is_finite(&self) -> bool {
        self.c.is_finite()
            && self.score_pos.is_finite()
            && self.score_neg.is_finite()
            && self
                .grad_user
                .iter()
                .chain(&self.grad_pos)
                .chain(&self.grad_neg)
                .chain(self.grad_next.iter().flatten())
                .all(|v| v.is_finite())
    }
}

pub fn compute_gradients(f: &StepFactors, lambda: f64) -> GradientScratch {
    let q = f.query();
    let score_pos = dot(&q, &f.pos);
    let score_neg = dot(&q, &f.neg);
    let c = 1.0 - sigmoid(score_pos - score_neg);
    let delta: Vec<f64> = f.pos.iter().zip(&f.neg).map(|(a, b)| a - b).collect();
    let grad_user = delta.iter().zip(&f.user).map(|(d, u)| c * d - lambda * u).collect();
    let grad_pos = q.iter().zip(&f.pos).map(|(q, v)| c * q - lambda * v).collect();
    let grad_neg = q.iter().zip(&f.neg).map(|(q, v)| -c * q - lambda * v).collect();
    let grad_next = f
        .history
        .iter()
        .map(|(w, next)| delta.iter().zip(next).map(|(d, n)| c * d * w - lambda * n).collect())
        .collect();
    GradientScratch { c, score_pos, score_neg, grad_user, grad_pos, grad_neg, grad_next }
}

/// Ascent step with rate `epsilon`: the user row, every offset on the
/// positive and negative paths, and every next-offset on each history item's
/// path. Overlapping paths receive each contribution in turn.
pub fn apply_updates(plan: &StepPlan, g: &GradientScratch, epsilon: f64, store: &mut FactorStore) {
    for_each_update(plan, g, |m, row, grad| {
        for (w, d) in store.row_mut(m, row).iter_mut().zip(grad) {
            *w += epsilon * d;
        }
    });
}

/// Visits every `(matrix, row, gradient)` write of a step in a fixed order.
pub(crate) fn for_each_update(plan: &StepPlan, g: &GradientScratch, mut visit: impl FnMut(Matrix, usize, &[f64])) {
    visit(Matrix::User, plan.user, &g.grad_user);
    for &n in &plan.pos_path {
        visit(Matrix::Item, n, &g.grad_pos);
    }
    for &n in &plan.neg_path {
        visit(Matrix::Item, n, &g.grad_neg);
    }
    for ((_, _, path), grad) in plan.history.iter().zip(&g.grad_next) {
        for &n in path {
            visit(Matrix::Next, n, grad);
        }
    }
}
