//! Per-user temporal train/test splits.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::transactions::{Basket, TransactionLog, UserId};
use crate::seed::derive_seed;
use crate::taxonomy::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("mu = {0} must lie strictly between 0 and 1")]
    Mu(f64),
    #[error("split sigma = {0} must be finite and non-negative")]
    Sigma(f64),
    #[error("holdout size must be at least 1")]
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Mean fraction of each user's transactions used for training.
    pub mu: f64,
    /// Standard deviation of the per-user fraction.
    pub sigma: f64,
    /// Number of transactions in the validation and test slices.
    pub holdout: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(mu: f64, seed: u64) -> Self {
        SplitSpec { mu, sigma: 0.05, holdout: 1, seed }
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(SplitError::Mu(self.mu));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SplitError::Sigma(self.sigma));
        }
        if self.holdout == 0 {
            return Err(SplitError::Holdout);
        }
        Ok(())
    }
}

/// Held-out baskets of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOut {
    pub user: UserId,
    pub baskets: Vec<Basket>,
}

impl HeldOut {
    pub fn items(&self) -> BTreeSet<NodeId> {
        self.baskets.iter().flat_map(|b| b.items().iter().copied()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    /// Every user's training prefix (possibly empty); user ids unchanged.
    pub train: TransactionLog,
    /// `train` without each user's validation baskets.
    pub fit: TransactionLog,
    /// Last `holdout` training baskets of users whose fit prefix is non-empty.
    pub validation: Vec<HeldOut>,
    /// First `holdout` test baskets of users with a non-empty training prefix.
    pub test: Vec<HeldOut>,
    /// Drawn training fraction per user.
    pub fractions: Vec<f64>,
}

/// Splits each user's sequence at `round(f * count)` with
/// `f ~ Normal(mu, sigma)` clipped to `[0, 1]`.
pub fn split(log: &TransactionLog, spec: &SplitSpec) -> Result<Split, SplitError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "split"));
    let normal = Normal::new(spec.mu, spec.sigma).map_err(|_| SplitError::Sigma(spec.sigma))?;
    let t = spec.holdout;
    let mut train = Vec::with_capacity(log.user_count());
    let mut fit = Vec::with_capacity(log.user_count());
    let mut validation = Vec::new();
    let mut test = Vec::new();
    let mut fractions = Vec::with_capacity(log.user_count());
    for (user, txs) in log.users().iter().enumerate() {
        let f = normal.sample(&mut rng).clamp(0.0, 1.0);
        fractions.push(f);
        let cut = ((f * txs.len() as f64).round() as usize).min(txs.len());
        let (head, tail) = txs.split_at(cut);
        let fit_len = head.len().saturating_sub(t);
        if !head.is_empty() && !tail.is_empty() {
            test.push(HeldOut { user, baskets: tail[..t.min(tail.len())].to_vec() });
        }
        if fit_len > 0 {
            validation.push(HeldOut { user, baskets: head[fit_len..].to_vec() });
        }
        train.push(head.to_vec());
        fit.push(head[..fit_len].to_vec());
    }
    Ok(Split {
        train: TransactionLog::from_users(train),
        fit: TransactionLog::from_users(fit),
        validation,
        test,
        fractions,
    })
}

/// Moves each user's last `holdout` baskets into a held-out slice, for users
/// that keep at least one basket; returns the shortened log and the slice.
pub fn hold_out_last(log: &TransactionLog, holdout: usize) -> (TransactionLog, Vec<HeldOut>) {
    let mut kept = Vec::with_capacity(log.user_count());
    let mut held = Vec::new();
    for (user, txs) in log.users().iter().enumerate() {
        let keep = txs.len().saturating_sub(holdout);
        if keep > 0 && keep < txs.len() {
            held.push(HeldOut { user, baskets: txs[keep..].to_vec() });
            kept.push(txs[..keep].to_vec());
        } else {
            kept.push(txs.clone());
        }
    }
    (TransactionLog::from_users(kept), held)
}

/// Removes items the user bought in `train` from every held-out basket;
/// users left without baskets are dropped.
pub fn filter_repeats(held_out: &[HeldOut], train: &TransactionLog) -> Vec<HeldOut> {
    held_out
        .iter()
        .filter_map(|h| {
            let seen = train.purchased(h.user);
            let baskets: Vec<Basket> = h.baskets.iter().filter_map(|b| b.without(&seen)).collect();
            (!baskets.is_empty()).then_some(HeldOut { user: h.user, baskets })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(items: &[NodeId]) -> Basket {
        Basket::new(items.to_vec()).unwrap()
    }

    #[test]
    fn four_transactions_at_half() {
        let log = TransactionLog::from_users(vec![vec![b(&[1]), b(&[2]), b(&[3]), b(&[4])]]);
        let spec = SplitSpec { mu: 0.5, sigma: 0.0, holdout: 1, seed: 1 };
        let s = split(&log, &spec).unwrap();
        assert_eq!(s.train.transactions(0), &[b(&[1]), b(&[2])]);
        assert_eq!(s.fit.transactions(0), &[b(&[1])]);
        assert_eq!(s.validation, vec![HeldOut { user: 0, baskets: vec![b(&[2])] }]);
        assert_eq!(s.test, vec![HeldOut { user: 0, baskets: vec![b(&[3])] }]);
    }

    #[test]
    fn fraction_one_excludes_user() {
        let log = TransactionLog::from_users(vec![vec![b(&[1]), b(&[2])]]);
        let spec = SplitSpec { mu: 0.99, sigma: 0.0, holdout: 1, seed: 1 };
        let s = split(&log, &spec).unwrap();
        assert!(s.test.is_empty());
        assert_eq!(s.train.transaction_count(), 2);
    }

    #[test]
    fn fraction_mean_tracks_mu() {
        let users = (0..10_000).map(|_| vec![b(&[1])]).collect();
        let log = TransactionLog::from_users(users);
        let s = split(&log, &SplitSpec::new(0.3, 5)).unwrap();
        let mean = s.fractions.iter().sum::<f64>() / s.fractions.len() as f64;
        assert!((mean - 0.3).abs() < 0.01, "{mean}");
    }

    #[test]
    fn deterministic_and_time_consistent() {
        let users: Vec<Vec<Basket>> =
            (0..200).map(|u| (0..(2 + u % 7)).map(|t| b(&[u * 10 + t])).collect()).collect();
        let log = TransactionLog::from_users(users);
        let spec = SplitSpec { sigma: 0.2, ..SplitSpec::new(0.5, 9) };
        let a = split(&log, &spec).unwrap();
        let c = split(&log, &spec).unwrap();
        assert_eq!(a.train, c.train);
        assert_eq!(a.test, c.test);
        for h in &a.test {
            let txs = log.transactions(h.user);
            let cut = a.train.transactions(h.user).len();
            assert_eq!(&txs[..cut], a.train.transactions(h.user));
            assert_eq!(h.baskets[0], txs[cut]);
        }
    }

    #[test]
    fn bad_specs() {
        let log = TransactionLog::default();
        assert_eq!(split(&log, &SplitSpec::new(1.0, 0)).unwrap_err(), SplitError::Mu(1.0));
        assert!(split(&log, &SplitSpec { holdout: 0, ..SplitSpec::new(0.5, 0) }).is_err());
        assert!(split(&log, &SplitSpec { sigma: -1.0, ..SplitSpec::new(0.5, 0) }).is_err());
    }

    #[test]
    fn last_baskets_held_out() {
        let log = TransactionLog::from_users(vec![vec![b(&[1]), b(&[2]), b(&[3])], vec![b(&[4])]]);
        let (kept, held) = hold_out_last(&log, 1);
        assert_eq!(kept.transactions(0), &[b(&[1]), b(&[2])]);
        assert_eq!(kept.transactions(1), &[b(&[4])]);
        assert_eq!(held, vec![HeldOut { user: 0, baskets: vec![b(&[3])] }]);
    }

    #[test]
    fn repeat_filter() {
        let train = TransactionLog::from_users(vec![vec![b(&[1, 2])], vec![b(&[5])]]);
        let held = vec![
            HeldOut { user: 0, baskets: vec![b(&[1, 3])] },
            HeldOut { user: 1, baskets: vec![b(&[5])] },
        ];
        let out = filter_repeats(&held, &train);
        assert_eq!(out, vec![HeldOut { user: 0, baskets: vec![b(&[3])] }]);
        let disjoint = vec![HeldOut { user: 1, baskets: vec![b(&[7])] }];
        assert_eq!(filter_repeats(&disjoint, &train), disjoint);
    }
}
