//! Ranking metrics over 1-based rank positions (rank 1 = best).

/// Fraction of (positive, negative) pairs ordered correctly, computed from
/// the positives' ranks in a total ranking of `universe` items.
///
/// `None` when there are no positives or no negatives. Ranks must be
/// distinct and lie in `1..=universe`.
pub fn auc(positive_ranks: &[usize], universe: usize) -> Option<f64> {
    let pos = positive_ranks.len();
    if pos == 0 || pos >= universe {
        return None;
    }
    let mut ranks = positive_ranks.to_vec();
    ranks.sort_unstable();
    // The i-th best positive has `universe - r` items below it, of which
    // `pos - 1 - i` are positives.
    let correct: usize = ranks.iter().enumerate().map(|(i, &r)| (universe - r) - (pos - 1 - i)).sum();
    Some(correct as f64 / (pos * (universe - pos)) as f64)
}

/// Mean rank of the positives; `None` when there are none.
pub fn mean_rank(positive_ranks: &[usize]) -> Option<f64> {
    if positive_ranks.is_empty() {
        return None;
    }
    Some(positive_ranks.iter().sum::<usize>() as f64 / positive_ranks.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_auc(ranks: &[usize], universe: usize) -> f64 {
        let negatives: Vec<usize> = (1..=universe).filter(|r| !ranks.contains(r)).collect();
        let mut hits = 0usize;
        for &x in ranks {
            for &y in &negatives {
                hits += usize::from(x < y);
            }
        }
        hits as f64 / (ranks.len() * negatives.len()) as f64
    }

    #[test]
    fn hand_values() {
        assert_eq!(auc(&[1, 2], 6), Some(1.0));
        assert_eq!(auc(&[3], 5), Some(0.5));
        assert_eq!(auc(&[5], 5), Some(0.0));
        assert_eq!(auc(&[], 5), None);
        assert_eq!(auc(&[1, 2], 2), None);
        assert_eq!(mean_rank(&[1]), Some(1.0));
        assert_eq!(mean_rank(&[2, 4]), Some(3.0));
        assert_eq!(mean_rank(&[]), None);
    }

    #[test]
    fn matches_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let universe = rng.random_range(2..=50);
            let mut all: Vec<usize> = (1..=universe).collect();
            all.shuffle(&mut rng);
            let t = rng.random_range(1..universe);
            let ranks = &all[..t];
            assert_eq!(auc(ranks, universe).unwrap(), brute_auc(ranks, universe));
            let mean = ranks.iter().map(|&r| r as f64).sum::<f64>() / t as f64;
            assert_eq!(mean_rank(ranks).unwrap(), mean);
        }
    }

    proptest! {
        #[test]
        fn reversal_complements(universe in 2usize..40, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut all: Vec<usize> = (1..=universe).collect();
            all.shuffle(&mut rng);
            let t = rng.random_range(1..universe);
            let ranks = &all[..t];
            let reversed: Vec<usize> = ranks.iter().map(|r| universe + 1 - r).collect();
            let a = auc(ranks, universe).unwrap();
            let b = auc(&reversed, universe).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }
}
