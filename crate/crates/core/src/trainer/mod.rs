//! Pairwise SGD training of the taxonomy-aware model.

mod cv;
pub mod gradient;
mod parallel;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factors::{DecayWeights, FactorStore, Matrix};
use crate::io::transactions::TransactionLog;
use crate::sampler::{SamplerError, TrainTuple, TupleSampler};
use crate::seed::derive_seed;
use crate::taxonomy::{Taxonomy, TaxonomyError};

pub use cv::{cross_validate, default_grid, CvError, CvOutcome, GridPoint};
pub use gradient::{apply_updates, compute_gradients, GradientScratch, StepFactors, StepPlan};
pub use parallel::{continue_training_parallel, train_parallel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Factor dimensionality K.
    pub factors: usize,
    pub lambda: f64,
    pub epsilon: f64,
    /// Decay base of the per-lag weights.
    pub alpha: f64,
    /// Markov order N.
    pub max_prev_transactions: usize,
    /// Number of taxonomy levels used, counted up from the leaves.
    pub taxonomy_update_levels: usize,
    pub sibling_mix: f64,
    pub epochs: usize,
    pub threads: usize,
    pub seed: u64,
    /// Max-norm of a cached internal-node delta that triggers a flush.
    pub cache_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            factors: 20,
            lambda: 0.001,
            epsilon: 0.05,
            alpha: 1.0,
            max_prev_transactions: 0,
            taxonomy_update_levels: 1,
            sibling_mix: 0.5,
            epochs: 30,
            threads: 1,
            seed: 42,
            cache_threshold: 0.1,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field} = {value} is out of range ({expected})")]
    OutOfRange { field: &'static str, value: String, expected: &'static str },
    #[error(transparent)]
    Levels(#[from] TaxonomyError),
}

impl ModelConfig {
    /// Plain latent factor model: leaves only, no Markov term.
    pub fn mf(order: usize) -> Self {
        ModelConfig { taxonomy_update_levels: 1, max_prev_transactions: order, sibling_mix: 0.0, ..Default::default() }
    }

    /// Full-taxonomy model for a taxonomy of the given depth.
    pub fn tf(taxonomy: &Taxonomy, order: usize) -> Self {
        ModelConfig { taxonomy_update_levels: taxonomy.depth() + 1, max_prev_transactions: order, ..Default::default() }
    }

    pub fn decay(&self) -> DecayWeights {
        DecayWeights::new(self.alpha, self.max_prev_transactions)
    }

    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), ConfigError> {
        let bad = |field, value: &dyn std::fmt::Display, expected| ConfigError::OutOfRange {
            field,
            value: value.to_string(),
            expected,
        };
        if self.factors == 0 {
            return Err(bad("factors", &self.factors, "K >= 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(bad("lambda", &self.lambda, "lambda >= 0"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(bad("epsilon", &self.epsilon, "epsilon > 0"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(bad("alpha", &self.alpha, "alpha > 0"));
        }
        if !(0.0..=1.0).contains(&self.sibling_mix) {
            return Err(bad("sibling_mix", &self.sibling_mix, "0 <= mix <= 1"));
        }
        if self.epochs == 0 {
            return Err(bad("epochs", &self.epochs, "epochs >= 1"));
        }
        if self.threads == 0 {
            return Err(bad("threads", &self.threads, "threads >= 1"));
        }
        if self.cache_threshold.is_nan() || self.cache_threshold < 0.0 {
            return Err(bad("cache_threshold", &self.cache_threshold, "threshold >= 0"));
        }
        taxonomy.restrict_levels(self.taxonomy_update_levels)?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("training diverged at epoch {epoch}, step {step}: non-finite value for tuple {tuple:?}")]
    Diverged { epoch: usize, step: usize, tuple: Option<TrainTuple> },
    #[error("training diverged at epoch {epoch}: non-finite {matrix:?} row {row}")]
    NonFiniteRow { epoch: usize, matrix: Matrix, row: usize },
    #[error("log has {log_users} users but the store has {store_users}")]
    UserMismatch { log_users: usize, store_users: usize },
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_c: f64,
    pub val_auc: Option<f64>,
    pub wall_seconds: f64,
}

/// Appends `epoch,mean_c,val_auc,wall_seconds` rows, writing the header when
/// the file is new.
pub fn append_diagnostics(path: impl AsRef<Path>, stats: &[EpochStats]) -> std::io::Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let fresh = !path.exists();
    let mut out = String::new();
    if fresh {
        out.push_str("epoch,mean_c,val_auc,wall_seconds\n");
    }
    for s in stats {
        let auc = s.val_auc.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", s.epoch, s.mean_c, auc, s.wall_seconds);
    }
    std::fs::OpenOptions::new().create(true).append(true).open(path)?.write_all(out.as_bytes())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub store: FactorStore,
    pub epochs: Vec<EpochStats>,
}

/// Optional per-epoch validation hook returning a held-out AUC.
pub type Validator<'a> = dyn Fn(&FactorStore) -> f64 + Sync + 'a;

/// Single-threaded training. Deterministic for a fixed config.
///
/// An epoch is `triple_count` tuples; a sibling group contributes one tuple
/// per level it covers.
pub fn train(log: &TransactionLog, taxonomy: &Taxonomy, config: &ModelConfig) -> Result<TrainOutcome, TrainError> {
    train_with(log, taxonomy, config, None)
}

pub fn train_with(
    log: &TransactionLog,
    taxonomy: &Taxonomy,
    config: &ModelConfig,
    validator: Option<&Validator<'_>>,
) -> Result<TrainOutcome, TrainError> {
    config.validate(taxonomy)?;
    let store = FactorStore::random(config.factors, log.user_count(), taxonomy.node_count(), config.seed);
    continue_training(store, log, taxonomy, config, validator)
}

/// Runs `config.epochs` epochs starting from `store`.
pub fn continue_training(
    mut store: FactorStore,
    log: &TransactionLog,
    taxonomy: &Taxonomy,
    config: &ModelConfig,
    validator: Option<&Validator<'_>>,
) -> Result<TrainOutcome, TrainError> {
    config.validate(taxonomy)?;
    if store.user_count() < log.user_count() {
        return Err(TrainError::UserMismatch { log_users: log.user_count(), store_users: store.user_count() });
    }
    let view = taxonomy.restrict_levels(config.taxonomy_update_levels).map_err(ConfigError::from)?;
    let decay = config.decay();
    let mut sampler = TupleSampler::new(log, view, config.sibling_mix, derive_seed(config.seed, "sampler"))?;
    let per_epoch = log.triple_count();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut c_sum = 0.0;
        for step in 0..per_epoch {
            let tuple = sampler.next().expect("sampler stream is infinite");
            let plan = StepPlan::new(&tuple, &view, log, &decay);
            let grads = compute_gradients(&plan.gather_from(&store), config.lambda);
            if !grads.is_finite() {
                return Err(TrainError::Diverged { epoch, step, tuple: Some(tuple) });
            }
            c_sum += grads.c;
            apply_updates(&plan, &grads, config.epsilon, &mut store);
        }
        if let Some((matrix, row)) = store.first_non_finite() {
            return Err(TrainError::NonFiniteRow { epoch, matrix, row });
        }
        let val_auc = validator.map(|v| v(&store));
        let stats = EpochStats {
            epoch,
            mean_c: c_sum / per_epoch as f64,
            val_auc,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {epoch}: mean_c={:.4} val_auc={:?}", stats.mean_c, stats.val_auc);
        epochs.push(stats);
    }
    Ok(TrainOutcome { store, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{affinity, DecayWeights};
    use crate::io::transactions::Basket;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1.0) - 0.7310585786300049).abs() < 1e-10);
        for z in [1.0, 10.0, 100.0, -1.0, -10.0, -100.0] {
            assert!((sigmoid(z) - (1.0 - sigmoid(-z))).abs() < 1e-15);
        }
        assert!(sigmoid(700.0) <= 1.0 && sigmoid(-700.0) > 0.0);
        assert!(sigmoid(-700.0).is_finite());
        let zs: Vec<f64> = (-50..=50).map(|i| i as f64 * 0.7).collect();
        assert!(zs.windows(2).all(|w| sigmoid(w[0]) <= sigmoid(w[1])));
    }

    fn tiny() -> (Taxonomy, TransactionLog) {
        let tax = Taxonomy::parse("0\t-1\tr\n1\t0\ta\n2\t0\tb\n".as_bytes()).unwrap();
        let log = TransactionLog::from_users(vec![vec![Basket::new(vec![1]).unwrap()]]);
        (tax, log)
    }

    #[test]
    fn learns_the_only_preference() {
        let (tax, log) = tiny();
        let cfg = ModelConfig { factors: 4, epochs: 200, ..ModelConfig::tf(&tax, 0) };
        let out = train(&log, &tax, &cfg).unwrap();
        let view = tax.full_view();
        let d = DecayWeights::new(1.0, 0);
        assert!(affinity(&out.store, &view, &d, 0, 1, &[]) > affinity(&out.store, &view, &d, 0, 2, &[]));
        assert_eq!(out.epochs.len(), 200);
        assert!(out.epochs.last().unwrap().mean_c < out.epochs[0].mean_c);
    }

    #[test]
    fn single_thread_is_deterministic() {
        let (tax, log) = tiny();
        let cfg = ModelConfig { factors: 3, epochs: 5, sibling_mix: 0.5, ..ModelConfig::tf(&tax, 0) };
        let a = train(&log, &tax, &cfg).unwrap().store;
        let b = train(&log, &tax, &cfg).unwrap().store;
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_aborts() {
        let (tax, log) = tiny();
        let cfg = ModelConfig { factors: 2, epochs: 50, lambda: 1e6, ..ModelConfig::mf(0) };
        let err = train(&log, &tax, &cfg).unwrap_err();
        assert!(matches!(err, TrainError::Diverged { .. } | TrainError::NonFiniteRow { .. }), "{err}");
    }

    #[test]
    fn config_validation() {
        let (tax, _) = tiny();
        assert!(ModelConfig::default().validate(&tax).is_ok());
        let bad = ModelConfig { taxonomy_update_levels: 3, ..Default::default() };
        assert!(matches!(bad.validate(&tax), Err(ConfigError::Levels(_))));
        let bad = ModelConfig { sibling_mix: 1.5, ..Default::default() };
        assert!(bad.validate(&tax).is_err());
        let bad = ModelConfig { epsilon: 0.0, ..Default::default() };
        assert!(bad.validate(&tax).is_err());
    }

    #[test]
    fn diagnostics_csv_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("diag.csv");
        let s = EpochStats { epoch: 0, mean_c: 0.5, val_auc: Some(0.7), wall_seconds: 0.1 };
        append_diagnostics(&path, std::slice::from_ref(&s)).unwrap();
        append_diagnostics(&path, &[EpochStats { epoch: 1, val_auc: None, ..s }]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,mean_c,val_auc,wall_seconds");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,0.5,,"));
    }
}
