//! Multi-threaded training over a shared, row-locked factor store.
//!
//! Each step reads its rows under read locks, computes the gradient without
//! holding any lock, then writes under write locks. Locks are always taken in
//! ascending `(matrix, row)` order. Internal-node offset rows (level >= 1)
//! are heavily contended, so each thread accumulates their deltas locally
//! and flushes a row once its pending delta exceeds the cache threshold (in
//! max-norm) and at the end of every epoch. Reads always see the global copy.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use parking_lot::RwLock;

use crate::factors::{FactorStore, Matrix};
use crate::io::transactions::TransactionLog;
use crate::sampler::TupleSampler;
use crate::seed::derive_seed;
use crate::taxonomy::{LevelView, Taxonomy};

use super::gradient::{compute_gradients, for_each_update, StepPlan};
use super::{ConfigError, EpochStats, ModelConfig, TrainError, TrainOutcome, Validator};

struct SharedStore {
    k: usize,
    rows: [Vec<RwLock<Vec<f64>>>; 3],
}

impl SharedStore {
    fn from_store(store: &FactorStore) -> Self {
        let k = store.k();
        let split = |m: Matrix| store.matrix(m).chunks(k).map(|r| RwLock::new(r.to_vec())).collect();
        SharedStore { k, rows: [split(Matrix::User), split(Matrix::Item), split(Matrix::Next)] }
    }

    fn to_store(&self) -> FactorStore {
        let join = |m: Matrix| self.rows[m as usize].iter().flat_map(|r| r.read().clone()).collect();
        FactorStore::from_parts(self.k, join(Matrix::User), join(Matrix::Item), join(Matrix::Next))
    }

    fn lock(&self, m: Matrix, row: usize) -> &RwLock<Vec<f64>> {
        &self.rows[m as usize][row]
    }

    fn add(&self, m: Matrix, row: usize, delta: &[f64]) {
        let mut guard = self.lock(m, row).write();
        for (w, d) in guard.iter_mut().zip(delta) {
            *w += d;
        }
    }
}

/// Thread-local pending deltas for internal-node rows, stored densely per
/// matrix so the hot path never allocates.
struct RowCache {
    threshold: f64,
    k: usize,
    item: Vec<f64>,
    next: Vec<f64>,
    dirty: Vec<(Matrix, usize)>,
    is_dirty: [Vec<bool>; 2],
}

impl RowCache {
    fn new(threshold: f64, k: usize, node_count: usize) -> Self {
        RowCache {
            threshold,
            k,
            item: vec![0.0; k * node_count],
            next: vec![0.0; k * node_count],
            dirty: Vec::new(),
            is_dirty: [vec![false; node_count], vec![false; node_count]],
        }
    }

    fn slot(&mut self, m: Matrix) -> (&mut Vec<f64>, &mut Vec<bool>) {
        match m {
            Matrix::Item => (&mut self.item, &mut self.is_dirty[0]),
            Matrix::Next => (&mut self.next, &mut self.is_dirty[1]),
            Matrix::User => unreachable!("user rows are never cached"),
        }
    }

    /// Adds `scale * grad` to the pending delta of `key`, flushing the row
    /// once its max-norm exceeds the threshold.
    fn add(&mut self, shared: &SharedStore, key: (Matrix, usize), scale: f64, grad: &[f64]) {
        let (k, threshold) = (self.k, self.threshold);
        let (deltas, flags) = self.slot(key.0);
        let row = &mut deltas[key.1 * k..(key.1 + 1) * k];
        let mut max = 0.0f64;
        for (p, g) in row.iter_mut().zip(grad) {
            *p += scale * g;
            max = max.max(p.abs());
        }
        if max > threshold {
            shared.add(key.0, key.1, row);
            row.fill(0.0);
            flags[key.1] = false;
        } else if !flags[key.1] {
            flags[key.1] = true;
            self.dirty.push(key);
        }
    }

    fn flush(&mut self, shared: &SharedStore) {
        let mut keys = std::mem::take(&mut self.dirty);
        keys.sort_unstable();
        let k = self.k;
        for key in keys {
            let (deltas, flags) = self.slot(key.0);
            if flags[key.1] {
                let row = &mut deltas[key.1 * k..(key.1 + 1) * k];
                shared.add(key.0, key.1, row);
                row.fill(0.0);
                flags[key.1] = false;
            }
        }
    }
}

struct WorkerReport {
    c_sum: f64,
    steps: usize,
    diverged: Option<usize>,
}

#[allow(clippy::too_many_arguments)]
fn run_worker(
    shared: &SharedStore,
    sampler: &mut TupleSampler<'_>,
    view: &LevelView<'_>,
    log: &TransactionLog,
    config: &ModelConfig,
    steps: usize,
    stop: &AtomicBool,
    counter: &AtomicUsize,
) -> WorkerReport {
    let tax = view.taxonomy();
    let decay = config.decay();
    let caching = config.cache_threshold > 0.0;
    let cached = |m: Matrix, row: usize| caching && m != Matrix::User && tax.level(row) >= 1;
    let mut cache = RowCache::new(config.cache_threshold, shared.k, tax.node_count());
    let mut c_sum = 0.0;
    for step in 0..steps {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        let tuple = sampler.next().expect("sampler stream is infinite");
        let plan = StepPlan::new(&tuple, view, log, &decay);
        let keys = plan.rows();
        let grads = {
            let guards: Vec<_> = keys.iter().map(|&(m, r)| shared.lock(m, r).read()).collect();
            let factors = plan.gather(shared.k, |m, r| {
                let idx = keys.binary_search(&(m, r)).expect("row in plan");
                guards[idx].as_slice()
            });
            compute_gradients(&factors, config.lambda)
        };
        if !grads.is_finite() {
            stop.store(true, Ordering::Relaxed);
            cache.flush(shared);
            return WorkerReport { c_sum, steps: step, diverged: Some(step) };
        }
        c_sum += grads.c;

        {
            let direct: Vec<(Matrix, usize)> = keys.iter().copied().filter(|&(m, r)| !cached(m, r)).collect();
            let mut guards: Vec<_> = direct.iter().map(|&(m, r)| shared.lock(m, r).write()).collect();
            for_each_update(&plan, &grads, |m, row, g| {
                if let Ok(idx) = direct.binary_search(&(m, row)) {
                    for (w, d) in guards[idx].iter_mut().zip(g) {
                        *w += config.epsilon * d;
                    }
                }
            });
        }
        if caching {
            for_each_update(&plan, &grads, |m, row, g| {
                if cached(m, row) {
                    cache.add(shared, (m, row), config.epsilon, g);
                }
            });
        }
        counter.fetch_add(1, Ordering::Relaxed);
    }
    cache.flush(shared);
    WorkerReport { c_sum, steps, diverged: None }
}

/// Multi-threaded training. Results depend on thread interleaving but are
/// statistically equivalent to [`super::train`].
pub fn train_parallel(
    log: &TransactionLog,
    taxonomy: &Taxonomy,
    config: &ModelConfig,
    validator: Option<&Validator<'_>>,
) -> Result<TrainOutcome, TrainError> {
    config.validate(taxonomy)?;
    let init = FactorStore::random(config.factors, log.user_count(), taxonomy.node_count(), config.seed);
    continue_training_parallel(init, log, taxonomy, config, validator)
}

/// Multi-threaded counterpart of [`super::continue_training`].
pub fn continue_training_parallel(
    init: FactorStore,
    log: &TransactionLog,
    taxonomy: &Taxonomy,
    config: &ModelConfig,
    validator: Option<&Validator<'_>>,
) -> Result<TrainOutcome, TrainError> {
    config.validate(taxonomy)?;
    if init.user_count() < log.user_count() {
        return Err(TrainError::UserMismatch { log_users: log.user_count(), store_users: init.user_count() });
    }
    let view = taxonomy.restrict_levels(config.taxonomy_update_levels).map_err(ConfigError::from)?;
    let shared = SharedStore::from_store(&init);
    drop(init);
    let threads = config.threads.max(1);
    let base = derive_seed(config.seed, "sampler");
    let mut samplers = (0..threads)
        .map(|t| TupleSampler::new(log, view, config.sibling_mix, base ^ t as u64))
        .collect::<Result<Vec<_>, _>>()?;
    let per_epoch = log.triple_count();
    let stop = AtomicBool::new(false);
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let counter = AtomicUsize::new(0);
        let reports: Vec<WorkerReport> = std::thread::scope(|scope| {
            let handles: Vec<_> = samplers
                .iter_mut()
                .enumerate()
                .map(|(t, sampler)| {
                    let steps = per_epoch / threads + usize::from(t < per_epoch % threads);
                    let (shared, view, stop, counter) = (&shared, &view, &stop, &counter);
                    scope.spawn(move || run_worker(shared, sampler, view, log, config, steps, stop, counter))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
        });
        if let Some(step) = reports.iter().find_map(|r| r.diverged) {
            return Err(TrainError::Diverged { epoch, step, tuple: None });
        }
        let store = shared.to_store();
        if let Some((matrix, row)) = store.first_non_finite() {
            return Err(TrainError::NonFiniteRow { epoch, matrix, row });
        }
        let steps: usize = reports.iter().map(|r| r.steps).sum();
        let c_sum: f64 = reports.iter().map(|r| r.c_sum).sum();
        debug_assert_eq!(steps, counter.load(Ordering::Relaxed));
        epochs.push(EpochStats {
            epoch,
            mean_c: c_sum / steps.max(1) as f64,
            val_auc: validator.map(|v| v(&store)),
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome { store: shared.to_store(), epochs })
}
