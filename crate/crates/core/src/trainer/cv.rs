//! Grid search over regularization strength and factor count, scored by AUC
//! on each user's last training baskets.

use thiserror::Error;

use crate::eval::{filter_repeats, hold_out_last, holdout_auc};
use crate::io::transactions::TransactionLog;
use crate::taxonomy::Taxonomy;

use super::{train, ModelConfig, TrainError};

#[derive(Debug, Error)]
pub enum CvError {
    #[error("the hyperparameter grid is empty")]
    EmptyGrid,
    #[error("no user has enough transactions to form a validation slice")]
    EmptyValidation,
    #[error("every grid point failed to train; last error: {0}")]
    AllFailed(TrainError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub lambda: f64,
    pub factors: usize,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub best: ModelConfig,
    pub best_auc: f64,
    /// Validation AUC per grid point in grid order; `None` where training
    /// diverged.
    pub scores: Vec<(GridPoint, Option<f64>)>,
}

/// Every combination of lambda in {0.001, 0.01, 0.1} and K in {10, ..., 50}.
pub fn default_grid() -> Vec<GridPoint> {
    let mut grid = Vec::new();
    for lambda in [0.001, 0.01, 0.1] {
        for factors in [10, 20, 30, 40, 50] {
            grid.push(GridPoint { lambda, factors });
        }
    }
    grid
}

fn better(auc: f64, p: GridPoint, best_auc: f64, best: GridPoint) -> bool {
    auc > best_auc
        || (auc == best_auc && (p.lambda < best.lambda || (p.lambda == best.lambda && p.factors < best.factors)))
}

/// Trains `base` at every grid point on `log` minus each user's last
/// `holdout` baskets and returns the configuration with the highest AUC on
/// those baskets. Ties go to the smaller lambda, then the smaller K, then the
/// earlier grid point.
pub fn cross_validate(
    log: &TransactionLog,
    taxonomy: &Taxonomy,
    base: &ModelConfig,
    grid: &[GridPoint],
    holdout: usize,
) -> Result<CvOutcome, CvError> {
    if grid.is_empty() {
        return Err(CvError::EmptyGrid);
    }
    let (fit, held) = hold_out_last(log, holdout.max(1));
    let held = filter_repeats(&held, &fit);
    if held.is_empty() {
        return Err(CvError::EmptyValidation);
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(GridPoint, f64)> = None;
    let mut last_err = None;
    for &point in grid {
        let config = ModelConfig { lambda: point.lambda, factors: point.factors, ..base.clone() };
        match train(&fit, taxonomy, &config) {
            Ok(out) => {
                let auc = holdout_auc(&out.store, taxonomy, &config, &fit, &held);
                log::info!("cv lambda={} K={}: auc={auc:.4}", point.lambda, point.factors);
                if auc.is_finite() && best.is_none_or(|(bp, ba)| better(auc, point, ba, bp)) {
                    best = Some((point, auc));
                }
                scores.push((point, Some(auc)));
            }
            Err(e) => {
                log::warn!("cv lambda={} K={}: {e}", point.lambda, point.factors);
                scores.push((point, None));
                last_err = Some(e);
            }
        }
    }
    match best {
        Some((p, auc)) => Ok(CvOutcome {
            best: ModelConfig { lambda: p.lambda, factors: p.factors, ..base.clone() },
            best_auc: auc,
            scores,
        }),
        None => Err(last_err.map_or(CvError::EmptyValidation, CvError::AllFailed)),
    }
}
