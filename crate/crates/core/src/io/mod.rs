//! Data ingestion, checkpoints and the synthetic corpus generator.

pub mod checkpoint;
pub mod synth;
pub mod transactions;
