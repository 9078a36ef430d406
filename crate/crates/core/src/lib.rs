//! Taxonomy-aware temporal latent factor model for implicit-feedback
//! purchase prediction.

pub mod cli;
pub mod error;
pub mod eval;
pub mod factors;
pub mod io;
pub mod ranker;
pub mod sampler;
pub mod seed;
pub mod taxonomy;
pub mod trainer;

pub use error::DataError;
pub use factors::{affinity, DecayWeights, FactorKind, FactorStore, Matrix, ScoringModel};
pub use io::transactions::{Basket, TransactionLog, UserId};
pub use taxonomy::{LevelView, NodeId, Taxonomy, TaxonomyError};
