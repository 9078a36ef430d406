//! Binary model checkpoints.
//!
//! Layout, all little-endian: magic `TFM1`, format version (u32), K (u32),
//! user count (u64), node count (u64), taxonomy update levels (u32), Markov
//! order (u32), then the user, item-offset and next-offset matrices as
//! row-major f32, then the first 8 bytes of the SHA-256 digest of everything
//! before it.

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::factors::{FactorStore, Matrix};
use crate::taxonomy::Taxonomy;

pub const MAGIC: &[u8; 4] = b"TFM1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8 + 4 + 4;
const CHECKSUM_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is truncated or has trailing bytes")]
    Length,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint has {found} {what} but {expected} were expected")]
    Dimension { what: &'static str, found: usize, expected: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A stored model together with the structural settings it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub store: FactorStore,
    pub taxonomy_update_levels: usize,
    pub max_prev_transactions: usize,
}

fn checksum(bytes: &[u8]) -> [u8; CHECKSUM_LEN] {
    let digest = Sha256::digest(bytes);
    digest[..CHECKSUM_LEN].try_into().expect("digest longer than checksum")
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let s = &ckpt.store;
    let floats = s.matrix(Matrix::User).len() + 2 * s.matrix(Matrix::Item).len();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * floats + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(s.k() as u32).to_le_bytes());
    out.extend_from_slice(&(s.user_count() as u64).to_le_bytes());
    out.extend_from_slice(&(s.node_count() as u64).to_le_bytes());
    out.extend_from_slice(&(ckpt.taxonomy_update_levels as u32).to_le_bytes());
    out.extend_from_slice(&(ckpt.max_prev_transactions as u32).to_le_bytes());
    for m in [Matrix::User, Matrix::Item, Matrix::Next] {
        for &v in s.matrix(m) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum);
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err(if bytes.starts_with(MAGIC) { CheckpointError::Length } else { CheckpointError::Magic });
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let k = u32_at(bytes, 8) as usize;
    let users = u64_at(bytes, 12) as usize;
    let nodes = u64_at(bytes, 20) as usize;
    let levels = u32_at(bytes, 28) as usize;
    let order = u32_at(bytes, 32) as usize;
    let floats = k.checked_mul(users + 2 * nodes).ok_or(CheckpointError::Length)?;
    if bytes.len() != HEADER_LEN + 4 * floats + CHECKSUM_LEN {
        return Err(CheckpointError::Length);
    }
    let (payload, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if checksum(payload) != sum {
        return Err(CheckpointError::Checksum);
    }
    let mut values = payload[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
    let u = take(k * users);
    let item = take(k * nodes);
    let next = take(k * nodes);
    Ok(Checkpoint {
        store: FactorStore::from_parts(k, u, item, next),
        taxonomy_update_levels: levels,
        max_prev_transactions: order,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(ckpt))?;
    Ok(())
}

/// Loads a checkpoint and checks it against the taxonomy it will be used with.
pub fn load_checkpoint(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Checkpoint, CheckpointError> {
    let ckpt = decode(&std::fs::read(path)?)?;
    if ckpt.store.node_count() != taxonomy.node_count() {
        return Err(CheckpointError::Dimension {
            what: "taxonomy nodes",
            found: ckpt.store.node_count(),
            expected: taxonomy.node_count(),
        });
    }
    if ckpt.taxonomy_update_levels == 0 || ckpt.taxonomy_update_levels > taxonomy.depth() + 1 {
        return Err(CheckpointError::Dimension {
            what: "taxonomy levels",
            found: ckpt.taxonomy_update_levels,
            expected: taxonomy.depth() + 1,
        });
    }
    Ok(ckpt)
}
