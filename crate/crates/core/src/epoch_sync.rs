//! End of epoch: UTXO consolidation, state blocks and the hand-over to the
//! next assignment.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::codec::{Decode, DecodeError, Encode};
use crate::crypto::{
    cosign, cosign_verify, derive_seed, majority_threshold, pow_solve, pow_verify, CosignError,
    KeyPair, PublicKey, Seed,
};
use crate::score::Score;
use crate::types::{Epoch, Hash32, ShardId, StateBlock, Utxo, UtxoState, ValidatorId};

/// Merges every owner's UTXOs into one, kept at the smallest address.
/// Entries that are not unspent are dropped. Output is sorted by address.
pub fn consolidate_utxos<I: IntoIterator<Item = Utxo>>(utxos: I) -> Vec<Utxo> {
    let mut by_owner: BTreeMap<PublicKey, Utxo> = BTreeMap::new();
    for u in utxos.into_iter().filter(|u| u.state == UtxoState::Unspent) {
        match by_owner.get_mut(&u.owner) {
            None => {
                by_owner.insert(u.owner, u);
            }
            Some(kept) => {
                let total = kept.value + u.value;
                if u.address < kept.address {
                    *kept = u;
                }
                kept.value = total;
            }
        }
    }
    let mut out: Vec<Utxo> = by_owner.into_values().collect();
    out.sort_by_key(|a| a.address);
    out
}

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("collective signature failed: {0}")]
    Cosign(#[from] CosignError),
    #[error("only {got} of {m} members signed the state block")]
    NoMajority { got: usize, m: usize },
    #[error("state block for {shard} epoch {epoch} does not verify")]
    Invalid { epoch: Epoch, shard: ShardId },
    #[error("expected {expected} state blocks, got {got}")]
    Missing { expected: usize, got: usize },
    #[error("state block {index} is for {shard}, epoch {epoch}")]
    OutOfPlace {
        index: usize,
        shard: ShardId,
        epoch: Epoch,
    },
    #[error("{0} is scored by more than one shard")]
    DuplicateScore(ValidatorId),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Consolidates, cosigns the body with `signers` (roster index, keys) and
/// grinds the nonce over the signed body.
pub fn build_state_block(
    epoch: Epoch,
    shard: ShardId,
    cumulative_scores: BTreeMap<ValidatorId, Score>,
    utxos: impl IntoIterator<Item = Utxo>,
    roster: &[PublicKey],
    signers: &[(usize, &KeyPair)],
    difficulty_bits: u32,
) -> Result<StateBlock, SyncError> {
    let mut sb = StateBlock {
        epoch,
        shard,
        cumulative_scores,
        utxo_set: consolidate_utxos(utxos),
        cosig: crate::crypto::CollectiveSignature::unsigned(roster.len()),
        pow_nonce: 0,
    };
    if signers.len() < majority_threshold(roster.len()) {
        return Err(SyncError::NoMajority {
            got: signers.len(),
            m: roster.len(),
        });
    }
    sb.cosig = cosign(roster, signers, &sb.body_bytes())?;
    sb.pow_nonce = pow_solve(&sb.sealed_hash(), difficulty_bits);
    Ok(sb)
}

pub fn verify_state_block(sb: &StateBlock, roster: &[PublicKey], difficulty_bits: u32) -> bool {
    cosign_verify(
        roster,
        &sb.body_bytes(),
        &sb.cosig,
        majority_threshold(roster.len()),
    ) && pow_verify(&sb.sealed_hash(), sb.pow_nonce, difficulty_bits)
        && sb.one_utxo_per_owner()
        && sb.utxo_set.windows(2).all(|w| w[0].address < w[1].address)
}

/// What every validator holds after the barrier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalEpochState {
    pub epoch: Epoch,
    pub scores: BTreeMap<ValidatorId, Score>,
    pub sb_hashes: Vec<Hash32>,
    /// Seed for the next epoch's assignment.
    pub seed: Seed,
}

pub fn next_seed_label(epoch: Epoch) -> String {
    format!("epoch/{}", epoch + 1)
}

/// Checks one SB per shard, in shard order, and assembles the global score
/// map and the next seed.
pub fn synchronize(
    epoch: Epoch,
    sbs: &[StateBlock],
    rosters: &[Vec<PublicKey>],
    difficulty_bits: u32,
) -> Result<GlobalEpochState, SyncError> {
    if sbs.len() != rosters.len() || sbs.is_empty() {
        return Err(SyncError::Missing {
            expected: rosters.len(),
            got: sbs.len(),
        });
    }
    let mut scores = BTreeMap::new();
    for (i, (sb, roster)) in sbs.iter().zip(rosters).enumerate() {
        if sb.shard != ShardId(i as u32) || sb.epoch != epoch {
            return Err(SyncError::OutOfPlace {
                index: i,
                shard: sb.shard,
                epoch: sb.epoch,
            });
        }
        if !verify_state_block(sb, roster, difficulty_bits) {
            return Err(SyncError::Invalid {
                epoch,
                shard: sb.shard,
            });
        }
        for (&v, &s) in &sb.cumulative_scores {
            if scores.insert(v, s).is_some() {
                return Err(SyncError::DuplicateScore(v));
            }
        }
    }
    let sb_hashes: Vec<Hash32> = sbs.iter().map(StateBlock::hash).collect();
    let seed = derive_seed(&sb_hashes, &next_seed_label(epoch));
    Ok(GlobalEpochState {
        epoch,
        scores,
        sb_hashes,
        seed,
    })
}

pub fn state_block_path(dir: &Path, epoch: Epoch, shard: ShardId) -> PathBuf {
    dir.join(format!("sb-{epoch:06}-{:03}.bin", shard.0))
}

pub fn save_state_block(dir: &Path, sb: &StateBlock) -> Result<PathBuf, SyncError> {
    fs::create_dir_all(dir)?;
    let path = state_block_path(dir, sb.epoch, sb.shard);
    fs::write(&path, sb.encode())?;
    Ok(path)
}

pub fn load_state_block(dir: &Path, epoch: Epoch, shard: ShardId) -> Result<StateBlock, SyncError> {
    let bytes = fs::read(state_block_path(dir, epoch, shard))?;
    Ok(StateBlock::decode(&bytes)?)
}
