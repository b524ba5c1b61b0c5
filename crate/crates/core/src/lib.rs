//! Protocol core for a reputation-based sharded blockchain.
//!
//! The crate is organised around the life of an epoch:
//!
//! - [`types`] and [`codec`]: the double-chain data structures and their
//!   canonical byte encoding.
//! - [`crypto`]: hashing, signatures, collective signing, proof-of-work and
//!   the seeded generator that drives sharding.
//! - [`assignment`]: reputation-ordered sharding and leader selection.
//! - [`consensus`]: the five-step intra-shard protocol with warnings and
//!   rolling.
//! - [`cross_shard`]: UTXO locking and proof-of-accept exchange between
//!   input and output shards.
//! - [`reputation`]: score arithmetic, rolling penalties and fee rewards.
//! - [`epoch_sync`]: state blocks, UTXO consolidation and epoch transition.

pub mod assignment;
pub mod codec;
pub mod consensus;
pub mod cross_shard;
pub mod crypto;
pub mod epoch_sync;
pub mod reputation;
pub mod score;
pub mod types;

pub use score::{Amount, Score};
pub use types::{
    Address, Decision, Epoch, Hash32, ShardId, Tick, Transaction, TxDec, TxDecSet, TxId, TxList,
    Utxo, UtxoState, ValidatorId,
};
