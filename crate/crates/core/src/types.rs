//! Chain data structures: UTXOs, transactions, the consensus messages and
//! the three block kinds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Decode, DecodeError, Encode, Reader};
use crate::crypto::{verify, CollectiveSignature, Hasher, PublicKey, Signature};
use crate::score::Score;

pub use crate::crypto::Hash32;

pub type Epoch = u64;
pub type Tick = u64;
pub type Iteration = u64;

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ValidatorId(pub u32);

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ShardId(pub u32);

impl ShardId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Display for ShardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TxId(pub Hash32);

impl TxId {
    /// Responsible shard: the id's low 64 bits modulo `k`.
    pub fn shard(&self, k: u32) -> ShardId {
        ShardId((self.0.low_u64() % k as u64) as u32)
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_hex()[..16])
    }
}

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Address(pub Hash32);

macro_rules! newtype_codec {
    ($($ty:ident($inner:ty)),*) => {$(
        impl Encode for $ty {
            fn encode_to(&self, out: &mut Vec<u8>) {
                self.0.encode_to(out);
            }
        }
        impl Decode for $ty {
            fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
                Ok($ty(<$inner>::decode_from(input)?))
            }
        }
    )*};
}

newtype_codec!(ValidatorId(u32), ShardId(u32), TxId(Hash32), Address(Hash32));

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtxoState {
    #[default]
    Unspent,
    Locked,
    Spent,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("illegal UTXO transition {from:?} -> {to:?}")]
pub struct UtxoTransitionError {
    pub from: UtxoState,
    pub to: UtxoState,
}

impl UtxoState {
    /// Checks a transition against the allowed graph:
    /// unspent→locked, locked→unspent, locked→spent, unspent→spent.
    pub fn transition(self, to: UtxoState) -> Result<UtxoState, UtxoTransitionError> {
        use UtxoState::*;
        match (self, to) {
            (Unspent, Locked) | (Locked, Unspent) | (Locked, Spent) | (Unspent, Spent) => Ok(to),
            (from, to) => Err(UtxoTransitionError { from, to }),
        }
    }

    fn tag(self) -> u8 {
        match self {
            UtxoState::Unspent => 0,
            UtxoState::Locked => 1,
            UtxoState::Spent => 2,
        }
    }
}

impl Encode for UtxoState {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.push(self.tag());
    }
}

impl Decode for UtxoState {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match u8::decode_from(input)? {
            0 => Ok(UtxoState::Unspent),
            1 => Ok(UtxoState::Locked),
            2 => Ok(UtxoState::Spent),
            tag => Err(DecodeError::InvalidTag { what: "utxo state", tag }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utxo {
    pub address: Address,
    pub owner: PublicKey,
    pub value: u64,
    pub origin_tx: TxId,
    pub state: UtxoState,
}

crate::struct_codec!(Utxo { address, owner, value, origin_tx, state });

impl Utxo {
    /// The shard holding this UTXO: its origin transaction's shard.
    pub fn shard(&self, k: u32) -> ShardId {
        self.origin_tx.shard(k)
    }

    pub fn lock(&mut self) -> Result<(), UtxoTransitionError> {
        self.state = self.state.transition(UtxoState::Locked)?;
        Ok(())
    }

    pub fn release(&mut self) -> Result<(), UtxoTransitionError> {
        self.state = self.state.transition(UtxoState::Unspent)?;
        Ok(())
    }

    pub fn spend(&mut self) -> Result<(), UtxoTransitionError> {
        self.state = self.state.transition(UtxoState::Spent)?;
        Ok(())
    }
}

/// Reference to a UTXO being spent, with the owner's signature over the
/// transaction's signing digest.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TxInput {
    pub address: Address,
    pub origin_tx: TxId,
    pub value: u64,
    pub owner: PublicKey,
    pub signature: Signature,
}

crate::struct_codec!(TxInput { address, origin_tx, value, owner, signature });

impl TxInput {
    pub fn shard(&self, k: u32) -> ShardId {
        self.origin_tx.shard(k)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TxOutput {
    pub owner: PublicKey,
    pub value: u64,
}

crate::struct_codec!(TxOutput { owner, value });

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub inputs: Vec<TxInput>,
    pub outputs: Vec<TxOutput>,
    pub fee: u64,
    pub submit_time: Tick,
}

impl Default for Transaction {
    fn default() -> Self {
        Transaction::new(Vec::new(), Vec::new(), 0, 0)
    }
}

impl Transaction {
    pub fn new(inputs: Vec<TxInput>, outputs: Vec<TxOutput>, fee: u64, submit_time: Tick) -> Self {
        let id = tx_id(&inputs, &outputs, fee);
        Transaction {
            id,
            inputs,
            outputs,
            fee,
            submit_time,
        }
    }

    /// Bytes each input owner signs: the input references, outputs and fee.
    pub fn signing_digest(inputs: &[TxInput], outputs: &[TxOutput], fee: u64) -> Hash32 {
        let mut refs = Vec::new();
        for i in inputs {
            i.address.encode_to(&mut refs);
            i.origin_tx.encode_to(&mut refs);
            i.value.encode_to(&mut refs);
            i.owner.encode_to(&mut refs);
        }
        let mut h = Hasher::new("repchain/tx-sign");
        h.part(&refs).part(&outputs.to_vec().encode()).part(&fee.encode());
        h.finish()
    }

    pub fn input_total(&self) -> Option<u64> {
        self.inputs.iter().try_fold(0u64, |acc, i| acc.checked_add(i.value))
    }

    pub fn output_total(&self) -> Option<u64> {
        self.outputs.iter().try_fold(0u64, |acc, o| acc.checked_add(o.value))
    }

    /// The UTXOs created when this transaction commits.
    pub fn output_utxos(&self) -> Vec<Utxo> {
        self.outputs
            .iter()
            .enumerate()
            .map(|(i, o)| Utxo {
                address: output_address(self.id, i as u32),
                owner: o.owner,
                value: o.value,
                origin_tx: self.id,
                state: UtxoState::Unspent,
            })
            .collect()
    }

    /// Distinct shards holding this transaction's inputs.
    pub fn input_shards(&self, k: u32) -> BTreeSet<ShardId> {
        self.inputs.iter().map(|i| i.shard(k)).collect()
    }

    pub fn output_shard(&self, k: u32) -> ShardId {
        self.id.shard(k)
    }

    pub fn is_cross_shard(&self, k: u32) -> bool {
        let out = self.output_shard(k);
        self.inputs.iter().any(|i| i.shard(k) != out)
    }
}

/// `hash(inputs ∥ outputs ∥ fee)` under the canonical encoding.
pub fn tx_id(inputs: &[TxInput], outputs: &[TxOutput], fee: u64) -> TxId {
    let mut h = Hasher::new("repchain/tx");
    h.part(&inputs.to_vec().encode())
        .part(&outputs.to_vec().encode())
        .part(&fee.encode());
    TxId(h.finish())
}

pub fn output_address(tx: TxId, index: u32) -> Address {
    let mut h = Hasher::new("repchain/utxo");
    h.part(tx.0.as_bytes()).part(&index.to_le_bytes());
    Address(h.finish())
}

impl Encode for Transaction {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.inputs.encode_to(out);
        self.outputs.encode_to(out);
        self.fee.encode_to(out);
        self.submit_time.encode_to(out);
    }
}

impl Decode for Transaction {
    /// The id is not on the wire; it is recomputed from the body.
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let inputs = Vec::decode_from(input)?;
        let outputs = Vec::decode_from(input)?;
        let fee = u64::decode_from(input)?;
        let submit_time = u64::decode_from(input)?;
        Ok(Transaction::new(inputs, outputs, fee, submit_time))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Yes,
    No,
    Unknown,
}

impl Encode for Decision {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.push(match self {
            Decision::Yes => 0,
            Decision::No => 1,
            Decision::Unknown => 2,
        });
    }
}

impl Decode for Decision {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match u8::decode_from(input)? {
            0 => Ok(Decision::Yes),
            1 => Ok(Decision::No),
            2 => Ok(Decision::Unknown),
            tag => Err(DecodeError::InvalidTag { what: "decision", tag }),
        }
    }
}

/// Local view of the UTXO set used when voting.
pub trait UtxoView {
    fn lookup(&self, address: &Address) -> Option<Utxo>;

    /// Whether this view is responsible for the input. Inputs held by other
    /// shards are validated there.
    fn is_local(&self, _input: &TxInput) -> bool {
        true
    }
}

impl UtxoView for BTreeMap<Address, Utxo> {
    fn lookup(&self, address: &Address) -> Option<Utxo> {
        self.get(address).cloned()
    }
}

/// Per-tick validation allowance. `None` means unlimited.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budget(Option<u64>);

impl Budget {
    pub const UNLIMITED: Budget = Budget(None);

    pub fn unlimited() -> Self {
        Budget(None)
    }

    pub fn new(validations: u64) -> Self {
        Budget(Some(validations))
    }

    pub fn remaining(&self) -> Option<u64> {
        self.0
    }

    /// Consumes one validation if any is left.
    pub fn take(&mut self) -> bool {
        match &mut self.0 {
            None => true,
            Some(0) => false,
            Some(n) => {
                *n -= 1;
                true
            }
        }
    }
}

/// Checks that need no UTXO state: shape, id, balance, signatures.
pub fn check_tx_body(tx: &Transaction) -> bool {
    if tx.inputs.is_empty() || tx.outputs.is_empty() {
        return false;
    }
    if tx.id != tx_id(&tx.inputs, &tx.outputs, tx.fee) {
        return false;
    }
    let distinct: BTreeSet<&Address> = tx.inputs.iter().map(|i| &i.address).collect();
    if distinct.len() != tx.inputs.len() {
        return false;
    }
    let (Some(ins), Some(outs)) = (tx.input_total(), tx.output_total()) else {
        return false;
    };
    if outs.checked_add(tx.fee) != Some(ins) {
        return false;
    }
    let digest = Transaction::signing_digest(&tx.inputs, &tx.outputs, tx.fee);
    tx.inputs
        .iter()
        .all(|i| verify(&i.owner, digest.as_bytes(), &i.signature))
}

/// A validator's verdict on one transaction. Returns `Unknown` without
/// looking at the transaction when the budget is spent.
pub fn validate_tx_structure(tx: &Transaction, view: &impl UtxoView, budget: &mut Budget) -> Decision {
    validate_tx_with(tx, view, budget, &check_tx_body)
}

/// As [`validate_tx_structure`], with the state-free body check supplied
/// by the caller (typically a memo of [`check_tx_body`]).
pub fn validate_tx_with(
    tx: &Transaction,
    view: &impl UtxoView,
    budget: &mut Budget,
    body_ok: &dyn Fn(&Transaction) -> bool,
) -> Decision {
    if !budget.take() {
        return Decision::Unknown;
    }
    if !body_ok(tx) {
        return Decision::No;
    }
    for input in tx.inputs.iter().filter(|i| view.is_local(i)) {
        match view.lookup(&input.address) {
            Some(u)
                if u.state == UtxoState::Unspent
                    && u.owner == input.owner
                    && u.value == input.value
                    && u.origin_tx == input.origin_tx => {}
            _ => return Decision::No,
        }
    }
    Decision::Yes
}

/// Signature payload helper: canonical bytes of a message without its
/// trailing signature field.
fn signed_bytes(parts: &[&dyn Encode]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in parts {
        p.encode_to(&mut out);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TxList {
    pub epoch: Epoch,
    pub iteration: Iteration,
    pub shard: ShardId,
    pub tx_hashes: Vec<TxId>,
    pub leader_sig: Signature,
}

crate::struct_codec!(TxList { epoch, iteration, shard, tx_hashes, leader_sig });

impl TxList {
    pub fn signing_bytes(&self) -> Vec<u8> {
        signed_bytes(&[&self.epoch, &self.iteration, &self.shard, &self.tx_hashes])
    }

    pub fn is_sorted(&self) -> bool {
        self.tx_hashes.windows(2).all(|w| w[0] < w[1])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubsetSig {
    pub output_shard: ShardId,
    pub signature: Signature,
}

crate::struct_codec!(SubsetSig { output_shard, signature });

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TxDec {
    pub epoch: Epoch,
    pub iteration: Iteration,
    pub shard: ShardId,
    pub voter: ValidatorId,
    pub decisions: Vec<Decision>,
    pub signature: Signature,
    pub subset_sigs: Vec<SubsetSig>,
}

crate::struct_codec!(TxDec {
    epoch,
    iteration,
    shard,
    voter,
    decisions,
    signature,
    subset_sigs
});

/// Positions of a TxList grouped by the output shard of each transaction.
/// The cells are disjoint and cover the list.
pub fn subset_cells(tx_hashes: &[TxId], k: u32) -> BTreeMap<ShardId, Vec<usize>> {
    let mut cells: BTreeMap<ShardId, Vec<usize>> = BTreeMap::new();
    for (i, h) in tx_hashes.iter().enumerate() {
        cells.entry(h.shard(k)).or_default().push(i);
    }
    cells
}

impl TxDec {
    pub fn signing_bytes(&self) -> Vec<u8> {
        signed_bytes(&[
            &self.epoch,
            &self.iteration,
            &self.shard,
            &self.voter,
            &self.decisions,
        ])
    }

    /// Payload of the subset signature for one output-shard cell.
    pub fn subset_bytes(
        epoch: Epoch,
        iteration: Iteration,
        shard: ShardId,
        voter: ValidatorId,
        output_shard: ShardId,
        cell: &[(TxId, Decision)],
    ) -> Vec<u8> {
        let mut out = signed_bytes(&[&epoch, &iteration, &shard, &voter, &output_shard]);
        cell.to_vec().encode_to(&mut out);
        out
    }

    pub fn yes_at(&self, position: usize) -> bool {
        self.decisions.get(position) == Some(&Decision::Yes)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TxDecSet {
    pub epoch: Epoch,
    pub iteration: Iteration,
    pub shard: ShardId,
    pub decs: Vec<TxDec>,
    pub leader_sig: Signature,
}

crate::struct_codec!(TxDecSet { epoch, iteration, shard, decs, leader_sig });

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TxDecSetError {
    #[error("TxDec from {0} refers to another round")]
    ForeignRound(ValidatorId),
    #[error("two TxDecs from {0}")]
    DuplicateVoter(ValidatorId),
}

impl TxDecSet {
    pub fn signing_bytes(&self) -> Vec<u8> {
        signed_bytes(&[&self.epoch, &self.iteration, &self.shard, &self.decs])
    }

    pub fn check_invariants(&self) -> Result<(), TxDecSetError> {
        let mut seen = BTreeSet::new();
        for d in &self.decs {
            if (d.epoch, d.iteration, d.shard) != (self.epoch, self.iteration, self.shard) {
                return Err(TxDecSetError::ForeignRound(d.voter));
            }
            if !seen.insert(d.voter) {
                return Err(TxDecSetError::DuplicateVoter(d.voter));
            }
        }
        Ok(())
    }

    pub fn yes_count(&self, position: usize) -> usize {
        self.decs.iter().filter(|d| d.yes_at(position)).count()
    }

    pub fn dec_of(&self, voter: ValidatorId) -> Option<&TxDec> {
        self.decs.iter().find(|d| d.voter == voter)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransactionBlock {
    pub epoch: Epoch,
    pub iteration: Iteration,
    pub shard: ShardId,
    pub prev_tb_hash: Hash32,
    pub txs: Vec<Transaction>,
    pub leader_sig: Signature,
}

crate::struct_codec!(TransactionBlock {
    epoch,
    iteration,
    shard,
    prev_tb_hash,
    txs,
    leader_sig
});

impl TransactionBlock {
    pub fn signing_bytes(&self) -> Vec<u8> {
        signed_bytes(&[
            &self.epoch,
            &self.iteration,
            &self.shard,
            &self.prev_tb_hash,
            &self.txs,
        ])
    }

    pub fn hash(&self) -> Hash32 {
        let mut h = Hasher::new("repchain/tb");
        h.part(&self.signing_bytes());
        h.finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReputationBlock {
    pub epoch: Epoch,
    pub shard: ShardId,
    pub prev_rb_hash: Hash32,
    pub confirmed_tb_hashes: Vec<Hash32>,
    pub score_deltas: BTreeMap<ValidatorId, Score>,
    pub prev_state_block_hashes: Option<Vec<Hash32>>,
    pub cosig: CollectiveSignature,
}

crate::struct_codec!(ReputationBlock {
    epoch,
    shard,
    prev_rb_hash,
    confirmed_tb_hashes,
    score_deltas,
    prev_state_block_hashes,
    cosig
});

impl ReputationBlock {
    /// The bytes covered by the collective signature.
    pub fn body_bytes(&self) -> Vec<u8> {
        signed_bytes(&[
            &self.epoch,
            &self.shard,
            &self.prev_rb_hash,
            &self.confirmed_tb_hashes,
            &self.score_deltas,
            &self.prev_state_block_hashes,
        ])
    }

    pub fn hash(&self) -> Hash32 {
        let mut h = Hasher::new("repchain/rb");
        h.part(&self.body_bytes());
        h.finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateBlock {
    pub epoch: Epoch,
    pub shard: ShardId,
    pub cumulative_scores: BTreeMap<ValidatorId, Score>,
    /// Sorted by address, at most one entry per owner.
    pub utxo_set: Vec<Utxo>,
    pub cosig: CollectiveSignature,
    pub pow_nonce: u64,
}

crate::struct_codec!(StateBlock {
    epoch,
    shard,
    cumulative_scores,
    utxo_set,
    cosig,
    pow_nonce
});

impl StateBlock {
    pub fn body_bytes(&self) -> Vec<u8> {
        signed_bytes(&[
            &self.epoch,
            &self.shard,
            &self.cumulative_scores,
            &self.utxo_set,
        ])
    }

    /// Digest of the body plus its collective signature; the PoW input.
    pub fn sealed_hash(&self) -> Hash32 {
        let mut h = Hasher::new("repchain/sb");
        h.part(&self.body_bytes()).part(&self.cosig.encode());
        h.finish()
    }

    /// The block's identity, which also feeds the next epoch's seed.
    pub fn hash(&self) -> Hash32 {
        crate::crypto::pow_hash(&self.sealed_hash(), self.pow_nonce)
    }

    pub fn one_utxo_per_owner(&self) -> bool {
        let owners: BTreeSet<&PublicKey> = self.utxo_set.iter().map(|u| &u.owner).collect();
        owners.len() == self.utxo_set.len()
    }
}

/// JSON rendering for inspection. Carries no consensus meaning.
pub fn to_debug_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("chain types always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{KeyPair, Scheme};
    use proptest::prelude::*;

    fn key(b: u8) -> KeyPair {
        KeyPair::from_seed(Scheme::Fast, [b; 32])
    }

    fn genesis(owner: &KeyPair, value: u64, tag: u8) -> Utxo {
        Utxo {
            address: Address(Hash32([tag; 32])),
            owner: owner.public,
            value,
            origin_tx: TxId(Hash32([tag.wrapping_add(100); 32])),
            state: UtxoState::Unspent,
        }
    }

    fn spend(owner: &KeyPair, utxo: &Utxo, to: &KeyPair, fee: u64) -> Transaction {
        let mut inputs = vec![TxInput {
            address: utxo.address,
            origin_tx: utxo.origin_tx,
            value: utxo.value,
            owner: owner.public,
            signature: Signature::default(),
        }];
        let outputs = vec![TxOutput {
            owner: to.public,
            value: utxo.value - fee,
        }];
        let digest = Transaction::signing_digest(&inputs, &outputs, fee);
        inputs[0].signature = owner.sign(digest.as_bytes());
        Transaction::new(inputs, outputs, fee, 0)
    }

    // Frozen reference encoding of the all-defaults transaction: empty
    // input and output lists, zero fee, zero submit time.
    const DEFAULT_TX_BYTES: &str = "000000000000000000000000000000000000000000000000";
    const DEFAULT_TX_ID: &str =
        "0ea1d0909af43d0ddb27c5228d09552d0b5a06af7bca72f4b06006141efd02b8";

    #[test]
    fn default_transaction_golden_vector() {
        let tx = Transaction::default();
        let hex: String = tx.encode().iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, DEFAULT_TX_BYTES);
        assert_eq!(tx.id.0.to_hex(), DEFAULT_TX_ID);
    }

    #[test]
    fn tx_id_is_stable_and_value_sensitive() {
        let a = key(1);
        let u = genesis(&a, 10, 1);
        let t1 = spend(&a, &u, &key(2), 1);
        let t2 = spend(&a, &u, &key(2), 1);
        assert_eq!(t1.id, t2.id);
        let t3 = spend(&a, &u, &key(2), 2);
        assert_ne!(t1.id, t3.id);
    }

    #[test]
    fn validate_yes_no_unknown() {
        let a = key(1);
        let u = genesis(&a, 10, 1);
        let mut view = BTreeMap::new();
        view.insert(u.address, u.clone());
        let tx = spend(&a, &u, &key(2), 1);
        assert_eq!(validate_tx_structure(&tx, &view, &mut Budget::unlimited()), Decision::Yes);

        view.get_mut(&u.address).unwrap().spend().unwrap();
        assert_eq!(validate_tx_structure(&tx, &view, &mut Budget::unlimited()), Decision::No);

        let mut budget = Budget::new(0);
        assert_eq!(validate_tx_structure(&tx, &view, &mut budget), Decision::Unknown);
    }

    #[test]
    fn forged_signature_and_bad_balance_rejected() {
        let a = key(1);
        let thief = key(9);
        let u = genesis(&a, 10, 1);
        let mut view = BTreeMap::new();
        view.insert(u.address, u.clone());
        let mut tx = spend(&a, &u, &thief, 0);
        let digest = Transaction::signing_digest(&tx.inputs, &tx.outputs, tx.fee);
        tx.inputs[0].signature = thief.sign(digest.as_bytes());
        let tx = Transaction::new(tx.inputs, tx.outputs, tx.fee, 0);
        assert_eq!(validate_tx_structure(&tx, &view, &mut Budget::unlimited()), Decision::No);

        let mut unbalanced = spend(&a, &u, &thief, 0);
        unbalanced.outputs[0].value = 11;
        assert!(!check_tx_body(&unbalanced));
    }

    #[test]
    fn utxo_transitions() {
        use UtxoState::*;
        assert!(Unspent.transition(Locked).is_ok());
        assert!(Locked.transition(Unspent).is_ok());
        assert!(Locked.transition(Spent).is_ok());
        assert!(Unspent.transition(Spent).is_ok());
        assert!(Spent.transition(Unspent).is_err());
        assert!(Spent.transition(Locked).is_err());
        assert!(Locked.transition(Locked).is_err());
    }

    #[test]
    fn routing_uses_low_64_bits() {
        let mut b = [0u8; 32];
        b[31] = 17;
        assert_eq!(TxId(Hash32(b)).shard(8), ShardId(1));
        assert_eq!(TxId(Hash32(b)).shard(1), ShardId(0));
    }

    #[test]
    fn txdecset_invariants() {
        let dec = |v| TxDec {
            epoch: 1,
            iteration: 0,
            shard: ShardId(0),
            voter: ValidatorId(v),
            decisions: vec![],
            signature: Signature::default(),
            subset_sigs: vec![],
        };
        let mut set = TxDecSet {
            epoch: 1,
            iteration: 0,
            shard: ShardId(0),
            decs: vec![dec(1), dec(2)],
            leader_sig: Signature::default(),
        };
        assert!(set.check_invariants().is_ok());
        set.decs.push(dec(1));
        assert_eq!(set.check_invariants(), Err(TxDecSetError::DuplicateVoter(ValidatorId(1))));
        set.decs.pop();
        set.decs[0].iteration = 3;
        assert!(matches!(set.check_invariants(), Err(TxDecSetError::ForeignRound(_))));
    }

    #[test]
    fn subset_cells_partition() {
        let ids: Vec<TxId> = (0u8..20).map(|i| TxId(crate::crypto::sha256(&[i]))).collect();
        let cells = subset_cells(&ids, 3);
        let mut all: Vec<usize> = cells.values().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        for (s, cell) in &cells {
            assert!(cell.iter().all(|&i| ids[i].shard(3) == *s));
        }
    }

    #[test]
    fn debug_json_renders() {
        let json = to_debug_json(&Transaction::default());
        assert!(json.contains("\"fee\": 0"));
    }

    fn arb_hash() -> impl Strategy<Value = Hash32> {
        any::<[u8; 32]>().prop_map(Hash32)
    }

    fn arb_pk() -> impl Strategy<Value = PublicKey> {
        (any::<bool>(), any::<[u8; 32]>()).prop_map(|(s, bytes)| PublicKey {
            scheme: if s { Scheme::Schnorr } else { Scheme::Fast },
            bytes,
        })
    }

    fn arb_sig() -> impl Strategy<Value = Signature> {
        prop_oneof![
            any::<[u8; 32]>().prop_map(Signature::Fast),
            (any::<[u8; 32]>(), any::<[u8; 32]>()).prop_map(|(a, b)| {
                let mut s = [0u8; 64];
                s[..32].copy_from_slice(&a);
                s[32..].copy_from_slice(&b);
                Signature::Schnorr(s)
            }),
        ]
    }

    fn arb_state() -> impl Strategy<Value = UtxoState> {
        prop_oneof![
            Just(UtxoState::Unspent),
            Just(UtxoState::Locked),
            Just(UtxoState::Spent)
        ]
    }

    fn arb_decision() -> impl Strategy<Value = Decision> {
        prop_oneof![Just(Decision::Yes), Just(Decision::No), Just(Decision::Unknown)]
    }

    fn arb_input() -> impl Strategy<Value = TxInput> {
        (arb_hash(), arb_hash(), any::<u64>(), arb_pk(), arb_sig()).prop_map(
            |(a, o, value, owner, signature)| TxInput {
                address: Address(a),
                origin_tx: TxId(o),
                value,
                owner,
                signature,
            },
        )
    }

    fn arb_tx() -> impl Strategy<Value = Transaction> {
        (
            prop::collection::vec(arb_input(), 0..4),
            prop::collection::vec(
                (arb_pk(), any::<u64>()).prop_map(|(owner, value)| TxOutput { owner, value }),
                0..4,
            ),
            any::<u64>(),
            any::<u64>(),
        )
            .prop_map(|(i, o, fee, t)| Transaction::new(i, o, fee, t))
    }

    fn arb_utxo() -> impl Strategy<Value = Utxo> {
        (arb_hash(), arb_pk(), any::<u64>(), arb_hash(), arb_state()).prop_map(
            |(a, owner, value, o, state)| Utxo {
                address: Address(a),
                owner,
                value,
                origin_tx: TxId(o),
                state,
            },
        )
    }

    fn arb_cosig() -> impl Strategy<Value = CollectiveSignature> {
        (1usize..20, any::<u32>(), any::<[u8; 32]>()).prop_map(|(len, mask, tag)| {
            let mut cs = CollectiveSignature::unsigned(len);
            for i in 0..len {
                if mask >> (i % 32) & 1 == 1 {
                    cs.signer_bitmap.set(i);
                }
            }
            cs.aggregate = crate::crypto::Aggregate::Fast(tag);
            cs
        })
    }

    fn arb_txdec() -> impl Strategy<Value = TxDec> {
        (
            any::<u64>(),
            any::<u64>(),
            any::<u32>(),
            any::<u32>(),
            prop::collection::vec(arb_decision(), 0..10),
            arb_sig(),
            prop::collection::vec((any::<u32>(), arb_sig()), 0..3),
        )
            .prop_map(|(epoch, iteration, s, v, decisions, signature, subs)| TxDec {
                epoch,
                iteration,
                shard: ShardId(s),
                voter: ValidatorId(v),
                decisions,
                signature,
                subset_sigs: subs
                    .into_iter()
                    .map(|(o, signature)| SubsetSig {
                        output_shard: ShardId(o),
                        signature,
                    })
                    .collect(),
            })
    }

    fn round_trip<T: Encode + Decode + PartialEq + fmt::Debug>(x: &T) {
        let bytes = x.encode();
        assert_eq!(&T::decode(&bytes).unwrap(), x);
        assert_eq!(bytes, x.encode());
    }

    proptest! {
        #[test]
        fn transaction_round_trip(tx in arb_tx()) {
            round_trip(&tx);
        }

        #[test]
        fn utxo_round_trip(u in arb_utxo()) {
            round_trip(&u);
        }

        #[test]
        fn txlist_round_trip(e in any::<u64>(), it in any::<u64>(), hs in prop::collection::vec(arb_hash(), 0..8), sig in arb_sig()) {
            round_trip(&TxList { epoch: e, iteration: it, shard: ShardId(3), tx_hashes: hs.into_iter().map(TxId).collect(), leader_sig: sig });
        }

        #[test]
        fn txdecset_round_trip(decs in prop::collection::vec(arb_txdec(), 0..4), sig in arb_sig()) {
            round_trip(&TxDecSet { epoch: 2, iteration: 5, shard: ShardId(1), decs, leader_sig: sig });
        }

        #[test]
        fn tb_round_trip(txs in prop::collection::vec(arb_tx(), 0..3), prev in arb_hash(), sig in arb_sig()) {
            round_trip(&TransactionBlock { epoch: 1, iteration: 9, shard: ShardId(0), prev_tb_hash: prev, txs, leader_sig: sig });
        }

        #[test]
        fn rb_round_trip(
            tbs in prop::collection::vec(arb_hash(), 0..4),
            deltas in prop::collection::btree_map(any::<u32>(), any::<i64>(), 0..6),
            sbs in prop::option::of(prop::collection::vec(arb_hash(), 1..4)),
            cosig in arb_cosig(),
        ) {
            round_trip(&ReputationBlock {
                epoch: 4,
                shard: ShardId(2),
                prev_rb_hash: Hash32::ZERO,
                confirmed_tb_hashes: tbs,
                score_deltas: deltas.into_iter().map(|(v, s)| (ValidatorId(v), Score::from_micros(s))).collect(),
                prev_state_block_hashes: sbs,
                cosig,
            });
        }

        #[test]
        fn sb_round_trip(
            scores in prop::collection::btree_map(any::<u32>(), any::<i64>(), 0..6),
            utxos in prop::collection::vec(arb_utxo(), 0..4),
            cosig in arb_cosig(),
            nonce in any::<u64>(),
        ) {
            round_trip(&StateBlock {
                epoch: 7,
                shard: ShardId(0),
                cumulative_scores: scores.into_iter().map(|(v, s)| (ValidatorId(v), Score::from_micros(s))).collect(),
                utxo_set: utxos,
                cosig,
                pow_nonce: nonce,
            });
        }

        #[test]
        fn distinct_transactions_encode_distinctly(a in arb_tx(), b in arb_tx()) {
            prop_assume!(a != b);
            prop_assert_ne!(a.encode(), b.encode());
        }

        #[test]
        fn truncated_input_never_panics(tx in arb_tx(), cut in 0usize..64) {
            let bytes = tx.encode();
            let cut = cut.min(bytes.len().saturating_sub(1));
            prop_assert!(Transaction::decode(&bytes[..cut]).is_err());
        }
    }
}
