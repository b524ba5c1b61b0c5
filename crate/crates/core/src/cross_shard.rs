//! Cross-shard commit.
//!
//! The output shard (`id mod k`) decides. Every other input shard first
//! votes on the transaction as a lock request: inclusion in its TB locks
//! the inputs and yields an Accept proof, a No majority yields Reject.
//! Once the output shard holds Accept proofs from all of them it votes the
//! transaction into its own TB, spending its own inputs and creating the
//! outputs; the input shards then turn their locks into spends. Any Reject
//! or a timeout aborts and the locks are released.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Encode;
use crate::crypto::verify;
use crate::types::{
    Address, Decision, Epoch, Iteration, ShardId, Tick, Transaction, TxDec, TxDecSet, TxId,
    TxInput, TxList, Utxo, UtxoState, UtxoTransitionError, UtxoView, ValidatorId,
};
use crate::consensus::ShardContext;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub input_shards: BTreeSet<ShardId>,
    pub output_shard: ShardId,
}

impl Route {
    pub fn is_intra(&self) -> bool {
        self.input_shards.len() == 1 && self.input_shards.contains(&self.output_shard)
    }

    /// Input shards other than the output shard; these lock first.
    pub fn lock_shards(&self) -> impl Iterator<Item = ShardId> + '_ {
        self.input_shards
            .iter()
            .copied()
            .filter(move |s| *s != self.output_shard)
    }
}

pub fn route_tx(tx: &Transaction, k: u32) -> Route {
    Route {
        input_shards: tx.input_shards(k),
        output_shard: tx.output_shard(k),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LockOutcome {
    Accept,
    Reject,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("input {0:?} is not held by this shard")]
    UnknownInput(Address),
    #[error("input {address:?} is locked by another transaction")]
    LockedElsewhere { address: Address },
    #[error(transparent)]
    Transition(#[from] UtxoTransitionError),
}

/// One shard's UTXO partition plus lock ownership.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ShardLedger {
    pub shard: ShardId,
    pub k: u32,
    utxos: BTreeMap<Address, Utxo>,
    lock_holder: BTreeMap<Address, TxId>,
    reserved: BTreeSet<TxId>,
}

impl UtxoView for ShardLedger {
    fn lookup(&self, address: &Address) -> Option<Utxo> {
        self.utxos.get(address).cloned()
    }

    fn is_local(&self, input: &TxInput) -> bool {
        input.shard(self.k) == self.shard
    }
}

impl ShardLedger {
    pub fn new(shard: ShardId, k: u32) -> Self {
        ShardLedger {
            shard,
            k,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, utxo: Utxo) {
        self.utxos.insert(utxo.address, utxo);
    }

    pub fn get(&self, address: &Address) -> Option<&Utxo> {
        self.utxos.get(address)
    }

    pub fn lock_holder(&self, address: &Address) -> Option<TxId> {
        self.lock_holder.get(address).copied()
    }

    fn local_inputs<'a>(&self, tx: &'a Transaction) -> impl Iterator<Item = &'a TxInput> + 'a {
        let (shard, k) = (self.shard, self.k);
        tx.inputs.iter().filter(move |i| i.shard(k) == shard)
    }

    fn matches(&self, input: &TxInput) -> Option<&Utxo> {
        self.utxos.get(&input.address).filter(|u| {
            u.owner == input.owner && u.value == input.value && u.origin_tx == input.origin_tx
        })
    }

    /// Locks every local input of `tx`, or nothing. Locking again for the
    /// same transaction is a no-op Accept.
    pub fn lock_inputs(&mut self, tx: &Transaction) -> LockOutcome {
        let inputs: Vec<&TxInput> = self.local_inputs(tx).collect();
        let mut already = true;
        for input in &inputs {
            let Some(u) = self.matches(input) else {
                return LockOutcome::Reject;
            };
            match u.state {
                UtxoState::Locked if self.lock_holder.get(&input.address) == Some(&tx.id) => {}
                UtxoState::Unspent => already = false,
                _ => return LockOutcome::Reject,
            }
        }
        if !already {
            for input in inputs {
                let u = self.utxos.get_mut(&input.address).expect("checked above");
                if u.state == UtxoState::Unspent {
                    u.state = UtxoState::Locked;
                    self.lock_holder.insert(input.address, tx.id);
                }
            }
        }
        LockOutcome::Accept
    }

    /// Unlocks everything `tx` holds. Returns how many inputs were freed.
    pub fn release(&mut self, tx: TxId) -> usize {
        let held: Vec<Address> = self.held_by(tx);
        for a in &held {
            self.lock_holder.remove(a);
            if let Some(u) = self.utxos.get_mut(a) {
                u.state = UtxoState::Unspent;
            }
        }
        self.reserved.remove(&tx);
        held.len()
    }

    fn held_by(&self, tx: TxId) -> Vec<Address> {
        self.lock_holder
            .iter()
            .filter(|(_, h)| **h == tx)
            .map(|(a, _)| *a)
            .collect()
    }

    /// Turns the locks held by `tx` into spends. Returns how many inputs
    /// were spent.
    pub fn spend_locked(&mut self, tx: TxId) -> Result<usize, LedgerError> {
        let held = self.held_by(tx);
        for a in &held {
            self.lock_holder.remove(a);
            let u = self.utxos.get_mut(a).ok_or(LedgerError::UnknownInput(*a))?;
            u.spend()?;
        }
        Ok(held.len())
    }

    /// Applies a committed transaction as seen by this shard: local inputs
    /// become spent (whether they were locked for it or still unspent) and
    /// outputs routed here are created.
    pub fn commit(&mut self, tx: &Transaction) -> Result<(), LedgerError> {
        let inputs: Vec<&TxInput> = self.local_inputs(tx).collect();
        for input in &inputs {
            let u = self
                .utxos
                .get(&input.address)
                .ok_or(LedgerError::UnknownInput(input.address))?;
            if u.state == UtxoState::Locked && self.lock_holder.get(&input.address) != Some(&tx.id) {
                return Err(LedgerError::LockedElsewhere {
                    address: input.address,
                });
            }
            u.state.transition(UtxoState::Spent)?;
        }
        for input in inputs {
            self.lock_holder.remove(&input.address);
            self.utxos.get_mut(&input.address).expect("checked").state = UtxoState::Spent;
        }
        self.reserved.remove(&tx.id);
        if tx.output_shard(self.k) == self.shard {
            for u in tx.output_utxos() {
                self.utxos.insert(u.address, u);
            }
        }
        Ok(())
    }

    /// Output-side tx-level lock: the transaction id is reserved until it
    /// commits or aborts. Returns false if it was already reserved.
    pub fn reserve(&mut self, tx: TxId) -> bool {
        self.reserved.insert(tx)
    }

    pub fn is_reserved(&self, tx: &TxId) -> bool {
        self.reserved.contains(tx)
    }

    /// Releases every lock and reservation. Used at the epoch boundary.
    pub fn release_all(&mut self) -> Vec<TxId> {
        let holders: BTreeSet<TxId> = self.lock_holder.values().copied().collect();
        for tx in &holders {
            self.release(*tx);
        }
        self.reserved.clear();
        holders.into_iter().collect()
    }

    pub fn utxos(&self) -> impl Iterator<Item = &Utxo> {
        self.utxos.values()
    }

    pub fn unspent(&self) -> impl Iterator<Item = &Utxo> {
        self.utxos.values().filter(|u| u.state == UtxoState::Unspent)
    }

    pub fn unspent_value(&self) -> u64 {
        self.unspent().map(|u| u.value).sum()
    }

    pub fn locked_count(&self) -> usize {
        self.lock_holder.len()
    }

    /// Replaces the partition, typically with a consolidated set.
    pub fn replace(&mut self, utxos: Vec<Utxo>) {
        self.utxos = utxos.into_iter().map(|u| (u.address, u)).collect();
        self.lock_holder.clear();
        self.reserved.clear();
    }
}

/// One voter's signed decisions on the cell of a TxList destined to one
/// output shard.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoterCell {
    pub voter: ValidatorId,
    pub decisions: Vec<Decision>,
    pub signature: crate::crypto::Signature,
}

crate::struct_codec!(VoterCell { voter, decisions, signature });

/// The part of a TxDecSet another shard needs: the listed transactions
/// bound for it, with every voter's subset signature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofExcerpt {
    pub epoch: Epoch,
    pub iteration: Iteration,
    pub from_shard: ShardId,
    pub output_shard: ShardId,
    pub tx_ids: Vec<TxId>,
    pub votes: Vec<VoterCell>,
}

crate::struct_codec!(ProofExcerpt {
    epoch,
    iteration,
    from_shard,
    output_shard,
    tx_ids,
    votes
});

/// Splits a TxDecSet into one excerpt per foreign output shard.
pub fn build_excerpts(list: &TxList, set: &TxDecSet, k: u32) -> Vec<ProofExcerpt> {
    crate::types::subset_cells(&list.tx_hashes, k)
        .into_iter()
        .filter(|(s, _)| *s != list.shard)
        .map(|(output_shard, cell)| ProofExcerpt {
            epoch: list.epoch,
            iteration: list.iteration,
            from_shard: list.shard,
            output_shard,
            tx_ids: cell.iter().map(|&i| list.tx_hashes[i]).collect(),
            votes: set
                .decs
                .iter()
                .filter_map(|d| {
                    let sig = d.subset_sigs.iter().find(|s| s.output_shard == output_shard)?;
                    Some(VoterCell {
                        voter: d.voter,
                        decisions: cell.iter().map(|&i| d.decisions[i]).collect(),
                        signature: sig.signature,
                    })
                })
                .collect(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProofVerdict {
    Accept,
    Reject,
}

/// Verifies every subset signature against the sending shard's roster and
/// reads off a verdict per transaction with a majority either way. Any bad
/// signature voids the whole excerpt.
pub fn verify_excerpt(
    from: &ShardContext,
    excerpt: &ProofExcerpt,
) -> Option<BTreeMap<TxId, ProofVerdict>> {
    if excerpt.from_shard != from.shard || excerpt.epoch != from.epoch {
        return None;
    }
    let mut voters = BTreeSet::new();
    for cell in &excerpt.votes {
        let pk = from.key_of(cell.voter)?;
        if !voters.insert(cell.voter) || cell.decisions.len() != excerpt.tx_ids.len() {
            return None;
        }
        let entries: Vec<(TxId, Decision)> = excerpt
            .tx_ids
            .iter()
            .copied()
            .zip(cell.decisions.iter().copied())
            .collect();
        let bytes = TxDec::subset_bytes(
            excerpt.epoch,
            excerpt.iteration,
            excerpt.from_shard,
            cell.voter,
            excerpt.output_shard,
            &entries,
        );
        if !verify(pk, &bytes, &cell.signature) {
            return None;
        }
    }
    let mut out = BTreeMap::new();
    for (i, id) in excerpt.tx_ids.iter().enumerate() {
        let yes = excerpt.votes.iter().filter(|c| c.decisions[i] == Decision::Yes).count();
        let no = excerpt.votes.iter().filter(|c| c.decisions[i] == Decision::No).count();
        if from.is_majority(yes) {
            out.insert(*id, ProofVerdict::Accept);
        } else if from.is_majority(no) {
            out.insert(*id, ProofVerdict::Reject);
        }
    }
    Some(out)
}

/// Size of an excerpt on the wire.
pub fn excerpt_bytes(excerpt: &ProofExcerpt) -> usize {
    excerpt.encoded_len()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    Pending,
    Committed,
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    /// Waiting for proofs.
    Waiting,
    /// All lock shards accepted; the output shard may vote it in.
    Ready,
    Committed,
    Aborted,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CrossError {
    #[error("transaction {0} is not ready to commit")]
    NotReady(TxId),
    #[error("transaction {0} already resolved")]
    Resolved(TxId),
}

/// The output shard's view of one cross-shard transaction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrossTxState {
    pub tx_id: TxId,
    pub input_shards: BTreeSet<ShardId>,
    pub output_shard: ShardId,
    pub proofs: BTreeMap<ShardId, ProofVerdict>,
    pub resolution: Resolution,
    pub opened_at: Tick,
}

impl CrossTxState {
    pub fn new(tx: &Transaction, k: u32, now: Tick) -> Self {
        let route = route_tx(tx, k);
        CrossTxState {
            tx_id: tx.id,
            input_shards: route.input_shards,
            output_shard: route.output_shard,
            proofs: BTreeMap::new(),
            resolution: Resolution::Pending,
            opened_at: now,
        }
    }

    fn lock_shards(&self) -> impl Iterator<Item = &ShardId> {
        self.input_shards.iter().filter(|s| **s != self.output_shard)
    }

    /// Records a verdict from a shard. The first verdict per shard sticks.
    pub fn record(&mut self, shard: ShardId, verdict: ProofVerdict) {
        if self.resolution == Resolution::Pending && self.input_shards.contains(&shard) {
            self.proofs.entry(shard).or_insert(verdict);
        }
    }

    pub fn status(&mut self) -> Status {
        match self.resolution {
            Resolution::Committed => return Status::Committed,
            Resolution::Aborted => return Status::Aborted,
            Resolution::Pending => {}
        }
        if self.proofs.values().any(|v| *v == ProofVerdict::Reject) {
            self.resolution = Resolution::Aborted;
            return Status::Aborted;
        }
        if self
            .lock_shards()
            .all(|s| self.proofs.get(s) == Some(&ProofVerdict::Accept))
        {
            Status::Ready
        } else {
            Status::Waiting
        }
    }

    /// Called once the output shard's TB holding the transaction confirms.
    pub fn commit(&mut self) -> Result<(), CrossError> {
        match self.status() {
            Status::Ready => {
                self.proofs.insert(self.output_shard, ProofVerdict::Accept);
                self.resolution = Resolution::Committed;
                Ok(())
            }
            Status::Committed | Status::Aborted => Err(CrossError::Resolved(self.tx_id)),
            Status::Waiting => Err(CrossError::NotReady(self.tx_id)),
        }
    }

    /// Aborts after `t_abort` ticks without resolution; every shard that
    /// has not answered counts as rejecting. Returns true if it aborted.
    pub fn abort_if_stale(&mut self, now: Tick, t_abort: Tick) -> bool {
        if self.resolution != Resolution::Pending || now < self.opened_at + t_abort {
            return false;
        }
        self.force_abort();
        true
    }

    /// Unconditional abort (epoch boundary, failed commit vote).
    pub fn force_abort(&mut self) {
        if self.resolution == Resolution::Committed {
            return;
        }
        let missing: Vec<ShardId> = self
            .input_shards
            .iter()
            .copied()
            .filter(|s| !self.proofs.contains_key(s))
            .collect();
        for s in missing {
            self.proofs.insert(s, ProofVerdict::Reject);
        }
        if !self.proofs.values().any(|v| *v == ProofVerdict::Reject) {
            self.proofs.insert(self.output_shard, ProofVerdict::Reject);
        }
        self.resolution = Resolution::Aborted;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::{build_block, propose_txlist, sign_txdec};
    use crate::crypto::{Hash32, KeyPair, Scheme, Signature};
    use crate::types::TxOutput;

    fn txid_low(v: u64) -> TxId {
        let mut b = [0u8; 32];
        b[24..].copy_from_slice(&v.to_be_bytes());
        TxId(Hash32(b))
    }

    fn utxo_in_shard(owner: &KeyPair, tag: u8, shard: u64, k: u64) -> Utxo {
        Utxo {
            address: Address(Hash32([tag; 32])),
            owner: owner.public,
            value: 10,
            origin_tx: txid_low(shard + k * tag as u64),
            state: UtxoState::Unspent,
        }
    }

    fn spend(owner: &KeyPair, utxos: &[&Utxo], salt: u64) -> Transaction {
        let mut inputs: Vec<TxInput> = utxos
            .iter()
            .map(|u| TxInput {
                address: u.address,
                origin_tx: u.origin_tx,
                value: u.value,
                owner: owner.public,
                signature: Signature::default(),
            })
            .collect();
        let total: u64 = utxos.iter().map(|u| u.value).sum();
        let outputs = vec![TxOutput {
            owner: owner.public,
            value: total - 1 - salt,
        }];
        let d = Transaction::signing_digest(&inputs, &outputs, 1 + salt);
        for i in &mut inputs {
            i.signature = owner.sign(d.as_bytes());
        }
        Transaction::new(inputs, outputs, 1 + salt, 0)
    }

    #[test]
    fn routing() {
        let k = KeyPair::from_seed(Scheme::Fast, [1; 32]);
        let u = utxo_in_shard(&k, 1, 1, 8);
        let tx = spend(&k, &[&u], 0);
        let r1 = route_tx(&tx, 1);
        assert!(r1.is_intra());
        assert_eq!(txid_low(17).shard(8), ShardId(1));
        let r = route_tx(&tx, 8);
        assert_eq!(r.input_shards, BTreeSet::from([ShardId(1)]));
        assert_eq!(r.output_shard, tx.id.shard(8));
        assert_eq!(r.is_intra(), r.output_shard == ShardId(1));
    }

    #[test]
    fn lock_accept_reject_idempotent() {
        let k = KeyPair::from_seed(Scheme::Fast, [1; 32]);
        let a = utxo_in_shard(&k, 1, 0, 2);
        let b = utxo_in_shard(&k, 2, 0, 2);
        let mut ledger = ShardLedger::new(ShardId(0), 2);
        ledger.insert(a.clone());
        ledger.insert(b.clone());
        let t1 = spend(&k, &[&a, &b], 0);
        assert_eq!(ledger.lock_inputs(&t1), LockOutcome::Accept);
        assert_eq!(ledger.get(&a.address).unwrap().state, UtxoState::Locked);
        assert_eq!(ledger.get(&b.address).unwrap().state, UtxoState::Locked);
        assert_eq!(ledger.lock_inputs(&t1), LockOutcome::Accept);
        assert_eq!(ledger.locked_count(), 2);

        let t2 = spend(&k, &[&a], 3);
        assert_eq!(ledger.lock_inputs(&t2), LockOutcome::Reject);
        assert_eq!(ledger.release(t1.id), 2);
        assert_eq!(ledger.lock_inputs(&t2), LockOutcome::Accept);
        assert_eq!(ledger.spend_locked(t2.id), Ok(1));
        // after the first commits the second is permanently invalid
        assert_eq!(ledger.lock_inputs(&t1), LockOutcome::Reject);
    }

    #[test]
    fn resolution_rules() {
        let k = KeyPair::from_seed(Scheme::Fast, [1; 32]);
        let a = utxo_in_shard(&k, 1, 0, 3);
        let b = utxo_in_shard(&k, 2, 1, 3);
        let c = utxo_in_shard(&k, 3, 2, 3);
        let tx = spend(&k, &[&a, &b, &c], 0);
        let mut st = CrossTxState::new(&tx, 3, 0);
        let lock: Vec<ShardId> = st.lock_shards().copied().collect();
        assert_eq!(lock.len(), 2);
        st.record(lock[0], ProofVerdict::Accept);
        assert_eq!(st.status(), Status::Waiting);
        assert_eq!(st.commit(), Err(CrossError::NotReady(tx.id)));
        st.record(lock[1], ProofVerdict::Accept);
        assert_eq!(st.status(), Status::Ready);
        st.commit().unwrap();
        assert_eq!(st.resolution, Resolution::Committed);

        let mut st = CrossTxState::new(&tx, 3, 0);
        st.record(lock[0], ProofVerdict::Accept);
        st.record(lock[1], ProofVerdict::Reject);
        assert_eq!(st.status(), Status::Aborted);

        let mut st = CrossTxState::new(&tx, 3, 5);
        assert!(!st.abort_if_stale(24, 20));
        assert!(st.abort_if_stale(25, 20));
        assert!(st.proofs.values().any(|v| *v == ProofVerdict::Reject));
    }

    #[test]
    fn atomic_commit_and_abort_on_ledgers() {
        let k = KeyPair::from_seed(Scheme::Fast, [1; 32]);
        let a = utxo_in_shard(&k, 1, 0, 2);
        let b = utxo_in_shard(&k, 2, 1, 2);
        let tx = spend(&k, &[&a, &b], 0);
        let out = tx.output_shard(2);
        let mut l0 = ShardLedger::new(ShardId(0), 2);
        let mut l1 = ShardLedger::new(ShardId(1), 2);
        l0.insert(a.clone());
        l1.insert(b.clone());
        let (mut lo, mut li) = if out == ShardId(0) { (l0, l1) } else { (l1, l0) };
        let in_addr = if out == ShardId(0) { b.address } else { a.address };
        assert_eq!(li.lock_inputs(&tx), LockOutcome::Accept);
        lo.commit(&tx).unwrap();
        assert_eq!(li.spend_locked(tx.id), Ok(1));
        assert_eq!(li.get(&in_addr).unwrap().state, UtxoState::Spent);
        assert_eq!(lo.unspent().count(), 1);
        assert_eq!(lo.unspent_value(), 19);
    }

    #[test]
    fn excerpts_verify_and_tampering_is_ignored() {
        let keys: Vec<KeyPair> = (0..5).map(|i| KeyPair::from_seed(Scheme::Fast, [i + 1; 32])).collect();
        let ctx = ShardContext {
            epoch: 1,
            shard: ShardId(0),
            k: 2,
            members: (0..5).map(ValidatorId).collect(),
            roster: keys.iter().map(|k| k.public).collect(),
        };
        // three transactions bound for shard 1 and one for shard 0
        let ids: Vec<TxId> = [1u64, 3, 5, 2].iter().map(|&v| txid_low(v)).collect();
        let list = propose_txlist(&ctx, 0, ids.clone(), 10, &keys[0]);
        let decs: Vec<TxDec> = (0..5)
            .map(|i| {
                let d = list
                    .tx_hashes
                    .iter()
                    .map(|h| if *h == txid_low(5) && i < 3 { Decision::No } else { Decision::Yes })
                    .collect();
                sign_txdec(&ctx, ValidatorId(i), &keys[i as usize], &list, d)
            })
            .collect();
        let txs: Vec<Transaction> = vec![Transaction::default(); 4];
        let (_, set) = build_block(&ctx, &keys[0], &list, &txs, decs, Hash32::ZERO);
        let ex = build_excerpts(&list, &set, 2);
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].tx_ids.len(), 3);
        let verdicts = verify_excerpt(&ctx, &ex[0]).unwrap();
        assert_eq!(verdicts[&txid_low(1)], ProofVerdict::Accept);
        assert_eq!(verdicts[&txid_low(5)], ProofVerdict::Reject);

        let mut bad = ex[0].clone();
        bad.votes[2].decisions[0] = Decision::No;
        assert!(verify_excerpt(&ctx, &bad).is_none());
    }
}
