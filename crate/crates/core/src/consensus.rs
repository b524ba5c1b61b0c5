//! Intra-shard consensus: TxList proposal, voting, block construction,
//! block verification with warnings and rolling, and reputation blocks.
//!
//! The functions here are the protocol steps; [`ConsensusState`] is the
//! bookkeeping a shard keeps between them. Message delivery and timing
//! belong to the caller.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Decode, DecodeError, Encode, Reader};
use crate::crypto::{
    cosign, cosign_verify, majority_threshold, sign, verify, CollectiveSignature, CosignError,
    Hash32, KeyPair, PublicKey, Signature,
};
use crate::reputation::{merge_deltas, round_deltas, ScoringPolicy};
use crate::score::Score;
use crate::types::{
    check_tx_body, subset_cells, validate_tx_with, Address, Budget, Decision, Epoch, Iteration,
    ReputationBlock, ShardId, SubsetSig, Transaction, TransactionBlock, TxDec, TxDecSet, TxId,
    TxList, UtxoView, ValidatorId,
};

/// Who is in the shard this epoch and under which keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardContext {
    pub epoch: Epoch,
    pub shard: ShardId,
    pub k: u32,
    /// Ascending.
    pub members: Vec<ValidatorId>,
    /// `roster[i]` belongs to `members[i]`.
    pub roster: Vec<PublicKey>,
}

impl ShardContext {
    pub fn m(&self) -> usize {
        self.members.len()
    }

    pub fn index_of(&self, v: ValidatorId) -> Option<usize> {
        self.members.binary_search(&v).ok()
    }

    pub fn key_of(&self, v: ValidatorId) -> Option<&PublicKey> {
        self.index_of(v).map(|i| &self.roster[i])
    }

    /// Strictly more than half of the shard.
    pub fn is_majority(&self, count: usize) -> bool {
        2 * count > self.m()
    }

    /// `⌈m/2⌉` distinct warners trigger rolling.
    pub fn rolling_threshold(&self) -> usize {
        self.m().div_ceil(2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningReason {
    MissingTxDec,
    AlteredTxDec,
    UnsupportedTx,
    OmittedTx,
    BadSignature,
    RoundMismatch,
    BadPrevHash,
    LeaderSilent,
}

impl WarningReason {
    const ALL: [WarningReason; 8] = [
        WarningReason::MissingTxDec,
        WarningReason::AlteredTxDec,
        WarningReason::UnsupportedTx,
        WarningReason::OmittedTx,
        WarningReason::BadSignature,
        WarningReason::RoundMismatch,
        WarningReason::BadPrevHash,
        WarningReason::LeaderSilent,
    ];
}

impl Encode for WarningReason {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.push(Self::ALL.iter().position(|r| r == self).unwrap() as u8);
    }
}

impl Decode for WarningReason {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tag = u8::decode_from(input)?;
        Self::ALL
            .get(tag as usize)
            .copied()
            .ok_or(DecodeError::InvalidTag { what: "warning reason", tag })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Accept,
    Warning(WarningReason),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub epoch: Epoch,
    pub iteration: Iteration,
    pub shard: ShardId,
    pub warner: ValidatorId,
    pub reason: WarningReason,
    pub signature: Signature,
}

crate::struct_codec!(Warning { epoch, iteration, shard, warner, reason, signature });

impl Warning {
    pub fn new(
        ctx: &ShardContext,
        iteration: Iteration,
        warner: ValidatorId,
        key: &KeyPair,
        reason: WarningReason,
    ) -> Self {
        let mut w = Warning {
            epoch: ctx.epoch,
            iteration,
            shard: ctx.shard,
            warner,
            reason,
            signature: Signature::default(),
        };
        w.signature = key.sign(&w.signing_bytes());
        w
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.epoch.encode_to(&mut out);
        self.iteration.encode_to(&mut out);
        self.shard.encode_to(&mut out);
        self.warner.encode_to(&mut out);
        self.reason.encode_to(&mut out);
        out
    }
}

/// Step 1. Takes up to `capacity` distinct candidates in the given
/// priority order and lists them in ascending hash order.
pub fn propose_txlist(
    ctx: &ShardContext,
    iteration: Iteration,
    candidates: impl IntoIterator<Item = TxId>,
    capacity: usize,
    leader: &KeyPair,
) -> TxList {
    let mut chosen = BTreeSet::new();
    for id in candidates {
        if chosen.len() == capacity {
            break;
        }
        chosen.insert(id);
    }
    let mut list = TxList {
        epoch: ctx.epoch,
        iteration,
        shard: ctx.shard,
        tx_hashes: chosen.into_iter().collect(),
        leader_sig: Signature::default(),
    };
    list.leader_sig = leader.sign(&list.signing_bytes());
    list
}

/// What a member needs to vote on one TxList.
pub struct Ballot<'a, V: UtxoView> {
    /// Bodies aligned with the TxList; `None` if the member never received
    /// the transaction.
    pub txs: &'a [Option<&'a Transaction>],
    pub view: &'a V,
    pub budget: Budget,
    /// Order in which positions are examined while the budget lasts.
    /// Defaults to list order.
    pub order: Option<&'a [usize]>,
    /// Inputs already claimed by Yes votes in earlier, unconfirmed
    /// iterations.
    pub reserved: &'a BTreeSet<Address>,
    /// Extra admission test (cross-shard proofs, for instance). A `false`
    /// turns a would-be Yes into No.
    pub admit: &'a dyn Fn(&Transaction) -> bool,
    /// State-free body check; `None` runs `check_tx_body` directly.
    pub body_ok: Option<&'a dyn Fn(&Transaction) -> bool>,
}

/// Step 2. Returns the signed TxDec, or the warning to raise when the
/// TxList itself is bad.
pub fn vote<V: UtxoView>(
    ctx: &ShardContext,
    voter: ValidatorId,
    key: &KeyPair,
    leader_pk: &PublicKey,
    list: &TxList,
    ballot: Ballot<'_, V>,
) -> Result<TxDec, WarningReason> {
    if (list.epoch, list.shard) != (ctx.epoch, ctx.shard) {
        return Err(WarningReason::RoundMismatch);
    }
    if !list.is_sorted() || !verify(leader_pk, &list.signing_bytes(), &list.leader_sig) {
        return Err(WarningReason::BadSignature);
    }
    let decisions = decide(list, ballot);
    Ok(sign_txdec(ctx, voter, key, list, decisions))
}

/// The decision vector alone, without the list checks or signing that
/// [`vote`] adds.
pub fn decide<V: UtxoView>(list: &TxList, ballot: Ballot<'_, V>) -> Vec<Decision> {
    let n = list.tx_hashes.len();
    let mut verdicts = vec![Decision::Unknown; n];
    let mut budget = ballot.budget;
    let default_order: Vec<usize> = (0..n).collect();
    let order = ballot.order.unwrap_or(&default_order);
    for &i in order.iter().filter(|&&i| i < n) {
        let Some(tx) = ballot.txs.get(i).copied().flatten() else {
            continue;
        };
        if tx.id != list.tx_hashes[i] {
            verdicts[i] = if budget.take() { Decision::No } else { Decision::Unknown };
            continue;
        }
        let body_ok = ballot.body_ok.unwrap_or(&check_tx_body);
        let mut d = validate_tx_with(tx, ballot.view, &mut budget, body_ok);
        if d == Decision::Yes && !(ballot.admit)(tx) {
            d = Decision::No;
        }
        verdicts[i] = d;
    }

    // Conflicts: the earliest position keeps its inputs.
    let mut claimed: BTreeMap<Address, Decision> = BTreeMap::new();
    for i in 0..n {
        let Some(tx) = ballot.txs.get(i).copied().flatten() else {
            continue;
        };
        let mut lost = false;
        let mut unsure = false;
        for input in &tx.inputs {
            match claimed.get(&input.address) {
                _ if ballot.reserved.contains(&input.address) => lost = true,
                Some(Decision::Yes) => lost = true,
                Some(_) => unsure = true,
                None => {}
            }
        }
        if verdicts[i] == Decision::Yes {
            if lost {
                verdicts[i] = Decision::No;
            } else if unsure {
                verdicts[i] = Decision::Unknown;
            }
        }
        if verdicts[i] != Decision::No {
            for input in &tx.inputs {
                claimed.entry(input.address).or_insert(verdicts[i]);
            }
        }
    }
    verdicts
}

/// Signs a decision vector: one signature over the whole vector and one
/// per output-shard cell of the list.
pub fn sign_txdec(
    ctx: &ShardContext,
    voter: ValidatorId,
    key: &KeyPair,
    list: &TxList,
    decisions: Vec<Decision>,
) -> TxDec {
    let mut dec = TxDec {
        epoch: list.epoch,
        iteration: list.iteration,
        shard: list.shard,
        voter,
        decisions,
        signature: Signature::default(),
        subset_sigs: Vec::new(),
    };
    dec.signature = key.sign(&dec.signing_bytes());
    dec.subset_sigs = subset_cells(&list.tx_hashes, ctx.k)
        .into_iter()
        .map(|(output_shard, cell)| {
            let entries: Vec<(TxId, Decision)> = cell
                .iter()
                .map(|&i| (list.tx_hashes[i], dec.decisions[i]))
                .collect();
            let bytes = TxDec::subset_bytes(
                dec.epoch,
                dec.iteration,
                dec.shard,
                voter,
                output_shard,
                &entries,
            );
            SubsetSig {
                output_shard,
                signature: sign(&key.secret, &bytes),
            }
        })
        .collect();
    dec
}

pub fn verify_txdec(ctx: &ShardContext, list: &TxList, dec: &TxDec) -> bool {
    let Some(pk) = ctx.key_of(dec.voter) else {
        return false;
    };
    if (dec.epoch, dec.iteration, dec.shard) != (list.epoch, list.iteration, list.shard)
        || dec.decisions.len() != list.tx_hashes.len()
        || !verify(pk, &dec.signing_bytes(), &dec.signature)
    {
        return false;
    }
    let cells = subset_cells(&list.tx_hashes, ctx.k);
    if cells.len() != dec.subset_sigs.len() {
        return false;
    }
    cells.iter().zip(&dec.subset_sigs).all(|((shard, cell), sig)| {
        let entries: Vec<(TxId, Decision)> = cell
            .iter()
            .map(|&i| (list.tx_hashes[i], dec.decisions[i]))
            .collect();
        let bytes = TxDec::subset_bytes(dec.epoch, dec.iteration, dec.shard, dec.voter, *shard, &entries);
        sig.output_shard == *shard && verify(pk, &bytes, &sig.signature)
    })
}

/// Positions with strictly more than `m/2` Yes votes.
pub fn included_positions(set: &TxDecSet, len: usize, m: usize) -> Vec<usize> {
    (0..len).filter(|&i| 2 * set.yes_count(i) > m).collect()
}

/// Steps 2–3. Keeps one TxDec per voter, builds the TB from the positions
/// with a Yes majority among the received votes, and signs both.
pub fn build_block(
    ctx: &ShardContext,
    leader: &KeyPair,
    list: &TxList,
    txs: &[Transaction],
    decs: Vec<TxDec>,
    prev_tb_hash: Hash32,
) -> (TransactionBlock, TxDecSet) {
    let mut by_voter: BTreeMap<ValidatorId, TxDec> = BTreeMap::new();
    for d in decs {
        by_voter.entry(d.voter).or_insert(d);
    }
    let mut set = TxDecSet {
        epoch: list.epoch,
        iteration: list.iteration,
        shard: list.shard,
        decs: by_voter.into_values().collect(),
        leader_sig: Signature::default(),
    };
    set.leader_sig = leader.sign(&set.signing_bytes());
    let tb = build_tb(ctx, leader, list, txs, &set, prev_tb_hash);
    (tb, set)
}

/// The TB for a given TxDecSet, honouring the inclusion rule.
pub fn build_tb(
    ctx: &ShardContext,
    leader: &KeyPair,
    list: &TxList,
    txs: &[Transaction],
    set: &TxDecSet,
    prev_tb_hash: Hash32,
) -> TransactionBlock {
    let included = included_positions(set, list.tx_hashes.len(), ctx.m());
    sign_tb(
        leader,
        list,
        included.into_iter().map(|i| txs[i].clone()).collect(),
        prev_tb_hash,
    )
}

pub fn sign_tb(
    leader: &KeyPair,
    list: &TxList,
    txs: Vec<Transaction>,
    prev_tb_hash: Hash32,
) -> TransactionBlock {
    let mut tb = TransactionBlock {
        epoch: list.epoch,
        iteration: list.iteration,
        shard: list.shard,
        prev_tb_hash,
        txs,
        leader_sig: Signature::default(),
    };
    tb.leader_sig = leader.sign(&tb.signing_bytes());
    tb
}

/// The member-independent part of step 4: signatures and round binding of
/// the TxDecSet and every TxDec in it.
pub fn check_decset(
    ctx: &ShardContext,
    list: &TxList,
    set: &TxDecSet,
    leader_pk: &PublicKey,
) -> Result<(), WarningReason> {
    if (set.epoch, set.iteration, set.shard) != (list.epoch, list.iteration, list.shard) {
        return Err(WarningReason::RoundMismatch);
    }
    if !verify(leader_pk, &set.signing_bytes(), &set.leader_sig) || set.check_invariants().is_err()
    {
        return Err(WarningReason::BadSignature);
    }
    if !set.decs.iter().all(|d| verify_txdec(ctx, list, d)) {
        return Err(WarningReason::BadSignature);
    }
    Ok(())
}

/// Step 4 from one member's point of view. `decset_check` is the result
/// of [`check_decset`], which every member computes identically.
#[allow(clippy::too_many_arguments)]
pub fn verify_block(
    ctx: &ShardContext,
    own: &TxDec,
    list: &TxList,
    set: &TxDecSet,
    tb: &TransactionBlock,
    expected_prev: Hash32,
    leader_pk: &PublicKey,
    decset_check: Result<(), WarningReason>,
) -> Verdict {
    if let Err(reason) = check_own_dec(set, own) {
        return Verdict::Warning(reason);
    }
    verify_tb(ctx, list, set, tb, expected_prev, leader_pk, decset_check)
}

/// The member's own TxDec must appear unaltered.
pub fn check_own_dec(set: &TxDecSet, own: &TxDec) -> Result<(), WarningReason> {
    match set.dec_of(own.voter) {
        None => Err(WarningReason::MissingTxDec),
        Some(d) if d != own => Err(WarningReason::AlteredTxDec),
        Some(_) => Ok(()),
    }
}

/// Member-independent part of step 4.
pub fn verify_tb(
    ctx: &ShardContext,
    list: &TxList,
    set: &TxDecSet,
    tb: &TransactionBlock,
    expected_prev: Hash32,
    leader_pk: &PublicKey,
    decset_check: Result<(), WarningReason>,
) -> Verdict {
    if let Err(reason) = decset_check {
        return Verdict::Warning(reason);
    }
    if (tb.epoch, tb.iteration, tb.shard) != (list.epoch, list.iteration, list.shard) {
        return Verdict::Warning(WarningReason::RoundMismatch);
    }
    if !verify(leader_pk, &tb.signing_bytes(), &tb.leader_sig) {
        return Verdict::Warning(WarningReason::BadSignature);
    }
    if tb.prev_tb_hash != expected_prev {
        return Verdict::Warning(WarningReason::BadPrevHash);
    }
    match inclusion_violation(list, set, tb, ctx.m()) {
        Some(reason) => Verdict::Warning(reason),
        None => Verdict::Accept,
    }
}

/// Checks the TB against the inclusion rule: exactly the majority-Yes
/// positions, in list order.
pub fn inclusion_violation(
    list: &TxList,
    set: &TxDecSet,
    tb: &TransactionBlock,
    m: usize,
) -> Option<WarningReason> {
    let expected: Vec<TxId> = included_positions(set, list.tx_hashes.len(), m)
        .into_iter()
        .map(|i| list.tx_hashes[i])
        .collect();
    let got: Vec<TxId> = tb.txs.iter().map(|t| t.id).collect();
    let expected_set: BTreeSet<&TxId> = expected.iter().collect();
    if got.iter().any(|id| !expected_set.contains(id))
        || tb.txs.iter().any(|t| t.id != crate::types::tx_id(&t.inputs, &t.outputs, t.fee))
    {
        return Some(WarningReason::UnsupportedTx);
    }
    if got != expected {
        return Some(WarningReason::OmittedTx);
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TallyResult {
    Continue,
    Roll,
}

/// Distinct, signature-checked warners per iteration.
#[derive(Clone, Debug, Default)]
pub struct WarningTally {
    by_iteration: BTreeMap<Iteration, BTreeSet<ValidatorId>>,
}

impl WarningTally {
    /// Records a warning. Returns whether it was new and valid.
    pub fn add(&mut self, ctx: &ShardContext, w: &Warning) -> bool {
        if (w.epoch, w.shard) != (ctx.epoch, ctx.shard) {
            return false;
        }
        let Some(pk) = ctx.key_of(w.warner) else {
            return false;
        };
        if !verify(pk, &w.signing_bytes(), &w.signature) {
            return false;
        }
        self.by_iteration.entry(w.iteration).or_default().insert(w.warner)
    }

    pub fn count(&self, iteration: Iteration) -> usize {
        self.by_iteration.get(&iteration).map_or(0, BTreeSet::len)
    }

    pub fn tally(&self, ctx: &ShardContext, iteration: Iteration) -> TallyResult {
        tally_warnings(ctx, self.count(iteration))
    }

    pub fn clear(&mut self) {
        self.by_iteration.clear();
    }
}

pub fn tally_warnings(ctx: &ShardContext, distinct_warners: usize) -> TallyResult {
    if distinct_warners >= ctx.rolling_threshold() {
        TallyResult::Roll
    } else {
        TallyResult::Continue
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Propose,
    Vote,
    Aggregate,
    Verify,
    RepBlock,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConsensusError {
    #[error("iteration {0} already has a TxList")]
    DuplicateTxList(Iteration),
    #[error("iteration {got} proposed out of turn, expected {expected}")]
    OutOfTurn { got: Iteration, expected: Iteration },
    #[error("iteration {0} is not in flight")]
    UnknownIteration(Iteration),
    #[error("illegal phase change {from:?} -> {to:?} in iteration {iteration}")]
    IllegalPhase {
        iteration: Iteration,
        from: Phase,
        to: Phase,
    },
}

/// Per-shard bookkeeping between protocol steps.
#[derive(Clone, Debug)]
pub struct ConsensusState {
    pub shard: ShardId,
    pub epoch: Epoch,
    pub leader: ValidatorId,
    pub next_iteration: Iteration,
    pub in_flight: BTreeMap<Iteration, (Phase, TxList)>,
    pub warnings: WarningTally,
    pub last_tb_hash: Hash32,
    pub confirmed_since_rb: Vec<Hash32>,
    pub confirmed: Vec<Hash32>,
    pub rollings: u32,
    pub kicked: BTreeSet<ValidatorId>,
}

impl ConsensusState {
    pub fn new(epoch: Epoch, shard: ShardId, leader: ValidatorId) -> Self {
        ConsensusState {
            shard,
            epoch,
            leader,
            next_iteration: 0,
            in_flight: BTreeMap::new(),
            warnings: WarningTally::default(),
            last_tb_hash: Hash32::ZERO,
            confirmed_since_rb: Vec::new(),
            confirmed: Vec::new(),
            rollings: 0,
            kicked: BTreeSet::new(),
        }
    }

    /// Propose → Vote for a fresh iteration.
    pub fn open(&mut self, list: TxList) -> Result<(), ConsensusError> {
        if self.in_flight.contains_key(&list.iteration) {
            return Err(ConsensusError::DuplicateTxList(list.iteration));
        }
        if list.iteration != self.next_iteration {
            return Err(ConsensusError::OutOfTurn {
                got: list.iteration,
                expected: self.next_iteration,
            });
        }
        self.next_iteration += 1;
        self.in_flight.insert(list.iteration, (Phase::Vote, list));
        Ok(())
    }

    pub fn phase(&self, iteration: Iteration) -> Option<Phase> {
        self.in_flight.get(&iteration).map(|(p, _)| *p)
    }

    pub fn txlist(&self, iteration: Iteration) -> Option<&TxList> {
        self.in_flight.get(&iteration).map(|(_, l)| l)
    }

    /// Vote → Aggregate → Verify, one step at a time.
    pub fn advance(&mut self, iteration: Iteration, to: Phase) -> Result<(), ConsensusError> {
        let (phase, _) = self
            .in_flight
            .get_mut(&iteration)
            .ok_or(ConsensusError::UnknownIteration(iteration))?;
        let ok = matches!(
            (*phase, to),
            (Phase::Vote, Phase::Aggregate) | (Phase::Aggregate, Phase::Verify)
        );
        if !ok {
            return Err(ConsensusError::IllegalPhase {
                iteration,
                from: *phase,
                to,
            });
        }
        *phase = to;
        Ok(())
    }

    /// Verify → done: the TB joins the shard's chain. Returns whether a
    /// reputation block is now due.
    pub fn confirm(&mut self, iteration: Iteration, tb_hash: Hash32, rho: usize) -> Result<bool, ConsensusError> {
        match self.in_flight.get(&iteration) {
            Some((Phase::Verify, _)) => {}
            Some((from, _)) => {
                return Err(ConsensusError::IllegalPhase {
                    iteration,
                    from: *from,
                    to: Phase::RepBlock,
                })
            }
            None => return Err(ConsensusError::UnknownIteration(iteration)),
        }
        self.in_flight.remove(&iteration);
        self.last_tb_hash = tb_hash;
        self.confirmed_since_rb.push(tb_hash);
        self.confirmed.push(tb_hash);
        Ok(self.confirmed_since_rb.len() >= rho)
    }

    /// Hands the TBs awaiting a reputation block to the caller.
    pub fn take_for_rb(&mut self) -> Vec<Hash32> {
        std::mem::take(&mut self.confirmed_since_rb)
    }

    /// Kicks the leader and drops every unconfirmed iteration. Returns the
    /// dropped iterations so their transactions can be proposed again.
    pub fn roll(&mut self, new_leader: ValidatorId) -> Vec<TxList> {
        self.kicked.insert(self.leader);
        self.leader = new_leader;
        self.rollings += 1;
        self.warnings.clear();
        std::mem::take(&mut self.in_flight)
            .into_values()
            .map(|(_, l)| l)
            .collect()
    }
}

/// One confirmed round feeding a reputation block.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    pub tb_hash: Hash32,
    pub set: TxDecSet,
    /// Output value of each listed transaction, in list order.
    pub values: Vec<u64>,
}

/// Step 5, unsigned: score deltas for every member over the given rounds.
pub fn build_reputation_block(
    ctx: &ShardContext,
    prev_rb_hash: Hash32,
    rounds: &[RoundRecord],
    prev_state_block_hashes: Option<Vec<Hash32>>,
    policy: &ScoringPolicy,
) -> ReputationBlock {
    let mut deltas: BTreeMap<ValidatorId, Score> =
        ctx.members.iter().map(|&v| (v, Score::ZERO)).collect();
    for r in rounds {
        merge_deltas(&mut deltas, &round_deltas(&ctx.members, &r.set, &r.values, policy));
    }
    ReputationBlock {
        epoch: ctx.epoch,
        shard: ctx.shard,
        prev_rb_hash,
        confirmed_tb_hashes: rounds.iter().map(|r| r.tb_hash).collect(),
        score_deltas: deltas,
        prev_state_block_hashes,
        cosig: CollectiveSignature::unsigned(ctx.m()),
    }
}

/// Collectively signs the block with the given members.
pub fn sign_reputation_block(
    ctx: &ShardContext,
    rb: &mut ReputationBlock,
    signers: &[(ValidatorId, &KeyPair)],
) -> Result<(), CosignError> {
    let parts: Vec<(usize, &KeyPair)> = signers
        .iter()
        .filter_map(|(v, k)| ctx.index_of(*v).map(|i| (i, *k)))
        .collect();
    rb.cosig = cosign(&ctx.roster, &parts, &rb.body_bytes())?;
    Ok(())
}

pub fn verify_reputation_block(ctx: &ShardContext, rb: &ReputationBlock) -> bool {
    rb.score_deltas.keys().copied().eq(ctx.members.iter().copied())
        && cosign_verify(&ctx.roster, &rb.body_bytes(), &rb.cosig, majority_threshold(ctx.m()))
}

/// Walks `prev_rb_hash` links back from the last block. True iff the walk
/// reaches the first block through every block, starting from `genesis`,
/// and every confirmed TB appears exactly once.
pub fn rb_chain_intact(rbs: &[ReputationBlock], genesis: Hash32, confirmed_tbs: &[Hash32]) -> bool {
    let by_hash: BTreeMap<Hash32, &ReputationBlock> = rbs.iter().map(|b| (b.hash(), b)).collect();
    let Some(last) = rbs.last() else {
        return confirmed_tbs.is_empty();
    };
    let mut seen_tbs = Vec::new();
    let mut visited = 0;
    let mut cur = last;
    loop {
        visited += 1;
        seen_tbs.extend(cur.confirmed_tb_hashes.iter().copied());
        if cur.prev_rb_hash == genesis {
            break;
        }
        match by_hash.get(&cur.prev_rb_hash) {
            Some(prev) if visited < rbs.len() => cur = prev,
            _ => return false,
        }
    }
    let mut expected = confirmed_tbs.to_vec();
    expected.sort();
    seen_tbs.sort();
    visited == rbs.len() && seen_tbs == expected
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Scheme;
    use crate::types::{Budget, TxInput, TxOutput, Utxo, UtxoState};

    struct Shard {
        ctx: ShardContext,
        keys: Vec<KeyPair>,
    }

    fn shard(m: u32) -> Shard {
        let keys: Vec<KeyPair> = (0..m)
            .map(|i| KeyPair::from_seed(Scheme::Fast, [i as u8 + 1; 32]))
            .collect();
        Shard {
            ctx: ShardContext {
                epoch: 1,
                shard: ShardId(0),
                k: 2,
                members: (0..m).map(ValidatorId).collect(),
                roster: keys.iter().map(|k| k.public).collect(),
            },
            keys,
        }
    }

    fn wallet(tag: u8) -> (KeyPair, Utxo) {
        let k = KeyPair::from_seed(Scheme::Fast, [100 + tag; 32]);
        let u = Utxo {
            address: Address(Hash32([tag; 32])),
            owner: k.public,
            value: 10,
            origin_tx: TxId(Hash32([0; 32])),
            state: UtxoState::Unspent,
        };
        (k, u)
    }

    fn pay(owner: &KeyPair, u: &Utxo, salt: u64) -> Transaction {
        let mut inputs = vec![TxInput {
            address: u.address,
            origin_tx: u.origin_tx,
            value: u.value,
            owner: owner.public,
            signature: Signature::default(),
        }];
        let outputs = vec![TxOutput {
            owner: owner.public,
            value: u.value - 1 - salt,
        }];
        let fee = 1 + salt;
        let d = Transaction::signing_digest(&inputs, &outputs, fee);
        inputs[0].signature = owner.sign(d.as_bytes());
        Transaction::new(inputs, outputs, fee, 0)
    }

    fn ids(hs: &[u8]) -> Vec<TxId> {
        hs.iter().map(|&h| TxId(Hash32([h; 32]))).collect()
    }

    #[test]
    fn txlist_sorted_and_capped() {
        let s = shard(3);
        let l = propose_txlist(&s.ctx, 0, ids(&[3, 1, 2]), 10, &s.keys[0]);
        assert_eq!(l.tx_hashes, ids(&[1, 2, 3]));
        let empty = propose_txlist(&s.ctx, 1, Vec::new(), 10, &s.keys[0]);
        assert!(empty.tx_hashes.is_empty());
        let capped = propose_txlist(&s.ctx, 2, ids(&[9, 8, 7, 6, 5]), 3, &s.keys[0]);
        assert_eq!(capped.tx_hashes, ids(&[7, 8, 9]));
    }

    fn ballot_for<'a>(
        txs: &'a [Option<&'a Transaction>],
        view: &'a BTreeMap<Address, Utxo>,
        budget: Budget,
        reserved: &'a BTreeSet<Address>,
    ) -> Ballot<'a, BTreeMap<Address, Utxo>> {
        Ballot {
            txs,
            view,
            budget,
            order: None,
            reserved,
            admit: &|_| true,
            body_ok: None,
        }
    }

    fn setup(count: u8) -> (Vec<Transaction>, BTreeMap<Address, Utxo>) {
        let mut view = BTreeMap::new();
        let mut txs = Vec::new();
        for t in 0..count {
            let (k, u) = wallet(t);
            view.insert(u.address, u.clone());
            txs.push(pay(&k, &u, 0));
        }
        txs.sort_by_key(|t| t.id);
        (txs, view)
    }

    #[test]
    fn votes_all_yes_and_budget_unknowns() {
        let s = shard(3);
        let (txs, view) = setup(5);
        let list = propose_txlist(&s.ctx, 0, txs.iter().map(|t| t.id), 10, &s.keys[0]);
        let refs: Vec<Option<&Transaction>> = txs.iter().map(Some).collect();
        let none = BTreeSet::new();
        let dec = vote(&s.ctx, ValidatorId(1), &s.keys[1], &s.keys[0].public, &list,
            ballot_for(&refs, &view, Budget::UNLIMITED, &none)).unwrap();
        assert!(dec.decisions.iter().all(|d| *d == Decision::Yes));
        assert!(verify_txdec(&s.ctx, &list, &dec));

        let dec = vote(&s.ctx, ValidatorId(1), &s.keys[1], &s.keys[0].public, &list,
            ballot_for(&refs, &view, Budget::new(2), &none)).unwrap();
        let yes = dec.decisions.iter().filter(|d| **d == Decision::Yes).count();
        let unknown = dec.decisions.iter().filter(|d| **d == Decision::Unknown).count();
        assert_eq!((yes, unknown), (2, 3));
    }

    #[test]
    fn in_list_double_spend_later_position_loses() {
        let s = shard(3);
        let (k, u) = wallet(1);
        let mut view = BTreeMap::new();
        view.insert(u.address, u.clone());
        let mut txs = [pay(&k, &u, 0), pay(&k, &u, 1)];
        txs.sort_by_key(|t| t.id);
        let list = propose_txlist(&s.ctx, 0, txs.iter().map(|t| t.id), 10, &s.keys[0]);
        let refs: Vec<Option<&Transaction>> = txs.iter().map(Some).collect();
        let none = BTreeSet::new();
        let dec = vote(&s.ctx, ValidatorId(0), &s.keys[0], &s.keys[0].public, &list,
            ballot_for(&refs, &view, Budget::UNLIMITED, &none)).unwrap();
        assert_eq!(dec.decisions, vec![Decision::Yes, Decision::No]);

        // inputs claimed by an earlier in-flight iteration
        let reserved = BTreeSet::from([u.address]);
        let dec = vote(&s.ctx, ValidatorId(0), &s.keys[0], &s.keys[0].public, &list,
            ballot_for(&refs, &view, Budget::UNLIMITED, &reserved)).unwrap();
        assert_eq!(dec.decisions, vec![Decision::No, Decision::No]);
    }

    #[test]
    fn forged_txlist_raises_warning() {
        let s = shard(3);
        let mut list = propose_txlist(&s.ctx, 0, ids(&[1]), 10, &s.keys[0]);
        list.tx_hashes.push(TxId(Hash32([9; 32])));
        let view = BTreeMap::new();
        let none = BTreeSet::new();
        let r = vote(&s.ctx, ValidatorId(1), &s.keys[1], &s.keys[0].public, &list,
            ballot_for(&[], &view, Budget::UNLIMITED, &none));
        assert_eq!(r, Err(WarningReason::BadSignature));
    }

    fn decs_from(s: &Shard, list: &TxList, rows: &[&[Decision]]) -> Vec<TxDec> {
        rows.iter()
            .enumerate()
            .map(|(i, d)| sign_txdec(&s.ctx, ValidatorId(i as u32), &s.keys[i], list, d.to_vec()))
            .collect()
    }

    use Decision::{No as N, Unknown as U, Yes as Y};

    #[test]
    fn inclusion_examples() {
        let s5 = shard(5);
        let (txs, _) = setup(2);
        let list = propose_txlist(&s5.ctx, 0, txs.iter().map(|t| t.id), 10, &s5.keys[0]);
        let decs = decs_from(&s5, &list, &[&[Y, Y], &[Y, Y], &[Y, N], &[N, N], &[U, U]]);
        let (tb, _) = build_block(&s5.ctx, &s5.keys[0], &list, &txs, decs, Hash32::ZERO);
        assert_eq!(tb.txs.iter().map(|t| t.id).collect::<Vec<_>>(), vec![txs[0].id]);

        let s4 = shard(4);
        let list = propose_txlist(&s4.ctx, 0, txs.iter().map(|t| t.id), 10, &s4.keys[0]);
        let decs = decs_from(&s4, &list, &[&[Y, Y], &[Y, Y], &[N, N]]);
        let (tb, _) = build_block(&s4.ctx, &s4.keys[0], &list, &txs, decs, Hash32::ZERO);
        assert!(tb.txs.is_empty());
    }

    #[test]
    fn honest_block_accepted_and_tampering_detected() {
        let s = shard(5);
        let (txs, _) = setup(2);
        let list = propose_txlist(&s.ctx, 0, txs.iter().map(|t| t.id), 10, &s.keys[0]);
        let decs = decs_from(&s, &list, &[&[Y, N], &[Y, N], &[Y, N], &[N, Y], &[Y, Y]]);
        let (tb, set) = build_block(&s.ctx, &s.keys[0], &list, &txs, decs.clone(), Hash32::ZERO);
        let pk = s.keys[0].public;
        let check = check_decset(&s.ctx, &list, &set, &pk);
        for d in &decs {
            assert_eq!(verify_block(&s.ctx, d, &list, &set, &tb, Hash32::ZERO, &pk, check), Verdict::Accept);
        }

        // leader drops member 3's TxDec
        let kept: Vec<TxDec> = decs.iter().filter(|d| d.voter != ValidatorId(3)).cloned().collect();
        let (tb2, set2) = build_block(&s.ctx, &s.keys[0], &list, &txs, kept, Hash32::ZERO);
        let check2 = check_decset(&s.ctx, &list, &set2, &pk);
        assert_eq!(
            verify_block(&s.ctx, &decs[3], &list, &set2, &tb2, Hash32::ZERO, &pk, check2),
            Verdict::Warning(WarningReason::MissingTxDec)
        );

        // leader adds the second tx, which has only 2 of 5 Yes
        let bad = sign_tb(&s.keys[0], &list, txs.clone(), Hash32::ZERO);
        assert_eq!(
            verify_block(&s.ctx, &decs[0], &list, &set, &bad, Hash32::ZERO, &pk, check),
            Verdict::Warning(WarningReason::UnsupportedTx)
        );

        // leader omits the majority tx
        let omit = sign_tb(&s.keys[0], &list, vec![], Hash32::ZERO);
        assert_eq!(
            verify_block(&s.ctx, &decs[0], &list, &set, &omit, Hash32::ZERO, &pk, check),
            Verdict::Warning(WarningReason::OmittedTx)
        );
    }

    #[test]
    fn rolling_thresholds() {
        let s5 = shard(5);
        assert_eq!(tally_warnings(&s5.ctx, 3), TallyResult::Roll);
        assert_eq!(tally_warnings(&s5.ctx, 2), TallyResult::Continue);
        let s4 = shard(4);
        assert_eq!(tally_warnings(&s4.ctx, 2), TallyResult::Roll);
    }

    #[test]
    fn duplicate_and_forged_warnings_ignored() {
        let s = shard(5);
        let mut t = WarningTally::default();
        let w = Warning::new(&s.ctx, 4, ValidatorId(1), &s.keys[1], WarningReason::OmittedTx);
        assert!(t.add(&s.ctx, &w));
        assert!(!t.add(&s.ctx, &w));
        let mut forged = Warning::new(&s.ctx, 4, ValidatorId(2), &s.keys[1], WarningReason::OmittedTx);
        forged.warner = ValidatorId(2);
        assert!(!t.add(&s.ctx, &forged));
        assert_eq!(t.count(4), 1);
        assert_eq!(t.tally(&s.ctx, 4), TallyResult::Continue);
    }

    #[test]
    fn state_machine_phases() {
        let s = shard(3);
        let mut st = ConsensusState::new(1, ShardId(0), ValidatorId(0));
        let l0 = propose_txlist(&s.ctx, 0, ids(&[1]), 10, &s.keys[0]);
        st.open(l0.clone()).unwrap();
        assert_eq!(st.open(l0), Err(ConsensusError::DuplicateTxList(0)));
        let l5 = propose_txlist(&s.ctx, 5, ids(&[1]), 10, &s.keys[0]);
        assert!(matches!(st.open(l5), Err(ConsensusError::OutOfTurn { .. })));
        assert!(st.advance(0, Phase::Verify).is_err());
        st.advance(0, Phase::Aggregate).unwrap();
        st.advance(0, Phase::Verify).unwrap();
        assert_eq!(st.confirm(0, Hash32([1; 32]), 1), Ok(true));
        assert_eq!(st.take_for_rb(), vec![Hash32([1; 32])]);

        let l1 = propose_txlist(&s.ctx, 1, ids(&[2]), 10, &s.keys[0]);
        st.open(l1).unwrap();
        let dropped = st.roll(ValidatorId(2));
        assert_eq!(dropped.len(), 1);
        assert_eq!(st.leader, ValidatorId(2));
        assert!(st.kicked.contains(&ValidatorId(0)));
        assert_eq!(st.next_iteration, 2);
    }

    #[test]
    fn reputation_block_signing_and_chain() {
        let s = shard(5);
        let (txs, _) = setup(2);
        let list = propose_txlist(&s.ctx, 0, txs.iter().map(|t| t.id), 10, &s.keys[0]);
        let decs = decs_from(&s, &list, &[&[Y, N], &[Y, N], &[Y, N], &[N, Y], &[Y, Y]]);
        let (tb, set) = build_block(&s.ctx, &s.keys[0], &list, &txs, decs, Hash32::ZERO);
        let rounds: Vec<RoundRecord> = (0..3)
            .map(|i| RoundRecord {
                tb_hash: Hash32([i; 32]),
                set: set.clone(),
                values: vec![10, 10],
            })
            .collect();
        let sbs = Some(vec![Hash32([7; 32]), Hash32([8; 32])]);
        let mut rb1 = build_reputation_block(&s.ctx, Hash32::ZERO, &rounds, sbs, &ScoringPolicy::default());
        assert_eq!(rb1.confirmed_tb_hashes.len(), 3);
        assert_eq!(rb1.score_deltas.len(), 5);
        assert_eq!(rb1.score_deltas[&ValidatorId(0)], Score::from_units(6));

        // malicious members 3 and 4 abstain
        let honest: Vec<(ValidatorId, &KeyPair)> = (0..3).map(|i| (ValidatorId(i), &s.keys[i as usize])).collect();
        sign_reputation_block(&s.ctx, &mut rb1, &honest).unwrap();
        assert!(verify_reputation_block(&s.ctx, &rb1));
        let mut tampered = rb1.clone();
        tampered.score_deltas.insert(ValidatorId(3), Score::from_units(100));
        assert!(!verify_reputation_block(&s.ctx, &tampered));

        let rounds2 = vec![RoundRecord { tb_hash: tb.hash(), set, values: vec![10, 10] }];
        let mut rb2 = build_reputation_block(&s.ctx, rb1.hash(), &rounds2, None, &ScoringPolicy::default());
        sign_reputation_block(&s.ctx, &mut rb2, &honest).unwrap();
        let mut all_tbs: Vec<Hash32> = rounds.iter().map(|r| r.tb_hash).collect();
        all_tbs.push(tb.hash());
        assert!(rb_chain_intact(&[rb1.clone(), rb2.clone()], Hash32::ZERO, &all_tbs));
        assert!(!rb_chain_intact(&[rb1, rb2], Hash32::ZERO, &all_tbs[..3]));
    }
}
