//! Omniscient safety and atomicity checks over a finished trace.
//!
//! The checker keeps its own copy of the global UTXO set, built from the
//! genesis allocation and advanced only by confirmed TBs, lock releases
//! and state blocks. It never looks at engine state.

use std::collections::{BTreeMap, BTreeSet};

use repchain_core::cross_shard::route_tx;
use repchain_core::epoch_sync::consolidate_utxos;
use repchain_core::types::check_tx_body;
use repchain_core::{Address, Epoch, ShardId, Transaction, TxId, Utxo};
use serde::{Deserialize, Serialize};

use crate::trace::Event;

const MAX_DETAILS: usize = 20;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyReport {
    /// Confirmed TB entries that spend or lock coins they had no right to.
    pub invalid_commits: u64,
    /// Cross-shard transactions that both committed and released, or
    /// committed without every lock being spent.
    pub atomicity_violations: u64,
    /// State blocks whose UTXO set differs from the consolidated replay.
    pub consolidation_mismatches: u64,
    pub engine_faults: u64,
    /// Where invalid commits happened.
    pub unsafe_rounds: BTreeSet<(Epoch, ShardId)>,
    pub details: Vec<String>,
}

impl SafetyReport {
    pub fn is_clean(&self) -> bool {
        self.invalid_commits == 0
            && self.atomicity_violations == 0
            && self.consolidation_mismatches == 0
            && self.engine_faults == 0
    }

    fn note(&mut self, what: String) {
        if self.details.len() < MAX_DETAILS {
            self.details.push(what);
        }
    }
}

#[derive(Clone, Debug)]
struct Coin {
    utxo: Utxo,
    lock: Option<TxId>,
}

#[derive(Default)]
struct Replay {
    k: u32,
    coins: BTreeMap<Address, Coin>,
    committed: BTreeSet<TxId>,
    aborted: BTreeSet<TxId>,
    /// Lock shards still owing a spend confirmation, per committed tx.
    owed: BTreeMap<TxId, BTreeSet<ShardId>>,
    report: SafetyReport,
}

impl Replay {
    fn matches(coin: &Coin, input: &repchain_core::types::TxInput) -> bool {
        coin.utxo.owner == input.owner
            && coin.utxo.value == input.value
            && coin.utxo.origin_tx == input.origin_tx
    }

    fn invalid(&mut self, epoch: Epoch, shard: ShardId, tx: &Transaction, why: &str) {
        self.report.invalid_commits += 1;
        self.report.unsafe_rounds.insert((epoch, shard));
        self.report.note(format!("epoch {epoch} shard {shard}: tx {} {why}", tx.id));
    }

    fn tb_entry(&mut self, epoch: Epoch, shard: ShardId, tx: &Transaction) {
        let route = route_tx(tx, self.k);
        let body_ok = check_tx_body(tx);
        if !body_ok {
            self.invalid(epoch, shard, tx, "has a bad body or signature");
        }
        if shard == route.output_shard {
            let mut ok = body_ok;
            for input in &tx.inputs {
                let local = input.shard(self.k) == shard;
                let fine = match self.coins.get(&input.address) {
                    Some(c) if Self::matches(c, input) => {
                        if local {
                            c.lock.is_none()
                        } else {
                            c.lock == Some(tx.id)
                        }
                    }
                    _ => false,
                };
                ok &= fine;
            }
            if body_ok && !ok {
                self.invalid(epoch, shard, tx, "spends a coin that is missing, spent or not locked for it");
            }
            for input in &tx.inputs {
                self.coins.remove(&input.address);
            }
            for u in tx.output_utxos() {
                self.coins.insert(u.address, Coin { utxo: u, lock: None });
            }
            if !route.is_intra() {
                if self.aborted.contains(&tx.id) {
                    self.atomicity(tx.id, "committed after an abort");
                }
                self.committed.insert(tx.id);
                let owed: BTreeSet<ShardId> = route.lock_shards().collect();
                self.owed.insert(tx.id, owed);
            }
        } else {
            let mut ok = body_ok;
            for input in tx.inputs.iter().filter(|i| i.shard(self.k) == shard) {
                match self.coins.get_mut(&input.address) {
                    Some(c) if Self::matches(c, input) && c.lock.is_none() => c.lock = Some(tx.id),
                    _ => ok = false,
                }
            }
            if body_ok && !ok {
                self.invalid(epoch, shard, tx, "locks a coin that is missing or already locked");
            }
        }
    }

    fn atomicity(&mut self, tx: TxId, why: &str) {
        self.report.atomicity_violations += 1;
        self.report.note(format!("tx {tx} {why}"));
    }

    fn released(&mut self, shard: ShardId, tx: TxId) {
        if self.committed.contains(&tx) {
            self.atomicity(tx, "released after commit");
        }
        for c in self.coins.values_mut() {
            if c.lock == Some(tx) && c.utxo.shard(self.k) == shard {
                c.lock = None;
            }
        }
    }

    fn spent(&mut self, shard: ShardId, tx: TxId) {
        let cleared = self.owed.get_mut(&tx).is_some_and(|owed| owed.remove(&shard));
        if !cleared {
            self.atomicity(tx, "lock spent without a matching commit");
        }
    }

    fn state_block(&mut self, epoch: Epoch, shard: ShardId, utxos: &[Utxo]) {
        let k = self.k;
        let mut mine = Vec::new();
        let mut locked = 0;
        self.coins.retain(|_, c| {
            if c.utxo.shard(k) != shard {
                return true;
            }
            if c.lock.is_some() {
                locked += 1;
            }
            mine.push(c.utxo.clone());
            false
        });
        if locked > 0 {
            self.report.atomicity_violations += 1;
            self.report
                .note(format!("epoch {epoch} shard {shard}: {locked} coins still locked at sealing"));
        }
        let expected = consolidate_utxos(mine);
        if expected != utxos {
            self.report.consolidation_mismatches += 1;
            let sum = |v: &[Utxo]| v.iter().map(|u| u.value).sum::<u64>();
            self.report.note(format!(
                "epoch {epoch} shard {shard}: state block holds {} coins worth {}, replay gives {} worth {}",
                utxos.len(),
                sum(utxos),
                expected.len(),
                sum(&expected)
            ));
        }
        for u in utxos {
            self.coins.insert(u.address, Coin { utxo: u.clone(), lock: None });
        }
    }
}

pub fn check_trace(trace: &[Event]) -> SafetyReport {
    let mut r = Replay::default();
    for ev in trace {
        match ev {
            Event::RunStart { k, genesis, .. } => {
                r.k = *k;
                for u in genesis {
                    r.coins.insert(u.address, Coin { utxo: u.clone(), lock: None });
                }
            }
            Event::TbConfirmed { epoch, shard, txs, .. } => {
                for tx in txs {
                    r.tb_entry(*epoch, *shard, tx);
                }
            }
            Event::CrossAborted { tx, .. } => {
                if r.committed.contains(tx) {
                    r.atomicity(*tx, "aborted after commit");
                }
                r.aborted.insert(*tx);
            }
            Event::LockReleased { shard, tx, .. } => r.released(*shard, *tx),
            Event::LockSpent { shard, tx, .. } => r.spent(*shard, *tx),
            Event::SbSealed { epoch, shard, utxos, .. } => r.state_block(*epoch, *shard, utxos),
            Event::Fault { tick, what } => {
                r.report.engine_faults += 1;
                r.report.note(format!("tick {tick}: {what}"));
            }
            _ => {}
        }
    }
    let unpaid: Vec<TxId> = r
        .owed
        .iter()
        .filter(|(_, owed)| !owed.is_empty())
        .map(|(tx, _)| *tx)
        .collect();
    for tx in unpaid {
        r.atomicity(tx, "committed but some input shard never spent its lock");
    }
    r.report
}
