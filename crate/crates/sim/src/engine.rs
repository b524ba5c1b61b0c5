//! The discrete-event loop.
//!
//! Time advances one tick at a time. Each tick first lets users act, then
//! processes every queued event for that tick in insertion order. All
//! randomness comes from labelled children of the master seed, so a run is
//! a pure function of its config.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use repchain_core::assignment::{
    assign, assign_random, cumulative_scores, reselect_leader, reselection_rng, AssignmentError,
};
use repchain_core::codec::Encode;
use repchain_core::consensus::{
    build_block, build_reputation_block, check_decset, check_own_dec, decide, propose_txlist,
    rb_chain_intact, sign_reputation_block, sign_tb, sign_txdec, verify_reputation_block,
    verify_tb, Ballot, ConsensusState, Phase, RoundRecord, ShardContext, TallyResult, Verdict,
    Warning, WarningReason,
};
use repchain_core::cross_shard::{
    build_excerpts, excerpt_bytes, route_tx, verify_excerpt, CrossTxState, LockOutcome,
    ProofExcerpt, Resolution, ShardLedger, Status,
};
use repchain_core::crypto::{Hash32, KeyPair, Seed, SeededRng};
use repchain_core::epoch_sync::{build_state_block, synchronize, GlobalEpochState, SyncError};
use repchain_core::reputation::{
    allocate_rewards, outcomes, EpochScoreBook, Outcome, ReputationHistory, ScoringPolicy,
};
use repchain_core::types::{check_tx_body, Budget, ReputationBlock, StateBlock, TransactionBlock};
use repchain_core::{
    Address, Amount, Epoch, Score, ShardId, Tick, Transaction, TxDec, TxDecSet, TxId, TxList,
    Utxo, UtxoState, ValidatorId,
};
use thiserror::Error;

use crate::adversary::{adversary_step, Action, AdversaryView, LeaderPlan, ProtocolEvent};
use crate::config::{Capability, ConfigError, LeaderSelection, ScenarioConfig};
use crate::net::{capability_gate, leader_serialization, Network};
use crate::trace::{Event, ValidatorInfo};
use crate::workload::{arrivals, build_payment, Intent, Lineage, Wallets};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("assignment failed in epoch {epoch}: {source}")]
    Assignment {
        epoch: Epoch,
        #[source]
        source: AssignmentError,
    },
    #[error("invariant `{invariant}` violated at tick {tick} while handling {event}")]
    Invariant {
        invariant: &'static str,
        tick: Tick,
        event: String,
    },
    #[error("epoch {epoch} could not be sealed: {source}")]
    Sync {
        epoch: Epoch,
        #[source]
        source: SyncError,
    },
    #[error("run made no progress by tick {0}")]
    Stalled(Tick),
}

struct Validator {
    info: ValidatorInfo,
    keys: KeyPair,
}

/// Priority inside a mempool: finishing cross-shard commits first frees
/// locks soonest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Role {
    Commit,
    Lock,
    Intra,
}

struct Entry {
    tx: Transaction,
    role: Role,
    seq: u64,
    listed: bool,
}

#[derive(Default)]
struct Mempool {
    entries: BTreeMap<TxId, Entry>,
    order: BTreeSet<(Role, u64, TxId)>,
}

impl Mempool {
    fn insert(&mut self, tx: Transaction, role: Role, seq: u64) {
        self.order.insert((role, seq, tx.id));
        self.entries.insert(
            tx.id,
            Entry {
                tx,
                role,
                seq,
                listed: false,
            },
        );
    }

    fn remove(&mut self, id: &TxId) -> Option<Entry> {
        let e = self.entries.remove(id)?;
        self.order.remove(&(e.role, e.seq, *id));
        Some(e)
    }

    fn set_listed(&mut self, id: &TxId, listed: bool) {
        if let Some(e) = self.entries.get_mut(id) {
            e.listed = listed;
        }
    }

    fn is_listed(&self, id: &TxId) -> bool {
        self.entries.get(id).is_some_and(|e| e.listed)
    }

    fn unlist_all(&mut self) {
        for e in self.entries.values_mut() {
            e.listed = false;
        }
    }
}

/// One iteration between its TxList and its tally.
struct Iter {
    list: TxList,
    set: TxDecSet,
    tb: Option<TransactionBlock>,
    leader: ValidatorId,
    ser: Tick,
    warners: usize,
    inputs: Vec<Address>,
}

struct Shard {
    ctx: ShardContext,
    state: ConsensusState,
    gen: u32,
    ml: Tick,
    mempool: Mempool,
    iters: BTreeMap<u64, Iter>,
    in_flight: BTreeSet<Address>,
    last_built: Hash32,
    rounds: Vec<RoundRecord>,
    rb_genesis: Hash32,
    prev_rb: Hash32,
    rbs: Vec<ReputationBlock>,
    rb_pending: Option<ReputationBlock>,
    first_rb: bool,
    book: EpochScoreBook,
    /// Cross-shard transactions this shard decides, until resolved.
    cross: BTreeMap<TxId, CrossTxState>,
    /// Abort notices seen as a lock shard.
    aborted: BTreeSet<TxId>,
    /// Locks this shard holds for foreign commits.
    locked: BTreeMap<TxId, Transaction>,
    reselect_round: u32,
    reselect_scores: BTreeMap<ValidatorId, Score>,
    local_majority: bool,
    done: bool,
    halted: bool,
    fees: u64,
}

enum Ev {
    BeginEpoch(Epoch),
    Start {
        s: usize,
        epoch: Epoch,
        gen: u32,
    },
    Tally {
        s: usize,
        epoch: Epoch,
        gen: u32,
        iteration: u64,
    },
    RbConfirm {
        s: usize,
        epoch: Epoch,
    },
    Proof {
        to: usize,
        epoch: Epoch,
        excerpt: ProofExcerpt,
    },
    Notice {
        to: usize,
        epoch: Epoch,
        tx: TxId,
        commit: bool,
    },
    Requeue(u64),
    Barrier(Epoch),
}

struct Sim<'c> {
    cfg: &'c ScenarioConfig,
    k: u32,
    master: Seed,
    validators: Vec<Validator>,
    net: Network,
    wallets: Wallets,
    lineages: Vec<Lineage>,
    tx_lineage: HashMap<TxId, u64>,
    used_ids: HashSet<TxId>,
    ledgers: Vec<ShardLedger>,
    shards: Vec<Shard>,
    epoch: Epoch,
    epoch_seed: Seed,
    listing: bool,
    listing_end: Tick,
    payments_stop: Tick,
    barrier_scheduled: bool,
    global: Option<GlobalEpochState>,
    history: ReputationHistory,
    policy: ScoringPolicy,
    queue: BTreeMap<(Tick, u64), Ev>,
    seq: u64,
    mempool_seq: u64,
    now: Tick,
    trace: Vec<Event>,
    bytes: BTreeMap<String, u64>,
    rng_work: SeededRng,
    rng_adv: SeededRng,
    rng_votes: SeededRng,
    body_memo: RefCell<HashMap<TxId, bool>>,
    /// Coins of requeued payments that were still locked; handed back to
    /// their owner once released.
    pending_release: HashSet<Address>,
    state_blocks: Vec<StateBlock>,
    finished: bool,
}

fn invariant(invariant: &'static str, tick: Tick, event: impl Into<String>) -> SimError {
    SimError::Invariant {
        invariant,
        tick,
        event: event.into(),
    }
}

/// Runs a validated config to completion.
pub fn simulate(cfg: &ScenarioConfig) -> Result<(Vec<Event>, Vec<StateBlock>), SimError> {
    let mut sim = Sim::new(cfg);
    let limit = cfg.epochs * (cfg.epoch_ticks * 4 + cfg.t_abort * 4 + 1000);
    sim.schedule(0, Ev::BeginEpoch(1));
    while !sim.finished {
        if sim.now > limit {
            return Err(SimError::Stalled(sim.now));
        }
        sim.workload();
        while let Some(entry) = sim.queue.first_entry() {
            if entry.key().0 != sim.now {
                break;
            }
            let ev = entry.remove();
            sim.handle(ev)?;
            if sim.finished {
                break;
            }
        }
        sim.now += 1;
    }
    Ok((sim.trace, sim.state_blocks))
}

impl<'c> Sim<'c> {
    fn new(cfg: &'c ScenarioConfig) -> Self {
        let master = Seed::from_u64(cfg.seed);
        let scheme = cfg.crypto.scheme();
        let k = cfg.k as u32;

        let mut rng_val = SeededRng::new(master.child("validators"));
        let mut order: Vec<usize> = (0..cfg.n).collect();
        rng_val.shuffle(&mut order);
        let bad: BTreeSet<usize> = order[..cfg.malicious].iter().copied().collect();
        let validators: Vec<Validator> = (0..cfg.n)
            .map(|i| {
                let capability = match cfg.capability {
                    Capability::Fixed(c) => c,
                    Capability::Uniform { lo, hi } => lo + (hi - lo) * rng_val.next_unit_f64(),
                };
                let region = if cfg.two_regions {
                    rng_val.next_int(2) as u8
                } else {
                    0
                };
                Validator {
                    info: ValidatorInfo {
                        id: ValidatorId(i as u32),
                        capability,
                        malicious: bad.contains(&i),
                        region,
                    },
                    keys: KeyPair::from_seed(scheme, master.child(&format!("validator/{i}")).0),
                }
            })
            .collect();
        let net = Network::new(validators.iter().map(|v| v.info.region).collect(), cfg.delta);

        let (wallets, genesis) = Wallets::generate(
            cfg.n * cfg.users_per_validator,
            cfg.genesis_utxos,
            cfg.genesis_value,
            scheme,
            master,
        );
        let mut ledgers: Vec<ShardLedger> = (0..k).map(|s| ShardLedger::new(ShardId(s), k)).collect();
        for u in &genesis {
            ledgers[u.shard(k).index()].insert(u.clone());
        }

        let trace = vec![Event::RunStart {
            config_hash: cfg.hash(),
            k,
            epoch_ticks: cfg.epoch_ticks,
            seconds_per_tick: cfg.seconds_per_tick,
            validators: validators.iter().map(|v| v.info.clone()).collect(),
            genesis,
        }];

        Sim {
            cfg,
            k,
            master,
            validators,
            net,
            wallets,
            lineages: Vec::new(),
            tx_lineage: HashMap::new(),
            used_ids: HashSet::new(),
            ledgers,
            shards: Vec::new(),
            epoch: 0,
            epoch_seed: master,
            listing: false,
            listing_end: 0,
            payments_stop: 0,
            barrier_scheduled: false,
            global: None,
            history: ReputationHistory::default(),
            policy: ScoringPolicy::default(),
            queue: BTreeMap::new(),
            seq: 0,
            mempool_seq: 0,
            now: 0,
            trace,
            bytes: BTreeMap::new(),
            rng_work: SeededRng::new(master.child("workload")),
            rng_adv: SeededRng::new(master.child("adversary")),
            rng_votes: SeededRng::new(master.child("votes")),
            body_memo: RefCell::new(HashMap::new()),
            pending_release: HashSet::new(),
            state_blocks: Vec::new(),
            finished: false,
        }
    }

    fn schedule(&mut self, at: Tick, ev: Ev) {
        self.queue.insert((at, self.seq), ev);
        self.seq += 1;
    }

    fn count(&mut self, what: &str, n: usize) {
        *self.bytes.entry(what.to_string()).or_default() += n as u64;
    }

    fn fault(&mut self, what: String) {
        self.trace.push(Event::Fault {
            tick: self.now,
            what,
        });
    }

    fn is_malicious(&self, v: ValidatorId) -> bool {
        self.validators[v.0 as usize].info.malicious
    }

    fn capability(&self, v: ValidatorId) -> f64 {
        self.validators[v.0 as usize].info.capability
    }

    fn leader_ser(&self, v: ValidatorId) -> Tick {
        leader_serialization(self.capability(v), self.cfg.leader_cost)
    }

    fn view(&self, s: usize) -> AdversaryView {
        let sh = &self.shards[s];
        AdversaryView {
            local_majority: sh.local_majority,
            leader_is_mate: self.is_malicious(sh.state.leader),
        }
    }

    fn cosigns(&mut self, s: usize, v: ValidatorId) -> bool {
        if !self.is_malicious(v) {
            return true;
        }
        let view = self.view(s);
        matches!(
            adversary_step(self.cfg.adversary, view, ProtocolEvent::Cosign, &mut self.rng_adv),
            Action::Cosign(true)
        )
    }

    fn handle(&mut self, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::BeginEpoch(e) => self.begin_epoch(e),
            Ev::Start { s, epoch, gen } => {
                if epoch == self.epoch && self.shards[s].gen == gen {
                    self.start(s)?;
                }
                Ok(())
            }
            Ev::Tally {
                s,
                epoch,
                gen,
                iteration,
            } => {
                if epoch == self.epoch && self.shards[s].gen == gen {
                    self.tally(s, iteration)?;
                }
                Ok(())
            }
            Ev::RbConfirm { s, epoch } => {
                if epoch == self.epoch {
                    self.rb_confirm(s)?;
                }
                Ok(())
            }
            Ev::Proof { to, epoch, excerpt } => {
                if epoch == self.epoch {
                    self.on_proof(to, &excerpt);
                }
                Ok(())
            }
            Ev::Notice {
                to,
                epoch,
                tx,
                commit,
            } => {
                if epoch == self.epoch {
                    self.on_notice(to, tx, commit)?;
                }
                Ok(())
            }
            Ev::Requeue(l) => {
                self.requeue(l);
                Ok(())
            }
            Ev::Barrier(e) => self.barrier(e),
        }
    }

    // ---- users ---------------------------------------------------------

    fn workload(&mut self) {
        if self.epoch == 0 {
            return;
        }
        let users = self.wallets.users.len();
        let fresh = self.now < self.payments_stop;
        let active = self.listing && fresh && self.now + self.cfg.intra_drain_ticks < self.listing_end;
        let arriving = if fresh || self.epoch < self.cfg.epochs {
            arrivals(&mut self.rng_work, self.cfg.workload_rate, self.cfg.n)
        } else {
            0
        };
        for _ in 0..arriving {
            let u = self.rng_work.next_int(users as u64) as usize;
            if self.rng_work.chance(self.cfg.invalid_fraction) {
                if active {
                    self.submit_forged(u);
                }
                continue;
            }
            let cross = self.k > 1 && self.rng_work.chance(self.cfg.cross_shard_fraction);
            self.wallets.enqueue(u, Intent { lineage: None, cross });
        }
        if !self.listing {
            return;
        }
        for u in 0..users {
            let Some(intent) = self.wallets.users[u].queue.front().copied() else {
                continue;
            };
            let hold_back = if intent.cross {
                self.cfg.drain_ticks
            } else {
                self.cfg.intra_drain_ticks
            };
            let fresh_after_stop = intent.lineage.is_none() && self.now >= self.payments_stop;
            if self.now + hold_back >= self.listing_end || fresh_after_stop {
                continue;
            }
            if let Some(tx) = self.pay(u, intent) {
                self.wallets.users[u].queue.pop_front();
                let l = match intent.lineage {
                    Some(l) => l,
                    None => {
                        let l = self.lineages.len() as u64;
                        self.lineages.push(Lineage {
                            id: l,
                            user: u,
                            valid: true,
                            cross: intent.cross,
                            first_submit: self.now,
                            first_epoch: self.epoch,
                            current: None,
                            committed_at: None,
                            closed: false,
                            attempts: 0,
                            coins: Vec::new(),
                        });
                        l
                    }
                };
                let lin = &mut self.lineages[l as usize];
                lin.current = Some(tx.id);
                for input in &tx.inputs {
                    if let Some(c) = self.wallets.users[u].available.remove(&input.address) {
                        lin.coins.push(c);
                    }
                }
                self.submit(tx, Some(l), true);
            }
        }
    }

    /// A fresh id, steered to the intent's kind of route where possible.
    fn unique_payment(
        &self,
        signer: &KeyPair,
        coins: &[Utxo],
        to: repchain_core::crypto::PublicKey,
        want: impl Fn(ShardId) -> bool,
    ) -> Option<Transaction> {
        let k = self.k;
        let used = &self.used_ids;
        build_payment(signer, coins, to, |t| !used.contains(&t.id) && want(t.output_shard(k)), self.now)
            .or_else(|| build_payment(signer, coins, to, |t| !used.contains(&t.id), self.now))
    }

    fn pay(&mut self, u: usize, intent: Intent) -> Option<Transaction> {
        let k = self.k;
        let users = self.wallets.users.len() as u64;
        let first = self.wallets.users[u].available.values().find(|c| c.value >= 3)?.clone();
        let home = first.shard(k);
        let mut coins = vec![first];
        if intent.cross && self.rng_work.chance(0.3) {
            if let Some(c) = self.wallets.users[u]
                .available
                .values()
                .find(|c| c.shard(k) != home)
            {
                coins.push(c.clone());
            }
        }
        let to = if users < 2 {
            u
        } else {
            let r = self.rng_work.next_int(users - 1) as usize;
            if r >= u {
                r + 1
            } else {
                r
            }
        };
        let to_pk = self.wallets.users[to].keys.public;
        let signer = &self.wallets.users[u].keys;
        let tx = if !intent.cross {
            self.unique_payment(signer, &coins, to_pk, |s| s == home)
        } else if coins.len() > 1 {
            self.unique_payment(signer, &coins, to_pk, |_| true)
        } else {
            self.unique_payment(signer, &coins, to_pk, |s| s != home)
        }?;
        self.used_ids.insert(tx.id);
        Some(tx)
    }

    /// A user-submitted spend signed with the wrong key. It should never
    /// commit.
    fn submit_forged(&mut self, u: usize) {
        let k = self.k;
        let Some(coin) = self.wallets.users[u].available.values().find(|c| c.value >= 3).cloned() else {
            return;
        };
        let home = coin.shard(k);
        let forger = &self.wallets.forger;
        let Some(tx) = self.unique_payment(forger, &[coin], forger.public, |s| s == home) else {
            return;
        };
        self.used_ids.insert(tx.id);
        let l = self.lineages.len() as u64;
        self.lineages.push(Lineage {
            id: l,
            user: u,
            valid: false,
            cross: false,
            first_submit: self.now,
            first_epoch: self.epoch,
            current: Some(tx.id),
            committed_at: None,
            closed: false,
            attempts: 0,
            coins: Vec::new(),
        });
        self.submit(tx, Some(l), false);
    }

    fn submit(&mut self, tx: Transaction, lineage: Option<u64>, valid: bool) {
        let route = route_tx(&tx, self.k);
        let out = route.output_shard.index();
        let cross = !route.is_intra();
        let seq = self.mempool_seq;
        self.mempool_seq += 1;
        if let Some(l) = lineage {
            self.tx_lineage.insert(tx.id, l);
        }
        let size = tx.encoded_len();
        let mut reached = self.shards[out].ctx.m();
        if cross {
            self.shards[out]
                .cross
                .insert(tx.id, CrossTxState::new(&tx, self.k, self.now));
            for ls in route.lock_shards() {
                reached += self.shards[ls.index()].ctx.m();
                self.shards[ls.index()]
                    .mempool
                    .insert(tx.clone(), Role::Lock, seq);
            }
        }
        self.count("tx", size * reached);
        self.trace.push(Event::Submitted {
            tick: self.now,
            epoch: self.epoch,
            lineage: lineage.unwrap_or(u64::MAX),
            tx: tx.id,
            valid,
            cross,
        });
        let role = if cross { Role::Commit } else { Role::Intra };
        self.shards[out].mempool.insert(tx, role, seq);
    }

    /// The payment's current attempt failed; try again after `delay`.
    fn retire(&mut self, tx: TxId, delay: Tick) {
        let Some(&l) = self.tx_lineage.get(&tx) else {
            return;
        };
        let lin = &mut self.lineages[l as usize];
        if lin.current != Some(tx) {
            return;
        }
        lin.current = None;
        if lin.valid {
            self.schedule(self.now + delay, Ev::Requeue(l));
        } else {
            lin.closed = true;
        }
    }

    fn requeue(&mut self, l: u64) {
        let k = self.k;
        let lin = &mut self.lineages[l as usize];
        if lin.closed || lin.current.is_some() {
            return;
        }
        for c in std::mem::take(&mut lin.coins) {
            match self.ledgers[c.shard(k).index()].get(&c.address) {
                Some(u) if u.state == UtxoState::Unspent => {
                    let u = u.clone();
                    self.wallets.credit(&u);
                }
                Some(u) if u.state == UtxoState::Locked => {
                    self.pending_release.insert(c.address);
                }
                _ => {}
            }
        }
        lin.attempts += 1;
        let intent = Intent {
            lineage: Some(l),
            cross: lin.cross,
        };
        self.wallets.enqueue(lin.user, intent);
    }

    // ---- epochs --------------------------------------------------------

    fn begin_epoch(&mut self, e: Epoch) -> Result<(), SimError> {
        let ids: Vec<ValidatorId> = (0..self.cfg.n as u32).map(ValidatorId).collect();
        let (seed, scores) = match &self.global {
            Some(g) => (g.seed, g.scores.clone()),
            None => (
                self.master.child("epoch/1"),
                ids.iter().map(|&v| (v, Score::ZERO)).collect(),
            ),
        };
        let a = match self.cfg.leader_selection {
            LeaderSelection::Reputation => assign(seed, &scores, self.cfg.k),
            LeaderSelection::Random => assign_random(seed, &ids, self.cfg.k),
        }
        .map_err(|source| SimError::Assignment { epoch: e, source })?;

        self.epoch = e;
        self.epoch_seed = seed;
        let prev_sbs = self.global.as_ref().map(|g| g.sb_hashes.clone());
        self.shards = a
            .shards
            .iter()
            .enumerate()
            .map(|(s, members)| {
                let ctx = ShardContext {
                    epoch: e,
                    shard: ShardId(s as u32),
                    k: self.k,
                    members: members.clone(),
                    roster: members
                        .iter()
                        .map(|v| self.validators[v.0 as usize].keys.public)
                        .collect(),
                };
                let bad = members.iter().filter(|v| self.is_malicious(**v)).count();
                let reselect_scores = match self.cfg.leader_selection {
                    LeaderSelection::Reputation => members
                        .iter()
                        .map(|v| (*v, scores.get(v).copied().unwrap_or_default()))
                        .collect(),
                    LeaderSelection::Random => BTreeMap::new(),
                };
                let genesis = prev_sbs.as_ref().map_or(Hash32::ZERO, |h| h[s]);
                Shard {
                    state: ConsensusState::new(e, ShardId(s as u32), a.leaders[s]),
                    gen: 0,
                    ml: self.net.max_delay(members),
                    mempool: Mempool::default(),
                    iters: BTreeMap::new(),
                    in_flight: BTreeSet::new(),
                    last_built: Hash32::ZERO,
                    rounds: Vec::new(),
                    rb_genesis: genesis,
                    prev_rb: genesis,
                    rbs: Vec::new(),
                    rb_pending: None,
                    first_rb: true,
                    book: EpochScoreBook::new(members),
                    cross: BTreeMap::new(),
                    aborted: BTreeSet::new(),
                    locked: BTreeMap::new(),
                    reselect_round: 0,
                    reselect_scores,
                    local_majority: 2 * bad > members.len(),
                    done: false,
                    halted: false,
                    fees: 0,
                    ctx,
                }
            })
            .collect();

        self.listing = true;
        self.listing_end = self.now + self.cfg.epoch_ticks;
        self.payments_stop = if e == self.cfg.epochs {
            self.listing_end - self.cfg.drain_ticks
        } else {
            self.listing_end
        };
        self.barrier_scheduled = false;
        self.trace.push(Event::EpochStart {
            tick: self.now,
            epoch: e,
            seed,
            shards: a.shards.clone(),
            leaders: a.leaders.clone(),
        });
        for s in 0..self.shards.len() {
            self.schedule(self.now, Ev::Start { s, epoch: e, gen: 0 });
        }
        Ok(())
    }

    fn barrier(&mut self, e: Epoch) -> Result<(), SimError> {
        // messages still on the wire are delivered before sealing
        for (_, ev) in std::mem::take(&mut self.queue) {
            match ev {
                Ev::Notice {
                    to,
                    epoch,
                    tx,
                    commit,
                } if epoch == e => self.on_notice(to, tx, commit)?,
                Ev::Requeue(l) => self.requeue(l),
                _ => {}
            }
        }
        self.listing = false;

        let k = self.shards.len();
        let mut reissue: BTreeSet<u64> = BTreeSet::new();
        for s in 0..k {
            let pending: Vec<TxId> = self.shards[s].cross.keys().copied().collect();
            for id in pending {
                let Some(mut st) = self.shards[s].cross.remove(&id) else {
                    continue;
                };
                st.force_abort();
                self.shards[s].mempool.remove(&id);
                self.trace.push(Event::CrossAborted {
                    tick: self.now,
                    tx: id,
                    output_shard: ShardId(s as u32),
                    reason: "epoch boundary".into(),
                });
                for ls in st.input_shards.iter().filter(|x| x.index() != s) {
                    let ls = ls.index();
                    self.shards[ls].aborted.insert(id);
                    self.shards[ls].mempool.remove(&id);
                    if let Some(body) = self.shards[ls].locked.remove(&id) {
                        self.release_lock(ls, &body);
                    }
                }
                if let Some(&l) = self.tx_lineage.get(&id) {
                    reissue.insert(l);
                }
            }
        }
        for s in 0..k {
            let sh = &mut self.shards[s];
            for (id, entry) in std::mem::take(&mut sh.mempool.entries) {
                if entry.role != Role::Lock {
                    if let Some(&l) = self.tx_lineage.get(&id) {
                        reissue.insert(l);
                    }
                }
            }
            sh.mempool.order.clear();
            sh.locked.clear();
            if self.ledgers[s].locked_count() > 0 {
                for tx in self.ledgers[s].release_all() {
                    self.fault(format!("shard {s} still held a lock for {tx} at the epoch boundary"));
                }
            }
        }
        // pushed to the front, so the oldest payment goes out first
        for l in reissue.into_iter().rev() {
            let lin = &mut self.lineages[l as usize];
            if lin.closed {
                continue;
            }
            lin.current = None;
            lin.coins.clear();
            if lin.valid {
                lin.attempts += 1;
                let intent = Intent {
                    lineage: Some(l),
                    cross: lin.cross,
                };
                self.wallets.enqueue(lin.user, intent);
            } else {
                lin.closed = true;
            }
        }
        self.pending_release.clear();

        // scores and rewards
        for sh in &self.shards {
            self.history.record_book(e, &sh.book);
        }
        let ids: Vec<ValidatorId> = (0..self.cfg.n as u32).map(ValidatorId).collect();
        let cumulative = cumulative_scores(&self.history, &ids, self.cfg.w, e);
        let mut rewards: BTreeMap<ValidatorId, u64> = BTreeMap::new();
        for sh in &self.shards {
            for (v, a) in allocate_rewards(Amount::from_units(sh.fees), sh.state.leader, &sh.book.earned) {
                *rewards.entry(v).or_default() += a.micros();
            }
        }

        // state blocks
        let mut sbs = Vec::with_capacity(k);
        let mut rosters = Vec::with_capacity(k);
        for s in 0..k {
            let members = self.shards[s].ctx.members.clone();
            let mut signing = Vec::new();
            for (i, v) in members.iter().enumerate() {
                if self.cosigns(s, *v) {
                    signing.push(i);
                }
            }
            let signers: Vec<(usize, &KeyPair)> = signing
                .iter()
                .map(|&i| (i, &self.validators[members[i].0 as usize].keys))
                .collect();
            let scores: BTreeMap<ValidatorId, Score> =
                members.iter().map(|v| (*v, cumulative[v])).collect();
            let utxos: Vec<Utxo> = self.ledgers[s].unspent().cloned().collect();
            let sb = build_state_block(
                e,
                ShardId(s as u32),
                scores,
                utxos,
                &self.shards[s].ctx.roster,
                &signers,
                self.cfg.pow_difficulty,
            )
            .map_err(|source| SimError::Sync { epoch: e, source })?;
            self.count("sb", sb.encoded_len() * self.cfg.n);
            self.trace.push(Event::SbSealed {
                tick: self.now,
                epoch: e,
                shard: ShardId(s as u32),
                hash: sb.hash(),
                utxos: sb.utxo_set.clone(),
            });
            rosters.push(self.shards[s].ctx.roster.clone());
            sbs.push(sb);
        }
        let global = synchronize(e, &sbs, &rosters, self.cfg.pow_difficulty)
            .map_err(|source| SimError::Sync { epoch: e, source })?;
        for s in 0..k {
            let sh = &self.shards[s];
            if !rb_chain_intact(&sh.rbs, sh.rb_genesis, &sh.state.confirmed) {
                self.fault(format!("epoch {e} shard {s}: reputation chain does not cover its TBs"));
            }
        }
        for (ledger, sb) in self.ledgers.iter_mut().zip(&sbs) {
            ledger.replace(sb.utxo_set.clone());
        }
        self.wallets
            .refresh(self.ledgers.iter().flat_map(|l| l.unspent()));

        self.trace.push(Event::EpochSealed {
            tick: self.now,
            epoch: e,
            cumulative: cumulative.iter().map(|(v, s)| (*v, s.micros())).collect(),
            earned: ids
                .iter()
                .map(|v| (*v, self.history.earned(e, *v).micros()))
                .collect(),
            rewards,
        });
        self.state_blocks.extend(sbs);
        self.global = Some(global);

        if e < self.cfg.epochs {
            let max_ser = self
                .shards
                .iter()
                .map(|sh| self.leader_ser(sh.state.leader))
                .max()
                .unwrap_or(1);
            let d = self.net.diameter();
            let next = self.now + max_ser + 4 * d + self.cfg.pow_ticks + d + 1;
            self.schedule(next, Ev::BeginEpoch(e + 1));
        } else {
            self.trace.push(Event::RunEnd {
                tick: self.now,
                bytes: self.bytes.clone(),
            });
            self.finished = true;
        }
        Ok(())
    }

    // ---- consensus -----------------------------------------------------

    fn start(&mut self, s: usize) -> Result<(), SimError> {
        let now = self.now;
        if self.shards[s].done || self.shards[s].halted {
            return Ok(());
        }
        if now >= self.listing_end {
            self.check_done(s);
            return Ok(());
        }
        self.expire_stale(s);

        let leader = self.shards[s].state.leader;
        let plan = if self.is_malicious(leader) {
            let view = self.view(s);
            match adversary_step(self.cfg.adversary, view, ProtocolEvent::Lead, &mut self.rng_adv) {
                Action::Lead(p) => p,
                _ => LeaderPlan::Honest,
            }
        } else {
            LeaderPlan::Honest
        };
        let forging = plan == LeaderPlan::IncludeForged;
        let room = if forging {
            self.cfg.capacity.saturating_sub(1).max(1)
        } else {
            self.cfg.capacity
        };
        let (picked, mut claimed) = self.pick_candidates(s, room);
        let forged = if forging { self.forge(s, &claimed) } else { None };
        let gen = self.shards[s].gen;
        let epoch = self.epoch;
        if picked.is_empty() && forged.is_none() {
            self.schedule(now + 1, Ev::Start { s, epoch, gen });
            return Ok(());
        }
        if let Some(f) = &forged {
            claimed.extend(f.inputs.iter().map(|i| i.address));
        }

        let k = self.k;
        let leader_keys = &self.validators[leader.0 as usize].keys;
        let sh = &self.shards[s];
        let iteration = sh.state.next_iteration;
        let candidates = forged.iter().map(|f| f.id).chain(picked.iter().copied());
        let list = propose_txlist(&sh.ctx, iteration, candidates, self.cfg.capacity, leader_keys);
        let txs: Vec<Transaction> = list
            .tx_hashes
            .iter()
            .map(|id| match &forged {
                Some(f) if f.id == *id => f.clone(),
                _ => sh.mempool.entries[id].tx.clone(),
            })
            .collect();
        let forged_at: Vec<bool> = list
            .tx_hashes
            .iter()
            .map(|id| forged.as_ref().is_some_and(|f| f.id == *id))
            .collect();
        let ready: BTreeSet<TxId> = picked
            .iter()
            .filter(|id| sh.mempool.entries[*id].role == Role::Commit)
            .copied()
            .collect();
        let here = sh.ctx.shard;
        let reserved = sh.in_flight.clone();
        let view = self.view(s);

        // step 2: votes
        let m = sh.ctx.m();
        let len = list.tx_hashes.len();
        let decs: Vec<TxDec> = {
            let memo = &self.body_memo;
            let body_ok = |tx: &Transaction| *memo.borrow_mut().entry(tx.id).or_insert_with(|| check_tx_body(tx));
            let admit = |tx: &Transaction| {
                tx.output_shard(k) != here || !tx.is_cross_shard(k) || ready.contains(&tx.id)
            };
            let bodies: Vec<Option<&Transaction>> = txs.iter().map(Some).collect();
            let ledger = &self.ledgers[s];
            let ballot = |budget: Budget, order: Option<&'_ [usize]>| {
                decide(
                    &list,
                    Ballot {
                        txs: &bodies,
                        view: ledger,
                        budget,
                        order,
                        reserved: &reserved,
                        admit: &admit,
                        body_ok: Some(&body_ok),
                    },
                )
            };
            let full = ballot(Budget::unlimited(), None);
            let mut decs = Vec::with_capacity(m);
            for &v in &sh.ctx.members {
                let budget = capability_gate(self.capability(v), self.cfg.capacity);
                let honest = if budget as usize >= len {
                    full.clone()
                } else {
                    let mut order: Vec<usize> = (0..len).collect();
                    self.rng_votes.shuffle(&mut order);
                    ballot(Budget::new(budget), Some(&order))
                };
                let decisions = if self.is_malicious(v) {
                    let ev = ProtocolEvent::Vote {
                        honest: &honest,
                        forged: &forged_at,
                    };
                    match adversary_step(self.cfg.adversary, view, ev, &mut self.rng_adv) {
                        Action::Vote(d) => d,
                        _ => honest,
                    }
                } else {
                    honest
                };
                decs.push(sign_txdec(
                    &sh.ctx,
                    v,
                    &self.validators[v.0 as usize].keys,
                    &list,
                    decisions,
                ));
            }
            decs
        };

        // step 3: the leader's block
        let prev = sh.last_built;
        let (honest_tb, set) = build_block(&sh.ctx, leader_keys, &list, &txs, decs.clone(), prev);
        let tb = match plan {
            LeaderPlan::Honest => Some(honest_tb),
            LeaderPlan::IncludeForged => {
                let mut body = honest_tb.txs;
                if let Some(f) = &forged {
                    if !body.iter().any(|t| t.id == f.id) {
                        body.push(f.clone());
                    }
                }
                Some(sign_tb(leader_keys, &list, body, prev))
            }
            LeaderPlan::OmitSupported if !honest_tb.txs.is_empty() => {
                Some(sign_tb(leader_keys, &list, honest_tb.txs[1..].to_vec(), prev))
            }
            LeaderPlan::OmitSupported | LeaderPlan::Silent => None,
        };

        // step 4: verification and warnings
        let leader_pk = leader_keys.public;
        let common = match &tb {
            None => Verdict::Warning(WarningReason::LeaderSilent),
            Some(tb) => {
                let decset = check_decset(&sh.ctx, &list, &set, &leader_pk);
                verify_tb(&sh.ctx, &list, &set, tb, prev, &leader_pk, decset)
            }
        };
        let mut warnings = Vec::new();
        for (i, &v) in sh.ctx.members.iter().enumerate() {
            if v == leader {
                continue;
            }
            let honest = match (&tb, check_own_dec(&set, &decs[i])) {
                (Some(_), Err(r)) => Verdict::Warning(r),
                _ => common,
            };
            let reason = if self.is_malicious(v) {
                match adversary_step(
                    self.cfg.adversary,
                    view,
                    ProtocolEvent::Verify { honest },
                    &mut self.rng_adv,
                ) {
                    Action::Warn(r) => r,
                    _ => None,
                }
            } else {
                match honest {
                    Verdict::Accept => None,
                    Verdict::Warning(r) => Some(r),
                }
            };
            if let Some(r) = reason {
                warnings.push(Warning::new(
                    &sh.ctx,
                    iteration,
                    v,
                    &self.validators[v.0 as usize].keys,
                    r,
                ));
            }
        }

        let sizes = [
            ("txlist", list.encoded_len() * m),
            ("txdec", decs.iter().map(Encode::encoded_len).sum::<usize>()),
            ("txdecset", set.encoded_len() * m),
            ("tb", tb.as_ref().map_or(0, |t| t.encoded_len() * m)),
            ("warning", warnings.iter().map(|w| w.encoded_len() * m).sum()),
        ];
        for (what, n) in sizes {
            self.count(what, n);
        }

        let ser = self.leader_ser(leader);
        let sh = &mut self.shards[s];
        sh.state
            .open(list.clone())
            .map_err(|e| invariant("iterations open in turn", now, e.to_string()))?;
        let mut warners = 0;
        for w in &warnings {
            if sh.state.warnings.add(&sh.ctx, w) {
                warners += 1;
            }
        }
        for id in &picked {
            sh.mempool.set_listed(id, true);
        }
        sh.in_flight.extend(claimed.iter().copied());
        if let Some(tb) = &tb {
            sh.last_built = tb.hash();
        }
        let ml = sh.ml;
        sh.iters.insert(
            iteration,
            Iter {
                list,
                set,
                tb,
                leader,
                ser,
                warners,
                inputs: claimed.into_iter().collect(),
            },
        );
        // TxDecs are back once the list has gone out and one round trip
        // has passed; only then may the next list follow
        let collected = now + ser + 2 * ml + 1;
        self.trace.push(Event::TxListProposed {
            tick: now,
            epoch,
            shard: ShardId(s as u32),
            iteration,
            leader,
            size: len,
            decs_collected: collected,
        });
        self.schedule(collected + ser + 2 * ml, Ev::Tally { s, epoch, gen, iteration });
        self.schedule(collected, Ev::Start { s, epoch, gen });
        Ok(())
    }

    /// Mempool entries that can be listed now, in priority order, and the
    /// local inputs they claim.
    fn pick_candidates(&mut self, s: usize, room: usize) -> (Vec<TxId>, BTreeSet<Address>) {
        let k = self.k;
        let ledger = &self.ledgers[s];
        let Shard {
            ctx,
            mempool,
            cross,
            in_flight,
            ..
        } = &mut self.shards[s];
        let here = ctx.shard;
        let mut picked = Vec::new();
        let mut claimed = BTreeSet::new();
        for &(role, _, id) in &mempool.order {
            if picked.len() == room {
                break;
            }
            let entry = &mempool.entries[&id];
            if entry.listed {
                continue;
            }
            if role == Role::Commit && cross.get_mut(&id).map(|c| c.status()) != Some(Status::Ready) {
                continue;
            }
            let local: Vec<Address> = entry
                .tx
                .inputs
                .iter()
                .filter(|i| i.shard(k) == here)
                .map(|i| i.address)
                .collect();
            // spent or missing inputs are listed anyway and voted down
            let blocked = local.iter().any(|a| {
                in_flight.contains(a)
                    || claimed.contains(a)
                    || ledger.get(a).is_some_and(|u| u.state == UtxoState::Locked)
            });
            if blocked {
                continue;
            }
            claimed.extend(local);
            picked.push(id);
        }
        (picked, claimed)
    }

    /// A spend of some shard-local coin under the forger's key, routed to
    /// stay inside the shard.
    fn forge(&mut self, s: usize, claimed: &BTreeSet<Address>) -> Option<Transaction> {
        let sh = &self.shards[s];
        let coins: Vec<&Utxo> = self.ledgers[s]
            .unspent()
            .filter(|u| u.value >= 3 && !sh.in_flight.contains(&u.address) && !claimed.contains(&u.address))
            .collect();
        if coins.is_empty() {
            return None;
        }
        let coin = coins[self.rng_adv.next_int(coins.len() as u64) as usize].clone();
        let here = ShardId(s as u32);
        let forger = &self.wallets.forger;
        let k = self.k;
        let used = &self.used_ids;
        let tx = build_payment(
            forger,
            &[coin],
            forger.public,
            |t| !used.contains(&t.id) && t.output_shard(k) == here,
            self.now,
        )?;
        self.used_ids.insert(tx.id);
        Some(tx)
    }

    fn expire_stale(&mut self, s: usize) {
        let sh = &self.shards[s];
        let stale: Vec<TxId> = sh
            .cross
            .iter()
            .filter(|(id, st)| {
                st.resolution == Resolution::Pending
                    && !sh.mempool.is_listed(id)
                    && self.now >= st.opened_at + self.cfg.t_abort
            })
            .map(|(id, _)| *id)
            .collect();
        for id in stale {
            self.abort_cross(s, id, "timeout");
        }
    }

    fn tally(&mut self, s: usize, iteration: u64) -> Result<(), SimError> {
        let Some(iter) = self.shards[s].iters.remove(&iteration) else {
            return Ok(());
        };
        let sh = &self.shards[s];
        let roll = sh.state.warnings.tally(&sh.ctx, iteration) == TallyResult::Roll || iter.tb.is_none();
        if roll {
            self.roll(s, iteration, iter.warners);
        } else {
            self.confirm(s, iteration, iter)?;
        }
        self.check_done(s);
        Ok(())
    }

    fn confirm(&mut self, s: usize, iteration: u64, iter: Iter) -> Result<(), SimError> {
        let now = self.now;
        let k = self.k;
        let Iter {
            list,
            set,
            tb,
            leader,
            ser,
            inputs,
            ..
        } = iter;
        let tb = tb.expect("confirmed iterations carry a TB");
        let tb_hash = tb.hash();
        let sh = &mut self.shards[s];
        let fail = |e: repchain_core::consensus::ConsensusError| invariant("phases advance in order", now, e.to_string());
        sh.state.advance(iteration, Phase::Aggregate).map_err(fail)?;
        sh.state.advance(iteration, Phase::Verify).map_err(fail)?;
        let rb_due = sh.state.confirm(iteration, tb_hash, self.cfg.rho).map_err(fail)?;
        let m = sh.ctx.m();
        for a in &inputs {
            sh.in_flight.remove(a);
        }
        self.trace.push(Event::TbConfirmed {
            tick: now,
            epoch: self.epoch,
            shard: ShardId(s as u32),
            iteration,
            tb: tb_hash,
            leader,
            txs: tb.txs.clone(),
        });

        let in_tb: BTreeSet<TxId> = tb.txs.iter().map(|t| t.id).collect();
        for tx in &tb.txs {
            self.apply_included(s, tx, tb_hash)?;
        }
        let results = outcomes(&set, list.tx_hashes.len(), m);
        for (id, outcome) in list.tx_hashes.iter().zip(&results) {
            if in_tb.contains(id) {
                continue;
            }
            if *outcome == Outcome::Rejected {
                self.reject(s, *id);
            } else {
                self.shards[s].mempool.set_listed(id, false);
            }
        }

        let d = self.net.diameter();
        for ex in build_excerpts(&list, &set, k) {
            self.count("proof", excerpt_bytes(&ex));
            let to = ex.output_shard.index();
            self.schedule(
                now + ser + d,
                Ev::Proof {
                    to,
                    epoch: self.epoch,
                    excerpt: ex,
                },
            );
        }
        let values = tb_values(&list, &tb);
        let sh = &mut self.shards[s];
        sh.rounds.push(RoundRecord {
            tb_hash,
            set,
            values,
        });
        if rb_due && sh.rb_pending.is_none() {
            self.issue_rb(s);
        }
        Ok(())
    }

    fn apply_included(&mut self, s: usize, tx: &Transaction, tb: Hash32) -> Result<(), SimError> {
        let now = self.now;
        let route = route_tx(tx, self.k);
        let lineage = self.tx_lineage.get(&tx.id).copied();
        if route.output_shard.index() == s {
            self.ledgers[s]
                .commit(tx)
                .map_err(|e| invariant("confirmed spends apply to the ledger", now, format!("tx {}: {e}", tx.id)))?;
            let sh = &mut self.shards[s];
            sh.fees += tx.fee;
            sh.mempool.remove(&tx.id);
            for u in tx.output_utxos() {
                self.wallets.credit(&u);
            }
            let cross = !route.is_intra();
            if cross {
                let committed = sh.cross.remove(&tx.id).map(|mut st| st.commit());
                if !matches!(committed, Some(Ok(()))) {
                    self.fault(format!("cross-shard tx {} committed without a ready proof set", tx.id));
                }
                let d = self.net.diameter();
                for ls in route.lock_shards() {
                    self.count("notice", NOTICE_BYTES);
                    self.schedule(
                        now + d,
                        Ev::Notice {
                            to: ls.index(),
                            epoch: self.epoch,
                            tx: tx.id,
                            commit: true,
                        },
                    );
                }
            }
            if let Some(l) = lineage {
                let lin = &mut self.lineages[l as usize];
                if lin.current == Some(tx.id) {
                    lin.current = None;
                    lin.closed = true;
                    lin.committed_at = Some(now);
                    lin.coins.clear();
                }
            }
            self.trace.push(Event::Committed {
                tick: now,
                epoch: self.epoch,
                shard: ShardId(s as u32),
                tb,
                tx: tx.id,
                lineage,
                cross,
            });
        } else {
            self.shards[s].mempool.remove(&tx.id);
            if self.ledgers[s].lock_inputs(tx) == LockOutcome::Reject {
                self.fault(format!("shard {s} confirmed a lock for {} it cannot take", tx.id));
                return Ok(());
            }
            if self.shards[s].aborted.contains(&tx.id) {
                self.release_lock(s, tx);
            } else {
                self.shards[s].locked.insert(tx.id, tx.clone());
            }
        }
        Ok(())
    }

    fn reject(&mut self, s: usize, id: TxId) {
        let Some(entry) = self.shards[s].mempool.remove(&id) else {
            return;
        };
        match entry.role {
            Role::Intra => self.retire(id, 1),
            Role::Commit => self.abort_cross(s, id, "rejected by the output shard"),
            // the Reject travels in the proof
            Role::Lock => {}
        }
    }

    fn roll(&mut self, s: usize, iteration: u64, warners: usize) {
        let now = self.now;
        let seed = self.epoch_seed;
        let sh = &mut self.shards[s];
        let kicked = sh.state.leader;
        sh.book.apply_rolling_penalty(kicked);
        sh.reselect_scores.insert(kicked, Score::ZERO);
        let mut excluded = sh.state.kicked.clone();
        excluded.insert(kicked);
        let mut rng = reselection_rng(seed, ShardId(s as u32), sh.reselect_round);
        sh.reselect_round += 1;
        let next = reselect_leader(&sh.ctx.members, &excluded, &sh.reselect_scores, &mut rng);
        let new_leader = next.as_ref().copied().unwrap_or(kicked);
        sh.state.roll(new_leader);
        sh.mempool.unlist_all();
        sh.iters.clear();
        sh.in_flight.clear();
        sh.gen += 1;
        sh.last_built = sh.state.last_tb_hash;
        let gen = sh.gen;
        self.trace.push(Event::Rolling {
            tick: now,
            epoch: self.epoch,
            shard: ShardId(s as u32),
            iteration,
            kicked,
            new_leader,
            warners,
        });
        if next.is_err() {
            self.shards[s].halted = true;
            self.fault(format!("shard {s} kicked every member"));
            self.check_done(s);
        } else {
            self.schedule(now + 1, Ev::Start { s, epoch: self.epoch, gen });
        }
    }

    fn issue_rb(&mut self, s: usize) {
        let tbs = self.shards[s].state.take_for_rb();
        let rounds = std::mem::take(&mut self.shards[s].rounds);
        if rounds.iter().map(|r| r.tb_hash).ne(tbs.iter().copied()) {
            self.fault(format!("shard {s}: rounds and confirmed TBs disagree"));
        }
        let members = self.shards[s].ctx.members.clone();
        let mut signing = Vec::new();
        for v in &members {
            if self.cosigns(s, *v) {
                signing.push(*v);
            }
        }
        let prev_sbs = if self.shards[s].first_rb {
            self.global.as_ref().map(|g| g.sb_hashes.clone())
        } else {
            None
        };
        let sh = &self.shards[s];
        let mut rb = build_reputation_block(&sh.ctx, sh.prev_rb, &rounds, prev_sbs, &self.policy);
        let signers: Vec<(ValidatorId, &KeyPair)> = signing
            .iter()
            .map(|v| (*v, &self.validators[v.0 as usize].keys))
            .collect();
        let signed = sign_reputation_block(&sh.ctx, &mut rb, &signers);
        let m = sh.ctx.m();
        let delay = self.leader_ser(sh.state.leader) + 4 * sh.ml;
        if let Err(e) = signed {
            self.fault(format!("shard {s}: reputation block not signed: {e}"));
        }
        self.count("rb", rb.encoded_len() * m);
        let sh = &mut self.shards[s];
        sh.first_rb = false;
        sh.rb_pending = Some(rb);
        self.schedule(self.now + delay, Ev::RbConfirm { s, epoch: self.epoch });
    }

    fn rb_confirm(&mut self, s: usize) -> Result<(), SimError> {
        let Some(rb) = self.shards[s].rb_pending.take() else {
            return Ok(());
        };
        let sh = &mut self.shards[s];
        let valid = verify_reputation_block(&sh.ctx, &rb);
        if valid {
            sh.book.apply_rb(&rb.score_deltas);
        }
        let hash = rb.hash();
        sh.prev_rb = hash;
        let tbs = rb.confirmed_tb_hashes.clone();
        sh.rbs.push(rb);
        let again = sh.state.confirmed_since_rb.len() >= self.cfg.rho;
        if !valid {
            self.fault(format!("shard {s}: reputation block lacks a majority cosignature"));
        }
        self.trace.push(Event::RbConfirmed {
            tick: self.now,
            epoch: self.epoch,
            shard: ShardId(s as u32),
            rb: hash,
            tbs,
        });
        if again {
            self.issue_rb(s);
        }
        self.check_done(s);
        Ok(())
    }

    fn check_done(&mut self, s: usize) {
        let sh = &self.shards[s];
        if sh.done || (self.now < self.listing_end && !sh.halted) {
            return;
        }
        if !sh.iters.is_empty() || sh.rb_pending.is_some() {
            return;
        }
        if !sh.state.confirmed_since_rb.is_empty() {
            self.issue_rb(s);
            return;
        }
        self.shards[s].done = true;
        if !self.barrier_scheduled && self.shards.iter().all(|sh| sh.done) {
            self.barrier_scheduled = true;
            let at = self.now + self.net.diameter();
            self.schedule(at, Ev::Barrier(self.epoch));
        }
    }

    // ---- cross-shard messages -----------------------------------------

    fn abort_cross(&mut self, s: usize, id: TxId, reason: &str) {
        let Some(mut st) = self.shards[s].cross.remove(&id) else {
            return;
        };
        st.force_abort();
        self.shards[s].mempool.remove(&id);
        let d = self.net.diameter();
        for ls in st.input_shards.iter().filter(|x| x.index() != s) {
            self.count("notice", NOTICE_BYTES);
            self.schedule(
                self.now + d,
                Ev::Notice {
                    to: ls.index(),
                    epoch: self.epoch,
                    tx: id,
                    commit: false,
                },
            );
        }
        self.trace.push(Event::CrossAborted {
            tick: self.now,
            tx: id,
            output_shard: ShardId(s as u32),
            reason: reason.to_string(),
        });
        self.retire(id, 2 * d + 1);
    }

    fn release_lock(&mut self, s: usize, tx: &Transaction) {
        let n = self.ledgers[s].release(tx.id);
        if n > 0 {
            self.trace.push(Event::LockReleased {
                tick: self.now,
                shard: ShardId(s as u32),
                tx: tx.id,
                inputs: n,
            });
        }
        for input in &tx.inputs {
            if self.pending_release.remove(&input.address) {
                if let Some(u) = self.ledgers[s].get(&input.address) {
                    if u.state == UtxoState::Unspent {
                        let u = u.clone();
                        self.wallets.credit(&u);
                    }
                }
            }
        }
    }

    fn on_notice(&mut self, to: usize, tx: TxId, commit: bool) -> Result<(), SimError> {
        if commit {
            if self.shards[to].locked.remove(&tx).is_none() {
                self.fault(format!("shard {to} told to spend a lock it does not hold for {tx}"));
                return Ok(());
            }
            let n = self.ledgers[to]
                .spend_locked(tx)
                .map_err(|e| invariant("locked inputs can be spent", self.now, format!("tx {tx}: {e}")))?;
            self.trace.push(Event::LockSpent {
                tick: self.now,
                shard: ShardId(to as u32),
                tx,
                inputs: n,
            });
        } else {
            let sh = &mut self.shards[to];
            sh.aborted.insert(tx);
            sh.mempool.remove(&tx);
            if let Some(body) = sh.locked.remove(&tx) {
                self.release_lock(to, &body);
            }
        }
        Ok(())
    }

    fn on_proof(&mut self, to: usize, ex: &ProofExcerpt) {
        let from = ex.from_shard.index();
        let Some(verdicts) = verify_excerpt(&self.shards[from].ctx, ex) else {
            self.fault(format!("shard {to} received a proof from shard {from} that does not verify"));
            return;
        };
        for (id, verdict) in verdicts {
            let Some(st) = self.shards[to].cross.get_mut(&id) else {
                continue;
            };
            st.record(ex.from_shard, verdict);
            if st.status() == Status::Aborted {
                self.abort_cross(to, id, "rejected by an input shard");
            }
        }
    }
}

/// Rough size of a commit or abort notice: tx id, shard, flag, signature.
const NOTICE_BYTES: usize = 32 + 4 + 1 + 64;

/// Output value of every listed transaction, in list order.
fn tb_values(list: &TxList, tb: &TransactionBlock) -> Vec<u64> {
    let by_id: BTreeMap<TxId, &Transaction> = tb.txs.iter().map(|t| (t.id, t)).collect();
    list.tx_hashes
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .and_then(|t| t.output_total())
                .unwrap_or(0)
        })
        .collect()
}
