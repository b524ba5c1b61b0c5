//! The event trace: everything the checkers and metrics need, in order.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use repchain_core::crypto::{Hash32, Seed};
use repchain_core::{Epoch, ShardId, Tick, Transaction, TxId, Utxo, ValidatorId};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidatorInfo {
    pub id: ValidatorId,
    pub capability: f64,
    pub malicious: bool,
    pub region: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RunStart {
        config_hash: Hash32,
        k: u32,
        epoch_ticks: Tick,
        seconds_per_tick: f64,
        validators: Vec<ValidatorInfo>,
        genesis: Vec<Utxo>,
    },
    EpochStart {
        tick: Tick,
        epoch: Epoch,
        seed: Seed,
        shards: Vec<Vec<ValidatorId>>,
        leaders: Vec<ValidatorId>,
    },
    Submitted {
        tick: Tick,
        epoch: Epoch,
        lineage: u64,
        tx: TxId,
        valid: bool,
        cross: bool,
    },
    TxListProposed {
        tick: Tick,
        epoch: Epoch,
        shard: ShardId,
        iteration: u64,
        leader: ValidatorId,
        size: usize,
        /// When the leader holds every TxDec for this list.
        decs_collected: Tick,
    },
    /// A TB joined a shard's chain. `txs` is the block's content.
    TbConfirmed {
        tick: Tick,
        epoch: Epoch,
        shard: ShardId,
        iteration: u64,
        tb: Hash32,
        leader: ValidatorId,
        txs: Vec<Transaction>,
    },
    /// A payment took effect at its output shard.
    Committed {
        tick: Tick,
        epoch: Epoch,
        shard: ShardId,
        tb: Hash32,
        tx: TxId,
        lineage: Option<u64>,
        cross: bool,
    },
    Rolling {
        tick: Tick,
        epoch: Epoch,
        shard: ShardId,
        iteration: u64,
        kicked: ValidatorId,
        new_leader: ValidatorId,
        warners: usize,
    },
    RbConfirmed {
        tick: Tick,
        epoch: Epoch,
        shard: ShardId,
        rb: Hash32,
        tbs: Vec<Hash32>,
    },
    CrossAborted {
        tick: Tick,
        tx: TxId,
        output_shard: ShardId,
        reason: String,
    },
    LockReleased {
        tick: Tick,
        shard: ShardId,
        tx: TxId,
        inputs: usize,
    },
    LockSpent {
        tick: Tick,
        shard: ShardId,
        tx: TxId,
        inputs: usize,
    },
    SbSealed {
        tick: Tick,
        epoch: Epoch,
        shard: ShardId,
        hash: Hash32,
        utxos: Vec<Utxo>,
    },
    EpochSealed {
        tick: Tick,
        epoch: Epoch,
        /// Window-cumulative score of every validator, in micro-units.
        cumulative: BTreeMap<ValidatorId, i64>,
        earned: BTreeMap<ValidatorId, i64>,
        rewards: BTreeMap<ValidatorId, u64>,
    },
    /// Something the engine noticed that should never happen.
    Fault { tick: Tick, what: String },
    RunEnd {
        tick: Tick,
        bytes: BTreeMap<String, u64>,
    },
}

impl Event {
    pub fn tick(&self) -> Tick {
        match self {
            Event::RunStart { .. } => 0,
            Event::EpochStart { tick, .. }
            | Event::Submitted { tick, .. }
            | Event::TxListProposed { tick, .. }
            | Event::TbConfirmed { tick, .. }
            | Event::Committed { tick, .. }
            | Event::Rolling { tick, .. }
            | Event::RbConfirmed { tick, .. }
            | Event::CrossAborted { tick, .. }
            | Event::LockReleased { tick, .. }
            | Event::LockSpent { tick, .. }
            | Event::SbSealed { tick, .. }
            | Event::EpochSealed { tick, .. }
            | Event::Fault { tick, .. }
            | Event::RunEnd { tick, .. } => *tick,
        }
    }
}

/// One JSON object per line.
pub fn write_ndjson<W: Write>(out: &mut W, trace: &[Event]) -> io::Result<()> {
    for ev in trace {
        serde_json::to_writer(&mut *out, ev)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ndjson<R: BufRead>(input: R) -> io::Result<Vec<Event>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(io::Error::other)?);
    }
    Ok(out)
}
