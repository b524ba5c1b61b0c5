//! Report figures computed from a trace alone.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use repchain_core::crypto::Hash32;
use repchain_core::{Epoch, Score, Tick, TxId, ValidatorId};
use serde::{Deserialize, Serialize};

use crate::checker::{check_trace, SafetyReport};
use crate::trace::Event;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: Epoch,
    pub start_tick: Tick,
    /// Start of the next epoch, or the end of the run.
    pub end_tick: Tick,
    pub committed: u64,
    pub throughput: f64,
    pub rollings: u64,
    /// From the last RB of the previous epoch to this epoch's first TxList.
    pub transition_latency: Option<Tick>,
    pub leaders: Vec<ValidatorId>,
    pub malicious_per_shard: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidatorRow {
    pub id: ValidatorId,
    pub capability: f64,
    pub malicious: bool,
    /// Window-cumulative reputation at the end of each epoch.
    pub cumulative: Vec<f64>,
    pub earned: Vec<f64>,
    pub rewards: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Liveness {
    pub valid_submitted: u64,
    pub committed: u64,
    /// Committed, but two or more epochs after first submission.
    pub late: u64,
    pub uncommitted: u64,
    pub invalid_submitted: u64,
}

impl Liveness {
    pub fn holds(&self) -> bool {
        self.late == 0 && self.uncommitted == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub ticks: Tick,
    pub seconds_per_tick: f64,
    pub committed: u64,
    pub cross_committed: u64,
    pub cross_aborted: u64,
    /// Committed transactions per simulated second.
    pub throughput: f64,
    /// Mean ticks from first submission to the confirming RB.
    pub mean_latency_ticks: f64,
    pub rolling_events: u64,
    pub epochs: Vec<EpochRow>,
    pub validators: Vec<ValidatorRow>,
    pub bytes: BTreeMap<String, u64>,
    pub liveness: Liveness,
    pub safety: SafetyReport,
    /// Rank correlation of capability with final reputation, honest
    /// validators only.
    pub capability_reputation_spearman: Option<f64>,
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // ties share the average rank
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            out[p] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman's rho with average ranks for ties. `None` when either side is
/// constant or the inputs are too short.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn units(micros: i64) -> f64 {
    Score::from_micros(micros).to_f64()
}

pub fn collect_metrics(trace: &[Event]) -> MetricsReport {
    let mut rep = MetricsReport {
        safety: check_trace(trace),
        ..Default::default()
    };
    let mut malicious: BTreeMap<ValidatorId, bool> = BTreeMap::new();
    let mut rows: BTreeMap<ValidatorId, ValidatorRow> = BTreeMap::new();
    let mut epochs: BTreeMap<Epoch, EpochRow> = BTreeMap::new();
    let mut first_list: BTreeMap<Epoch, Tick> = BTreeMap::new();
    let mut last_rb: BTreeMap<Epoch, Tick> = BTreeMap::new();
    let mut rb_tick_of_tb: HashMap<Hash32, Tick> = HashMap::new();
    // lineage -> (first submit tick, first epoch, valid)
    let mut lineages: BTreeMap<u64, (Tick, Epoch, bool)> = BTreeMap::new();
    let mut commits: Vec<(u64, Tick, Epoch, Hash32)> = Vec::new();
    let mut commit_ticks: Vec<Tick> = Vec::new();

    for ev in trace {
        match ev {
            Event::RunStart {
                config_hash,
                seconds_per_tick,
                validators,
                ..
            } => {
                rep.config_hash = config_hash.to_hex();
                rep.seconds_per_tick = *seconds_per_tick;
                for v in validators {
                    malicious.insert(v.id, v.malicious);
                    rows.insert(
                        v.id,
                        ValidatorRow {
                            id: v.id,
                            capability: v.capability,
                            malicious: v.malicious,
                            ..Default::default()
                        },
                    );
                }
            }
            Event::EpochStart {
                tick,
                epoch,
                shards,
                leaders,
                ..
            } => {
                epochs.insert(
                    *epoch,
                    EpochRow {
                        epoch: *epoch,
                        start_tick: *tick,
                        leaders: leaders.clone(),
                        malicious_per_shard: shards
                            .iter()
                            .map(|s| s.iter().filter(|v| malicious.get(v) == Some(&true)).count())
                            .collect(),
                        ..Default::default()
                    },
                );
            }
            Event::Submitted {
                tick,
                epoch,
                lineage,
                valid,
                ..
            } => {
                lineages.entry(*lineage).or_insert((*tick, *epoch, *valid));
            }
            Event::TxListProposed { tick, epoch, .. } => {
                first_list.entry(*epoch).or_insert(*tick);
            }
            Event::Committed {
                tick,
                epoch,
                tb,
                lineage,
                cross,
                ..
            } => {
                rep.committed += 1;
                rep.cross_committed += u64::from(*cross);
                commit_ticks.push(*tick);
                if let Some(l) = lineage {
                    commits.push((*l, *tick, *epoch, *tb));
                }
            }
            Event::Rolling { epoch, .. } => {
                rep.rolling_events += 1;
                if let Some(row) = epochs.get_mut(epoch) {
                    row.rollings += 1;
                }
            }
            Event::RbConfirmed { tick, epoch, tbs, .. } => {
                for tb in tbs {
                    rb_tick_of_tb.insert(*tb, *tick);
                }
                last_rb.insert(*epoch, *tick);
            }
            Event::CrossAborted { .. } => rep.cross_aborted += 1,
            Event::EpochSealed {
                cumulative,
                earned,
                rewards,
                ..
            } => {
                for (v, row) in rows.iter_mut() {
                    row.cumulative.push(units(cumulative.get(v).copied().unwrap_or(0)));
                    row.earned.push(units(earned.get(v).copied().unwrap_or(0)));
                    row.rewards += rewards.get(v).copied().unwrap_or(0) as f64 / Score::SCALE as f64;
                }
            }
            Event::RunEnd { tick, bytes } => {
                rep.ticks = *tick;
                rep.bytes = bytes.clone();
            }
            _ => {}
        }
    }

    let spt = rep.seconds_per_tick.max(f64::MIN_POSITIVE);
    if rep.ticks > 0 {
        rep.throughput = rep.committed as f64 / (rep.ticks as f64 * spt);
    }

    let starts: Vec<(Epoch, Tick)> = epochs.values().map(|r| (r.epoch, r.start_tick)).collect();
    for (i, (e, _)) in starts.iter().enumerate() {
        let end = starts.get(i + 1).map_or(rep.ticks, |(_, t)| *t);
        let row = epochs.get_mut(e).expect("row exists");
        row.end_tick = end;
        row.committed = commit_ticks
            .iter()
            .filter(|t| **t >= row.start_tick && **t < end)
            .count() as u64;
        let span = end.saturating_sub(row.start_tick);
        if span > 0 {
            row.throughput = row.committed as f64 / (span as f64 * spt);
        }
        if *e > 1 {
            if let (Some(prev), Some(first)) = (last_rb.get(&(e - 1)), first_list.get(e)) {
                row.transition_latency = Some(first.saturating_sub(*prev));
            }
        }
    }

    // latency and liveness per lineage
    let mut committed_lineages: BTreeMap<u64, (Tick, Epoch, Hash32)> = BTreeMap::new();
    for (l, t, e, tb) in commits {
        committed_lineages.entry(l).or_insert((t, e, tb));
    }
    let (mut lat_sum, mut lat_n) = (0u128, 0u64);
    for (l, (submit, first_epoch, valid)) in &lineages {
        if !*valid {
            rep.liveness.invalid_submitted += 1;
            continue;
        }
        rep.liveness.valid_submitted += 1;
        match committed_lineages.get(l) {
            Some((_, e, tb)) => {
                rep.liveness.committed += 1;
                if *e >= first_epoch + 2 {
                    rep.liveness.late += 1;
                }
                if let Some(rb_tick) = rb_tick_of_tb.get(tb) {
                    lat_sum += u128::from(rb_tick.saturating_sub(*submit));
                    lat_n += 1;
                }
            }
            None => rep.liveness.uncommitted += 1,
        }
    }
    if lat_n > 0 {
        rep.mean_latency_ticks = lat_sum as f64 / lat_n as f64;
    }
    rep.validators = rows.into_values().collect();
    let honest: Vec<&ValidatorRow> = rep.validators.iter().filter(|r| !r.malicious).collect();
    let caps: Vec<f64> = honest.iter().map(|r| r.capability).collect();
    let reps: Vec<f64> = honest
        .iter()
        .map(|r| r.cumulative.last().copied().unwrap_or(0.0))
        .collect();
    rep.capability_reputation_spearman = spearman(&caps, &reps);
    rep.epochs = epochs.into_values().collect();
    rep
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn epochs_csv(&self) -> String {
        let mut out = String::from(
            "epoch,start_tick,end_tick,committed,throughput,rollings,transition_latency\n",
        );
        for r in &self.epochs {
            let tl = r.transition_latency.map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{},{}",
                r.epoch, r.start_tick, r.end_tick, r.committed, r.throughput, r.rollings, tl
            );
        }
        out
    }

    /// One row per validator and epoch.
    pub fn reputation_csv(&self) -> String {
        let mut out = String::from("validator,capability,malicious,epoch,earned,cumulative\n");
        for v in &self.validators {
            for (i, (c, e)) in v.cumulative.iter().zip(&v.earned).enumerate() {
                let _ = writeln!(
                    out,
                    "{},{:.4},{},{},{:.6},{:.6}",
                    v.id.0,
                    v.capability,
                    v.malicious,
                    i + 1,
                    e,
                    c
                );
            }
        }
        out
    }

    pub fn bytes_csv(&self) -> String {
        let mut out = String::from("message,bytes\n");
        for (k, v) in &self.bytes {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    /// Honest cumulative reputation median at the end of `epoch` (1-based).
    pub fn honest_median(&self, epoch: usize) -> Option<f64> {
        let mut xs: Vec<f64> = self
            .validators
            .iter()
            .filter(|v| !v.malicious)
            .filter_map(|v| v.cumulative.get(epoch - 1).copied())
            .collect();
        if xs.is_empty() {
            return None;
        }
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        Some(if n % 2 == 1 {
            xs[n / 2]
        } else {
            (xs[n / 2 - 1] + xs[n / 2]) / 2.0
        })
    }

    /// Mean throughput over epochs `from..=to`, weighting by duration.
    pub fn throughput_over(&self, from: Epoch, to: Epoch) -> f64 {
        let rows: Vec<&EpochRow> = self
            .epochs
            .iter()
            .filter(|r| r.epoch >= from && r.epoch <= to)
            .collect();
        let committed: u64 = rows.iter().map(|r| r.committed).sum();
        let span: u64 = rows.iter().map(|r| r.end_tick - r.start_tick).sum();
        if span == 0 {
            0.0
        } else {
            committed as f64 / (span as f64 * self.seconds_per_tick)
        }
    }
}

/// Quick lookup of which tx committed where, for tests and reports.
pub fn committed_ids(trace: &[Event]) -> Vec<TxId> {
    trace
        .iter()
        .filter_map(|e| match e {
            Event::Committed { tx, .. } => Some(*tx),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        // monotone but nonlinear still gives 1
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 8.0, 27.0, 64.0]), Some(1.0));
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    fn start() -> Event {
        Event::RunStart {
            config_hash: Hash32::ZERO,
            k: 1,
            epoch_ticks: 10,
            seconds_per_tick: 1.0,
            validators: vec![],
            genesis: vec![],
        }
    }

    #[test]
    fn one_commit_in_a_hundred_ticks() {
        let tb = Hash32::ZERO;
        let trace = vec![
            start(),
            Event::EpochStart {
                tick: 0,
                epoch: 1,
                seed: repchain_core::crypto::Seed::from_u64(0),
                shards: vec![],
                leaders: vec![],
            },
            Event::Submitted {
                tick: 5,
                epoch: 1,
                lineage: 0,
                tx: TxId::default(),
                valid: true,
                cross: false,
            },
            Event::Committed {
                tick: 11,
                epoch: 1,
                shard: Default::default(),
                tb,
                tx: TxId::default(),
                lineage: Some(0),
                cross: false,
            },
            Event::RbConfirmed {
                tick: 17,
                epoch: 1,
                shard: Default::default(),
                rb: Hash32::ZERO,
                tbs: vec![tb],
            },
            Event::RunEnd {
                tick: 100,
                bytes: BTreeMap::new(),
            },
        ];
        let m = collect_metrics(&trace);
        assert_eq!(m.committed, 1);
        assert!((m.throughput - 0.01).abs() < 1e-12);
        assert_eq!(m.mean_latency_ticks, 12.0);
        assert!(m.liveness.holds());
        assert_eq!(m.epochs[0].committed, 1);
    }
}
