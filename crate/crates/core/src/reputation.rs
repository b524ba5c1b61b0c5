//! Reputation arithmetic: per-decision scores weighted by transaction
//! value, the per-epoch book, the multi-epoch history and fee rewards.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{Amount, Score};
use crate::types::{Decision, Epoch, TxDecSet, ValidatorId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringPolicy {
    pub s_correct: Score,
    pub s_unknown: Score,
    pub s_wrong_no: Score,
    pub s_wrong_yes: Score,
}

impl Default for ScoringPolicy {
    fn default() -> Self {
        ScoringPolicy {
            s_correct: Score::from_micros(100_000),
            s_unknown: Score::ZERO,
            s_wrong_no: Score::from_micros(-500_000),
            s_wrong_yes: Score::from_micros(-1_000_000),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("scoring constants out of order: need wrong_yes ≤ wrong_no ≤ unknown ≤ correct and |wrong_yes| ≥ |wrong_no| ≥ correct")]
pub struct PolicyError;

impl ScoringPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let ordered = self.s_wrong_yes <= self.s_wrong_no
            && self.s_wrong_no <= self.s_unknown
            && self.s_unknown <= self.s_correct;
        let magnitudes = self.s_wrong_yes.micros().abs() >= self.s_wrong_no.micros().abs()
            && self.s_wrong_no.micros().abs() >= self.s_correct.micros().abs();
        if ordered && magnitudes {
            Ok(())
        } else {
            Err(PolicyError)
        }
    }
}

/// The shard's verdict on one proposed transaction, read off the votes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    /// More than half of the shard voted Yes; the transaction is in the TB.
    Included,
    /// More than half voted No.
    Rejected,
    /// Neither side has a majority, usually because of Unknowns. Nobody is
    /// scored and the transaction is proposed again.
    Undecided,
}

pub fn outcome(yes: usize, no: usize, m: usize) -> Outcome {
    if 2 * yes > m {
        Outcome::Included
    } else if 2 * no > m {
        Outcome::Rejected
    } else {
        Outcome::Undecided
    }
}

/// Outcome of every position of a TxDecSet.
pub fn outcomes(set: &TxDecSet, len: usize, m: usize) -> Vec<Outcome> {
    (0..len)
        .map(|i| {
            let mut yes = 0;
            let mut no = 0;
            for d in &set.decs {
                match d.decisions.get(i) {
                    Some(Decision::Yes) => yes += 1,
                    Some(Decision::No) => no += 1,
                    _ => {}
                }
            }
            outcome(yes, no, m)
        })
        .collect()
}

/// `Σ S(decision, outcome) · T` over the decided transactions.
pub fn score_delta(
    decisions: &[Decision],
    outcomes: &[Outcome],
    values: &[u64],
    policy: &ScoringPolicy,
) -> Score {
    decisions
        .iter()
        .zip(outcomes)
        .zip(values)
        .map(|((d, o), &t)| {
            let s = match (d, o) {
                (Decision::Unknown, _) => policy.s_unknown,
                (_, Outcome::Undecided) => Score::ZERO,
                (Decision::Yes, Outcome::Included) | (Decision::No, Outcome::Rejected) => {
                    policy.s_correct
                }
                (Decision::Yes, Outcome::Rejected) => policy.s_wrong_yes,
                (Decision::No, Outcome::Included) => policy.s_wrong_no,
            };
            s.times(t)
        })
        .sum()
}

/// Deltas for every member from one round's TxDecSet. Members without a
/// TxDec in the set get zero.
pub fn round_deltas(
    members: &[ValidatorId],
    set: &TxDecSet,
    values: &[u64],
    policy: &ScoringPolicy,
) -> BTreeMap<ValidatorId, Score> {
    let outs = outcomes(set, values.len(), members.len());
    members
        .iter()
        .map(|&v| {
            let delta = set
                .dec_of(v)
                .map_or(Score::ZERO, |d| score_delta(&d.decisions, &outs, values, policy));
            (v, delta)
        })
        .collect()
}

pub fn merge_deltas(into: &mut BTreeMap<ValidatorId, Score>, from: &BTreeMap<ValidatorId, Score>) {
    for (v, s) in from {
        *into.entry(*v).or_default() += *s;
    }
}

/// One shard's running book for the current epoch.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochScoreBook {
    pub earned: BTreeMap<ValidatorId, Score>,
    pub rb_deltas: Vec<BTreeMap<ValidatorId, Score>>,
    pub rolled: BTreeSet<ValidatorId>,
}

impl EpochScoreBook {
    pub fn new(members: &[ValidatorId]) -> Self {
        EpochScoreBook {
            earned: members.iter().map(|&v| (v, Score::ZERO)).collect(),
            ..Default::default()
        }
    }

    pub fn apply_rb(&mut self, deltas: &BTreeMap<ValidatorId, Score>) {
        merge_deltas(&mut self.earned, deltas);
        self.rb_deltas.push(deltas.clone());
    }

    /// Clears the leader's epoch score; the history forgets its earlier
    /// epochs once the book is recorded.
    pub fn apply_rolling_penalty(&mut self, leader: ValidatorId) {
        self.earned.insert(leader, Score::ZERO);
        self.rolled.insert(leader);
    }

    pub fn score(&self, v: ValidatorId) -> Score {
        self.earned.get(&v).copied().unwrap_or_default()
    }
}

/// Earned score per epoch plus the most recent rolling of each validator.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReputationHistory {
    earned: BTreeMap<Epoch, BTreeMap<ValidatorId, Score>>,
    last_roll: BTreeMap<ValidatorId, Epoch>,
}

impl ReputationHistory {
    /// Adds earned scores for `epoch` (several shards may contribute).
    pub fn record(&mut self, epoch: Epoch, earned: &BTreeMap<ValidatorId, Score>) {
        merge_deltas(self.earned.entry(epoch).or_default(), earned);
    }

    pub fn record_book(&mut self, epoch: Epoch, book: &EpochScoreBook) {
        // the book already holds only post-rolling earnings
        for &v in &book.rolled {
            self.mark_rolled(v, epoch);
        }
        self.record(epoch, &book.earned);
    }

    fn mark_rolled(&mut self, v: ValidatorId, epoch: Epoch) {
        let r = self.last_roll.entry(v).or_insert(epoch);
        *r = (*r).max(epoch);
    }

    /// Zeroes everything `v` earned up to and including `epoch` as far as
    /// cumulative scores are concerned.
    pub fn roll(&mut self, v: ValidatorId, epoch: Epoch) {
        self.earned.entry(epoch).or_default().insert(v, Score::ZERO);
        self.mark_rolled(v, epoch);
    }

    pub fn earned(&self, epoch: Epoch, v: ValidatorId) -> Score {
        self.earned
            .get(&epoch)
            .and_then(|m| m.get(&v))
            .copied()
            .unwrap_or_default()
    }

    pub fn last_roll(&self, v: ValidatorId) -> Option<Epoch> {
        self.last_roll.get(&v).copied()
    }

    pub fn epochs(&self) -> impl Iterator<Item = Epoch> + '_ {
        self.earned.keys().copied()
    }
}

/// `validator,epoch,delta,cumulative` rows, cumulative over window `w`.
pub fn score_csv(history: &ReputationHistory, validators: &[ValidatorId], w: u64) -> String {
    let mut out = String::from("validator,epoch,delta,cumulative\n");
    for e in history.epochs() {
        let cumulative = crate::assignment::cumulative_scores(history, validators, w, e);
        for &v in validators {
            let _ = writeln!(out, "{},{},{},{}", v.0, e, history.earned(e, v), cumulative[&v]);
        }
    }
    out
}

/// Half of the fees (rounded down) to the leader; the rest split among the
/// other members in proportion to their non-negative epoch scores, or
/// equally when none is positive. Rounding leftovers go to the leader, so
/// the shares always sum to `fees`.
pub fn allocate_rewards(
    fees: Amount,
    leader: ValidatorId,
    epoch_scores: &BTreeMap<ValidatorId, Score>,
) -> BTreeMap<ValidatorId, Amount> {
    let total = fees.micros();
    let leader_half = total / 2;
    let pool = total - leader_half;
    let others: Vec<(ValidatorId, u64)> = epoch_scores
        .iter()
        .filter(|(v, _)| **v != leader)
        .map(|(v, s)| (*v, s.micros().max(0) as u64))
        .collect();

    let mut rewards = BTreeMap::new();
    let mut paid = 0u64;
    if !others.is_empty() {
        let weight: u128 = others.iter().map(|(_, w)| *w as u128).sum();
        for &(v, w) in &others {
            let share = if weight == 0 {
                pool / others.len() as u64
            } else {
                (pool as u128 * w as u128 / weight) as u64
            };
            paid += share;
            rewards.insert(v, Amount::from_micros(share));
        }
    }
    rewards.insert(leader, Amount::from_micros(total - paid));
    rewards
}
