//! Reputation-ordered sharding and leader selection.
//!
//! Validators are taken in descending score order and each is dropped into
//! a random shard among those currently smallest. The same generator then
//! picks one leader per shard among the members at or above the shard's
//! lower median, weighting by score through `p = y / score`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Seed, SeededRng};
use crate::reputation::ReputationHistory;
use crate::score::Score;
use crate::types::{Epoch, ShardId, ValidatorId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssignmentError {
    #[error("cannot split {n} validators into {k} shards")]
    TooManyShards { n: usize, k: usize },
    #[error("shard count must be at least 1")]
    NoShards,
    #[error("leader selection over an empty shard")]
    EmptyShard,
    #[error("every member of the shard has been kicked")]
    NoSurvivors,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentResult {
    /// Members of each shard in ascending id order.
    pub shards: Vec<Vec<ValidatorId>>,
    pub leaders: Vec<ValidatorId>,
    pub seed: Seed,
}

impl AssignmentResult {
    pub fn shard_of(&self, v: ValidatorId) -> Option<ShardId> {
        self.shards
            .iter()
            .position(|s| s.binary_search(&v).is_ok())
            .map(|i| ShardId(i as u32))
    }

    pub fn k(&self) -> usize {
        self.shards.len()
    }
}

fn score_of(scores: &BTreeMap<ValidatorId, Score>, v: ValidatorId) -> Score {
    scores.get(&v).copied().unwrap_or(Score::ZERO)
}

/// Sharding step. Consumes one `next_int` draw per validator.
pub fn assign_shards(
    rng: &mut SeededRng,
    scores: &BTreeMap<ValidatorId, Score>,
    k: usize,
) -> Result<Vec<Vec<ValidatorId>>, AssignmentError> {
    let n = scores.len();
    if k == 0 {
        return Err(AssignmentError::NoShards);
    }
    if k > n {
        return Err(AssignmentError::TooManyShards { n, k });
    }
    let mut order: Vec<(ValidatorId, Score)> = scores.iter().map(|(v, s)| (*v, *s)).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut shards: Vec<Vec<ValidatorId>> = vec![Vec::new(); k];
    for (v, _) in order {
        let min = shards.iter().map(Vec::len).min().unwrap_or(0);
        let smallest: Vec<usize> = (0..k).filter(|&t| shards[t].len() == min).collect();
        let j = smallest.len() as u64;
        let x = rng.next_int(j);
        let u = (x % j) as usize;
        shards[smallest[u]].push(v);
    }
    for s in &mut shards {
        s.sort();
    }
    Ok(shards)
}

/// Element at index `⌊(m−1)/2⌋` of the ascending scores.
pub fn lower_median(members: &[ValidatorId], scores: &BTreeMap<ValidatorId, Score>) -> Score {
    let mut sorted: Vec<Score> = members.iter().map(|v| score_of(scores, *v)).collect();
    sorted.sort();
    sorted[(sorted.len() - 1) / 2]
}

/// One leader draw. `members` need not be sorted; draws happen in
/// ascending id order and every member consumes one draw.
pub fn select_leader(
    members: &[ValidatorId],
    scores: &BTreeMap<ValidatorId, Score>,
    rng: &mut SeededRng,
) -> Result<ValidatorId, AssignmentError> {
    if members.is_empty() {
        return Err(AssignmentError::EmptyShard);
    }
    let mut sorted = members.to_vec();
    sorted.sort();
    let median = lower_median(&sorted, scores);
    let mut best: Option<(f64, ValidatorId)> = None;
    for &v in &sorted {
        let y = rng.next_unit_f64();
        let score = score_of(scores, v);
        if score < median || !score.is_positive() {
            continue;
        }
        let p = y / score.to_f64();
        if best.is_none_or(|(bp, _)| p < bp) {
            best = Some((p, v));
        }
    }
    match best {
        Some((_, v)) => Ok(v),
        None => Ok(sorted[rng.next_int(sorted.len() as u64) as usize]),
    }
}

/// Leader draw over the members not yet kicked this epoch. The caller
/// passes scores in which kicked leaders are already cleared.
pub fn reselect_leader(
    members: &[ValidatorId],
    kicked: &BTreeSet<ValidatorId>,
    scores: &BTreeMap<ValidatorId, Score>,
    rng: &mut SeededRng,
) -> Result<ValidatorId, AssignmentError> {
    let survivors: Vec<ValidatorId> = members
        .iter()
        .copied()
        .filter(|v| !kicked.contains(v))
        .collect();
    if survivors.is_empty() {
        return Err(AssignmentError::NoSurvivors);
    }
    select_leader(&survivors, scores, rng)
}

/// Generator for the `round`-th reselection in a shard.
pub fn reselection_rng(epoch_seed: Seed, shard: ShardId, round: u32) -> SeededRng {
    SeededRng::new(epoch_seed.child(&format!("reselect/{}/{}", shard.0, round)))
}

/// Full assignment: sharding, then one leader per shard in shard order,
/// all from one stream.
pub fn assign(
    seed: Seed,
    scores: &BTreeMap<ValidatorId, Score>,
    k: usize,
) -> Result<AssignmentResult, AssignmentError> {
    let mut rng = SeededRng::new(seed);
    let shards = assign_shards(&mut rng, scores, k)?;
    let leaders = shards
        .iter()
        .map(|s| select_leader(s, scores, &mut rng))
        .collect::<Result<_, _>>()?;
    Ok(AssignmentResult {
        shards,
        leaders,
        seed,
    })
}

/// Uniform sharding with uniform leaders, ignoring reputation. Used as
/// the comparison baseline.
pub fn assign_random(
    seed: Seed,
    validators: &[ValidatorId],
    k: usize,
) -> Result<AssignmentResult, AssignmentError> {
    if k == 0 {
        return Err(AssignmentError::NoShards);
    }
    if k > validators.len() {
        return Err(AssignmentError::TooManyShards {
            n: validators.len(),
            k,
        });
    }
    let mut rng = SeededRng::new(seed);
    let mut order = validators.to_vec();
    order.sort();
    rng.shuffle(&mut order);
    let mut shards = vec![Vec::new(); k];
    for (i, v) in order.into_iter().enumerate() {
        shards[i % k].push(v);
    }
    for s in &mut shards {
        s.sort();
    }
    let leaders = shards
        .iter()
        .map(|s: &Vec<ValidatorId>| s[rng.next_int(s.len() as u64) as usize])
        .collect();
    Ok(AssignmentResult {
        shards,
        leaders,
        seed,
    })
}

/// Sum of earned scores over epochs `epoch−w+1 ..= epoch`. A validator
/// rolled at epoch `r` contributes nothing from before `r`; its record
/// for `r` itself already holds only what it earned after the clearing.
pub fn cumulative_scores(
    history: &ReputationHistory,
    validators: &[ValidatorId],
    w: u64,
    epoch: Epoch,
) -> BTreeMap<ValidatorId, Score> {
    let first = epoch.saturating_sub(w.saturating_sub(1)).max(1);
    validators
        .iter()
        .map(|&v| {
            let start = history.last_roll(v).map_or(first, |r| r.max(first));
            let total = (start..=epoch).map(|e| history.earned(e, v)).sum();
            (v, total)
        })
        .collect()
}
