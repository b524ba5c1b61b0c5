//! Malicious behaviour as a pure function of what the validator sees.

use repchain_core::consensus::{Verdict, WarningReason};
use repchain_core::crypto::SeededRng;
use repchain_core::Decision;

use crate::config::Adversary;

/// What a malicious validator knows about its surroundings.
#[derive(Clone, Copy, Debug, Default)]
pub struct AdversaryView {
    /// Malicious members are a strict majority of this shard.
    pub local_majority: bool,
    /// The current leader is a fellow attacker.
    pub leader_is_mate: bool,
}

impl AdversaryView {
    fn colluding(&self) -> bool {
        self.local_majority
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeaderPlan {
    Honest,
    /// List a forged transaction and put it in the TB whatever the votes.
    IncludeForged,
    /// Leave a majority-supported transaction out of the TB.
    OmitSupported,
    /// Send no TB at all.
    Silent,
}

#[derive(Clone, Copy, Debug)]
pub enum ProtocolEvent<'a> {
    /// About to propose as leader.
    Lead,
    /// Voting: the decisions an honest member with the same budget would
    /// cast, and which positions hold the leader's forged transaction.
    Vote {
        honest: &'a [Decision],
        forged: &'a [bool],
    },
    /// Checking a TB: what an honest member would conclude.
    Verify { honest: Verdict },
    /// Asked to cosign a reputation or state block.
    Cosign,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Lead(LeaderPlan),
    Vote(Vec<Decision>),
    Warn(Option<WarningReason>),
    Cosign(bool),
}

fn honest_warning(v: Verdict) -> Option<WarningReason> {
    match v {
        Verdict::Accept => None,
        Verdict::Warning(r) => Some(r),
    }
}

pub fn adversary_step(
    strategy: Adversary,
    view: AdversaryView,
    event: ProtocolEvent<'_>,
    rng: &mut SeededRng,
) -> Action {
    match (strategy, event) {
        (Adversary::None, ProtocolEvent::Lead) => Action::Lead(LeaderPlan::Honest),
        (Adversary::None, ProtocolEvent::Vote { honest, .. }) => Action::Vote(honest.to_vec()),
        (Adversary::None, ProtocolEvent::Verify { honest }) => Action::Warn(honest_warning(honest)),
        (_, ProtocolEvent::Cosign) => Action::Cosign(strategy != Adversary::Simple),

        (Adversary::Simple, ProtocolEvent::Lead) => Action::Lead(
            [
                LeaderPlan::IncludeForged,
                LeaderPlan::OmitSupported,
                LeaderPlan::Silent,
            ][rng.next_int(3) as usize],
        ),
        (Adversary::Simple, ProtocolEvent::Vote { honest, .. }) => Action::Vote(
            honest
                .iter()
                .map(|d| match d {
                    Decision::Yes => Decision::No,
                    Decision::No => Decision::Yes,
                    Decision::Unknown => Decision::Unknown,
                })
                .collect(),
        ),
        (Adversary::Simple, ProtocolEvent::Verify { honest }) => {
            Action::Warn(Some(honest_warning(honest).unwrap_or(WarningReason::OmittedTx)))
        }

        (Adversary::Camouflage, ProtocolEvent::Lead) => Action::Lead(LeaderPlan::IncludeForged),
        (Adversary::Camouflage, ProtocolEvent::Vote { honest, .. }) => Action::Vote(honest.to_vec()),
        (Adversary::Camouflage, ProtocolEvent::Verify { honest }) => {
            if view.leader_is_mate {
                Action::Warn(None)
            } else {
                Action::Warn(honest_warning(honest))
            }
        }

        (Adversary::ObserveAct, ProtocolEvent::Lead) => Action::Lead(if view.colluding() {
            LeaderPlan::IncludeForged
        } else {
            LeaderPlan::Honest
        }),
        (Adversary::ObserveAct, ProtocolEvent::Vote { honest, forged }) => {
            let mut out = honest.to_vec();
            if view.colluding() && view.leader_is_mate {
                for (d, f) in out.iter_mut().zip(forged) {
                    if *f {
                        *d = Decision::Yes;
                    }
                }
            }
            Action::Vote(out)
        }
        (Adversary::ObserveAct, ProtocolEvent::Verify { honest }) => {
            if view.colluding() && view.leader_is_mate {
                Action::Warn(None)
            } else {
                Action::Warn(honest_warning(honest))
            }
        }
    }
}
