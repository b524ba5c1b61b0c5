//! Tick-level timing: link delays between two latency regions and the
//! capability model.

use repchain_core::{Tick, ValidatorId};

/// Honest links take `delta` ticks, plus one when the hop crosses regions.
#[derive(Clone, Debug)]
pub struct Network {
    regions: Vec<u8>,
    delta: Tick,
}

impl Network {
    pub fn new(regions: Vec<u8>, delta: Tick) -> Self {
        Network { regions, delta }
    }

    pub fn region(&self, v: ValidatorId) -> u8 {
        self.regions[v.0 as usize]
    }

    pub fn delay(&self, a: ValidatorId, b: ValidatorId) -> Tick {
        self.delta + Tick::from(self.region(a) != self.region(b))
    }

    /// Worst one-hop delay inside a group.
    pub fn max_delay(&self, group: &[ValidatorId]) -> Tick {
        let mut seen = [false; 2];
        for v in group {
            seen[self.region(*v).min(1) as usize] = true;
        }
        self.delta + Tick::from(seen[0] && seen[1])
    }

    /// Worst hop anywhere in the network.
    pub fn diameter(&self) -> Tick {
        let mixed = self.regions.iter().any(|r| *r != self.regions[0]);
        self.delta + Tick::from(mixed)
    }
}

/// Real validations a member of capability `c` manages on one TxList of
/// capacity `capacity`: `⌈c·B⌉`.
pub fn capability_gate(c: f64, capacity: usize) -> u64 {
    // guard against 0.05·100 landing a hair above 5
    ((c * capacity as f64) - 1e-9).ceil().max(1.0) as u64
}

/// Ticks a leader of capability `c` needs to push one proposal out.
pub fn leader_serialization(c: f64, leader_cost: Tick) -> Tick {
    ((leader_cost as f64 / c) - 1e-9).ceil().max(1.0) as Tick
}
