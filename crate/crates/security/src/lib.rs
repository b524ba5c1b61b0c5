//! Epoch failure probability under random and reputation-based sharding.
//!
//! `n` validators, `g` of them malicious, are split into `k` shards of
//! `m = n/k`. A shard is safe while it holds at most `d = ⌊(m−1)/2⌋`
//! malicious members. Counts are exact big integers and probabilities exact
//! rationals; decimals appear only when rendering.

mod brute;
mod decimal;
mod formula;

pub use brute::{brute_force_failure, BRUTE_FORCE_LIMIT};
pub use decimal::{render_sig, Probability};
pub use formula::{
    binomial, camouflage, failure_probability, safe_allocations, sweep_csv, sweep_exposed,
    tolerance, Camouflage, CamouflageBound, SweepRow,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SecurityError {
    #[error("k must be positive")]
    NoShards,
    #[error("k={k} does not divide n={n}; shards must be equal")]
    Uneven { n: u64, k: u64 },
    #[error("g={g} exceeds n={n}")]
    TooManyMalicious { n: u64, g: u64 },
    #[error("exposed count a={a} exceeds g={g}")]
    TooManyExposed { a: u64, g: u64 },
    #[error(
        "enumeration needs {placements} placements, over the limit of {limit}; \
         use the recursive formula or a smaller instance"
    )]
    TooLarge { placements: String, limit: u64 },
}

/// Validated `(n, k, g)` with the derived shard size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Instance {
    pub n: u64,
    pub k: u64,
    pub g: u64,
    pub m: u64,
}

impl Instance {
    pub fn new(n: u64, k: u64, g: u64) -> Result<Self, SecurityError> {
        if k == 0 {
            return Err(SecurityError::NoShards);
        }
        if !n.is_multiple_of(k) {
            return Err(SecurityError::Uneven { n, k });
        }
        if g > n {
            return Err(SecurityError::TooManyMalicious { n, g });
        }
        Ok(Instance { n, k, g, m: n / k })
    }

    pub fn d(&self) -> u64 {
        tolerance(self.m)
    }
}
