//! Seeded generator for sharding and leader selection.

use std::fmt;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::hash::{Hash32, Hasher};
use crate::codec::{Decode, DecodeError, Encode, Reader};

#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Seed(pub [u8; 32]);

impl fmt::Debug for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Seed({})", &Hash32(self.0).to_hex()[..16])
    }
}

impl fmt::Display for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&Hash32(self.0).to_hex())
    }
}

impl Serialize for Seed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        Hash32(self.0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Seed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Seed(Hash32::deserialize(d)?.0))
    }
}

impl Encode for Seed {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }
}

impl Decode for Seed {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Seed(input.array("seed")?))
    }
}

impl Seed {
    /// A labelled child seed, for independent sub-streams.
    pub fn child(&self, label: &str) -> Seed {
        let mut h = Hasher::new("repchain/seed-child");
        h.part(&self.0).part(label.as_bytes());
        Seed(h.finish().0)
    }

    pub fn from_u64(master: u64) -> Seed {
        let mut h = Hasher::new("repchain/master-seed");
        h.part(&master.to_le_bytes());
        Seed(h.finish().0)
    }
}

/// `hash(label ∥ SBH_1 ∥ … ∥ SBH_k)` with the hashes in shard order.
pub fn derive_seed(state_block_hashes: &[Hash32], label: &str) -> Seed {
    let mut h = Hasher::new("repchain/epoch-seed");
    h.part(label.as_bytes());
    for sbh in state_block_hashes {
        h.part(sbh.as_bytes());
    }
    Seed(h.finish().0)
}

/// ChaCha20 keystream over a 32-byte seed. Output depends only on the seed
/// and the number of values drawn so far.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: Seed,
    inner: ChaCha20Rng,
    drawn: u64,
}

impl SeededRng {
    pub fn new(seed: Seed) -> Self {
        SeededRng {
            seed,
            inner: ChaCha20Rng::from_seed(seed.0),
            drawn: 0,
        }
    }

    pub fn seed(&self) -> Seed {
        self.seed
    }

    /// Number of 64-bit words consumed.
    pub fn stream_position(&self) -> u64 {
        self.drawn
    }

    pub fn next_u64(&mut self) -> u64 {
        self.drawn += 1;
        self.inner.next_u64()
    }

    /// Uniform in `[0, bound)`. Draws are rejected when they fall in the
    /// incomplete top block of the u64 range.
    pub fn next_int(&mut self, bound: u64) -> u64 {
        assert!(bound >= 1, "bound must be positive");
        // 2^64 mod bound, computed without overflow
        let excess = (u64::MAX % bound + 1) % bound;
        let limit = u64::MAX - excess; // accept x <= limit
        loop {
            let x = self.next_u64();
            if excess == 0 || x <= limit {
                return x % bound;
            }
        }
    }

    /// 53 uniform bits scaled into `[0, 1)`.
    pub fn next_unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Bernoulli draw with probability `p`.
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_unit_f64() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_int(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
