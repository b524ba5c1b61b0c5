//! Hashing, signatures, collective signing, proof-of-work and the seeded
//! random generator.
//!
//! Every function here is a pure function of its inputs. Signatures are
//! deterministic so simulation replays are bit-stable.

mod cosign;
mod hash;
mod keys;
mod pow;
mod rng;

pub use cosign::{
    cosign, cosign_verify, majority_threshold, Aggregate, CollectiveSignature, CosignError,
    Challenge, CosignLeader, Cosigner, Commitment, Response, SignerBitmap,
};
pub use hash::{sha256, Hash32, Hasher};
pub use keys::{sign, verify, KeyPair, PublicKey, Scheme, SecretKey, Signature};
pub use pow::{leading_zero_bits, pow_hash, pow_solve, pow_verify, MAX_DIFFICULTY_BITS};
pub use rng::{derive_seed, Seed, SeededRng};
