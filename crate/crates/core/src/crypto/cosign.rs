//! Collective signing in two rounds: announcement/commitment, then
//! challenge/response. The leader drives both rounds; the result is one
//! aggregate plus a bitmap naming the signers.

use std::collections::BTreeMap;
use std::fmt;

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_TABLE;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::Identity;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::hash::Hasher;
use super::keys::{fast_tag, wide_scalar, KeyPair, PublicKey, Scheme, SecretKey};
use crate::codec::{Decode, DecodeError, Encode, Reader};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CosignError {
    #[error("participant {0} is not in the roster")]
    NotInRoster(usize),
    #[error("roster mixes signature schemes")]
    MixedRoster,
    #[error("participant key does not match roster entry {0}")]
    KeyMismatch(usize),
    #[error("commitment round already closed")]
    RoundClosed,
    #[error("challenge not issued yet")]
    NoChallenge,
    #[error("participant {0} did not commit")]
    NotCommitted(usize),
    #[error("participant {0} aborted before responding")]
    MissingResponse(usize),
    #[error("invalid response from participant {0}")]
    InvalidResponse(usize),
    #[error("no participants")]
    Empty,
}

/// Fixed-length signer mask over the roster.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignerBitmap {
    len: u32,
    bits: Vec<u8>,
}

impl fmt::Debug for SignerBitmap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = (0..self.len())
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect();
        write!(f, "SignerBitmap({s})")
    }
}

impl SignerBitmap {
    pub fn new(len: usize) -> Self {
        SignerBitmap {
            len: len as u32,
            bits: vec![0; len.div_ceil(8)],
        }
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.len(), "bitmap index {i} out of range");
        self.bits[i / 8] |= 1 << (i % 8);
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.len() && self.bits[i / 8] & (1 << (i % 8)) != 0
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn signers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.get(i))
    }

    fn is_well_formed(&self) -> bool {
        self.bits.len() == self.len().div_ceil(8)
            && (self.len().is_multiple_of(8)
                || self.bits.last().is_none_or(|b| b >> (self.len() % 8) == 0))
    }
}

impl Encode for SignerBitmap {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.len.encode_to(out);
        out.extend_from_slice(&self.bits);
    }
}

impl Decode for SignerBitmap {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let len = u32::decode_from(input)?;
        let bits = input.take((len as usize).div_ceil(8), "bitmap")?.to_vec();
        let bm = SignerBitmap { len, bits };
        if !bm.is_well_formed() {
            return Err(DecodeError::Invariant("bitmap padding bits set".into()));
        }
        Ok(bm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aggregate {
    Schnorr {
        commitment: [u8; 32],
        response: [u8; 32],
    },
    Fast([u8; 32]),
}

impl Encode for Aggregate {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            Aggregate::Schnorr {
                commitment,
                response,
            } => {
                out.push(0);
                out.extend_from_slice(commitment);
                out.extend_from_slice(response);
            }
            Aggregate::Fast(tag) => {
                out.push(1);
                out.extend_from_slice(tag);
            }
        }
    }
}

impl Decode for Aggregate {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match u8::decode_from(input)? {
            0 => Ok(Aggregate::Schnorr {
                commitment: input.array("commitment")?,
                response: input.array("response")?,
            }),
            1 => Ok(Aggregate::Fast(input.array("aggregate")?)),
            tag => Err(DecodeError::InvalidTag { what: "aggregate", tag }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CollectiveSignature {
    pub signer_bitmap: SignerBitmap,
    pub aggregate: Aggregate,
}

crate::struct_codec!(CollectiveSignature { signer_bitmap, aggregate });

impl CollectiveSignature {
    pub fn signer_count(&self) -> usize {
        self.signer_bitmap.popcount()
    }

    /// Placeholder carried by a block body before signing.
    pub fn unsigned(roster_len: usize) -> Self {
        CollectiveSignature {
            signer_bitmap: SignerBitmap::new(roster_len),
            aggregate: Aggregate::Fast([0u8; 32]),
        }
    }
}

/// `⌊m/2⌋ + 1`: strictly more than half of the roster.
pub fn majority_threshold(m: usize) -> usize {
    m / 2 + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Commitment(pub [u8; 32]);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Response(pub [u8; 32]);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Challenge {
    pub bitmap: SignerBitmap,
    pub aggregate_commitment: [u8; 32],
}

fn roster_scheme(roster: &[PublicKey]) -> Result<Scheme, CosignError> {
    let first = roster.first().ok_or(CosignError::Empty)?.scheme;
    if roster.iter().any(|pk| pk.scheme != first) {
        return Err(CosignError::MixedRoster);
    }
    Ok(first)
}

fn aggregate_key(roster: &[PublicKey], bitmap: &SignerBitmap) -> Option<RistrettoPoint> {
    let mut sum = RistrettoPoint::identity();
    for i in bitmap.signers() {
        sum += CompressedRistretto(roster.get(i)?.bytes).decompress()?;
    }
    Some(sum)
}

fn challenge_scalar(
    commitment: &[u8; 32],
    aggregate_key: &RistrettoPoint,
    bitmap: &SignerBitmap,
    message: &[u8],
) -> Scalar {
    wide_scalar(&[
        b"repchain/cosi-challenge",
        commitment,
        aggregate_key.compress().as_bytes(),
        &bitmap.encode(),
        message,
    ])
}

fn fast_response(public: &PublicKey, bitmap: &SignerBitmap, message: &[u8]) -> [u8; 32] {
    let mut bound = bitmap.encode();
    bound.extend_from_slice(message);
    fast_tag(public, "repchain/fast-cosi", &bound)
}

fn fast_aggregate(bitmap: &SignerBitmap, message: &[u8], responses: &[[u8; 32]]) -> [u8; 32] {
    let mut h = Hasher::new("repchain/fast-cosi-aggregate");
    h.part(&bitmap.encode()).part(message);
    for r in responses {
        h.part(r);
    }
    h.finish().0
}

/// One participant's side of the protocol.
pub struct Cosigner {
    index: usize,
    secret: SecretKey,
    public: PublicKey,
    message: Vec<u8>,
    nonce: Option<Scalar>,
}

impl Cosigner {
    pub fn new(index: usize, keys: &KeyPair, message: &[u8]) -> Self {
        Cosigner {
            index,
            secret: keys.secret.clone(),
            public: keys.public,
            message: message.to_vec(),
            nonce: None,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Round 1: answer the announcement with a commitment.
    pub fn commit(&mut self) -> Commitment {
        match self.public.scheme {
            Scheme::Schnorr => {
                let v = wide_scalar(&[b"repchain/cosi-nonce", self.secret.seed(), &self.message]);
                self.nonce = Some(v);
                Commitment((&v * RISTRETTO_BASEPOINT_TABLE).compress().to_bytes())
            }
            Scheme::Fast => Commitment(fast_tag(&self.public, "repchain/fast-commit", &self.message)),
        }
    }

    /// Round 2: answer the challenge. The challenge scalar is recomputed
    /// locally from the roster so a leader cannot bind the response to a
    /// different message.
    pub fn respond(
        &self,
        roster: &[PublicKey],
        challenge: &Challenge,
    ) -> Result<Response, CosignError> {
        if !challenge.bitmap.get(self.index) {
            return Err(CosignError::NotCommitted(self.index));
        }
        match self.public.scheme {
            Scheme::Schnorr => {
                let v = self.nonce.ok_or(CosignError::NotCommitted(self.index))?;
                let key = aggregate_key(roster, &challenge.bitmap)
                    .ok_or(CosignError::NotInRoster(self.index))?;
                let c = challenge_scalar(
                    &challenge.aggregate_commitment,
                    &key,
                    &challenge.bitmap,
                    &self.message,
                );
                Ok(Response((v + c * self.secret.scalar()).to_bytes()))
            }
            Scheme::Fast => Ok(Response(fast_response(
                &self.public,
                &challenge.bitmap,
                &self.message,
            ))),
        }
    }
}

/// The leader's side: collects commitments, issues the challenge, collects
/// responses and aggregates.
pub struct CosignLeader {
    roster: Vec<PublicKey>,
    scheme: Scheme,
    message: Vec<u8>,
    commitments: BTreeMap<usize, Commitment>,
    challenge: Option<(Challenge, Scalar)>,
    responses: BTreeMap<usize, Response>,
}

impl CosignLeader {
    pub fn new(roster: Vec<PublicKey>, message: &[u8]) -> Result<Self, CosignError> {
        let scheme = roster_scheme(&roster)?;
        Ok(CosignLeader {
            roster,
            scheme,
            message: message.to_vec(),
            commitments: BTreeMap::new(),
            challenge: None,
            responses: BTreeMap::new(),
        })
    }

    pub fn message(&self) -> &[u8] {
        &self.message
    }

    pub fn roster(&self) -> &[PublicKey] {
        &self.roster
    }

    pub fn receive_commitment(
        &mut self,
        index: usize,
        commitment: Commitment,
    ) -> Result<(), CosignError> {
        if self.challenge.is_some() {
            return Err(CosignError::RoundClosed);
        }
        if index >= self.roster.len() {
            return Err(CosignError::NotInRoster(index));
        }
        self.commitments.insert(index, commitment);
        Ok(())
    }

    /// Closes round 1. Participants that did not commit are left out of the
    /// bitmap.
    pub fn challenge(&mut self) -> Result<Challenge, CosignError> {
        if let Some((c, _)) = &self.challenge {
            return Ok(c.clone());
        }
        if self.commitments.is_empty() {
            return Err(CosignError::Empty);
        }
        let mut bitmap = SignerBitmap::new(self.roster.len());
        for &i in self.commitments.keys() {
            bitmap.set(i);
        }
        let (aggregate_commitment, scalar) = match self.scheme {
            Scheme::Schnorr => {
                let mut sum = RistrettoPoint::identity();
                for (&i, c) in &self.commitments {
                    sum += CompressedRistretto(c.0)
                        .decompress()
                        .ok_or(CosignError::InvalidResponse(i))?;
                }
                let commitment = sum.compress().to_bytes();
                let key = aggregate_key(&self.roster, &bitmap).ok_or(CosignError::Empty)?;
                let c = challenge_scalar(&commitment, &key, &bitmap, &self.message);
                (commitment, c)
            }
            Scheme::Fast => ([0u8; 32], Scalar::ZERO),
        };
        let challenge = Challenge {
            bitmap,
            aggregate_commitment,
        };
        self.challenge = Some((challenge.clone(), scalar));
        Ok(challenge)
    }

    pub fn receive_response(&mut self, index: usize, response: Response) -> Result<(), CosignError> {
        let (challenge, c) = self.challenge.as_ref().ok_or(CosignError::NoChallenge)?;
        if !challenge.bitmap.get(index) {
            return Err(CosignError::NotCommitted(index));
        }
        let public = &self.roster[index];
        let ok = match self.scheme {
            Scheme::Schnorr => {
                let r = Option::<Scalar>::from(Scalar::from_canonical_bytes(response.0));
                let v = CompressedRistretto(self.commitments[&index].0).decompress();
                let x = CompressedRistretto(public.bytes).decompress();
                match (r, v, x) {
                    (Some(r), Some(v), Some(x)) => &r * RISTRETTO_BASEPOINT_TABLE == v + c * x,
                    _ => false,
                }
            }
            Scheme::Fast => response.0 == fast_response(public, &challenge.bitmap, &self.message),
        };
        if !ok {
            return Err(CosignError::InvalidResponse(index));
        }
        self.responses.insert(index, response);
        Ok(())
    }

    /// Fails if any committed participant has not responded; the partial
    /// result is discarded and the caller restarts without that participant.
    pub fn finalize(self) -> Result<CollectiveSignature, CosignError> {
        let (challenge, _) = self.challenge.ok_or(CosignError::NoChallenge)?;
        if let Some(i) = challenge
            .bitmap
            .signers()
            .find(|i| !self.responses.contains_key(i))
        {
            return Err(CosignError::MissingResponse(i));
        }
        let aggregate = match self.scheme {
            Scheme::Schnorr => {
                let sum: Scalar = self
                    .responses
                    .values()
                    .map(|r| Scalar::from_canonical_bytes(r.0).unwrap())
                    .sum();
                Aggregate::Schnorr {
                    commitment: challenge.aggregate_commitment,
                    response: sum.to_bytes(),
                }
            }
            Scheme::Fast => {
                let tags: Vec<[u8; 32]> = self.responses.values().map(|r| r.0).collect();
                Aggregate::Fast(fast_aggregate(&challenge.bitmap, &self.message, &tags))
            }
        };
        Ok(CollectiveSignature {
            signer_bitmap: challenge.bitmap,
            aggregate,
        })
    }
}

/// Runs both rounds in-process over `participants` (roster index, keys).
pub fn cosign(
    roster: &[PublicKey],
    participants: &[(usize, &KeyPair)],
    message: &[u8],
) -> Result<CollectiveSignature, CosignError> {
    let mut leader = CosignLeader::new(roster.to_vec(), message)?;
    let mut signers = Vec::with_capacity(participants.len());
    for &(index, keys) in participants {
        if index >= roster.len() {
            return Err(CosignError::NotInRoster(index));
        }
        if roster[index] != keys.public {
            return Err(CosignError::KeyMismatch(index));
        }
        let mut signer = Cosigner::new(index, keys, message);
        leader.receive_commitment(index, signer.commit())?;
        signers.push(signer);
    }
    let challenge = leader.challenge()?;
    for signer in &signers {
        leader.receive_response(signer.index(), signer.respond(roster, &challenge)?)?;
    }
    leader.finalize()
}

/// True iff the aggregate verifies against the bitmap-selected keys and at
/// least `threshold` members signed.
pub fn cosign_verify(
    roster: &[PublicKey],
    message: &[u8],
    cosig: &CollectiveSignature,
    threshold: usize,
) -> bool {
    let bitmap = &cosig.signer_bitmap;
    if bitmap.len() != roster.len() || !bitmap.is_well_formed() {
        return false;
    }
    if bitmap.popcount() < threshold || bitmap.popcount() == 0 {
        return false;
    }
    let Ok(scheme) = roster_scheme(roster) else {
        return false;
    };
    match (scheme, &cosig.aggregate) {
        (
            Scheme::Schnorr,
            Aggregate::Schnorr {
                commitment,
                response,
            },
        ) => {
            let Some(key) = aggregate_key(roster, bitmap) else {
                return false;
            };
            let Some(v) = CompressedRistretto(*commitment).decompress() else {
                return false;
            };
            let Some(r) = Option::<Scalar>::from(Scalar::from_canonical_bytes(*response)) else {
                return false;
            };
            let c = challenge_scalar(commitment, &key, bitmap, message);
            &r * RISTRETTO_BASEPOINT_TABLE == v + c * key
        }
        (Scheme::Fast, Aggregate::Fast(tag)) => {
            let tags: Vec<[u8; 32]> = bitmap
                .signers()
                .map(|i| fast_response(&roster[i], bitmap, message))
                .collect();
            fast_aggregate(bitmap, message, &tags) == *tag
        }
        _ => false,
    }
}
