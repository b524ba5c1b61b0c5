use std::fmt;

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_TABLE;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha512};

use super::hash::Hasher;
use crate::codec::{Decode, DecodeError, Encode, Reader};

/// Which signature construction a key belongs to.
///
/// `Schnorr` is a Schnorr signature over the ristretto255 prime-order group.
/// `Fast` is a simulation stand-in: a hash-based tag keyed by the signer's
/// public identity. It detects tampering and wrong-signer substitution but
/// is not unforgeable; the simulator's adversaries never forge signatures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Schnorr,
    Fast,
}

impl Scheme {
    fn tag(self) -> u8 {
        match self {
            Scheme::Schnorr => 0,
            Scheme::Fast => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        match tag {
            0 => Ok(Scheme::Schnorr),
            1 => Ok(Scheme::Fast),
            tag => Err(DecodeError::InvalidTag { what: "scheme", tag }),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey {
    pub scheme: Scheme,
    pub bytes: [u8; 32],
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({:?}, {})", self.scheme, hex(&self.bytes[..8]))
    }
}

#[derive(Clone)]
pub struct SecretKey {
    scheme: Scheme,
    seed: [u8; 32],
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey({:?}, ..)", self.scheme)
    }
}

impl SecretKey {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub(crate) fn scalar(&self) -> Scalar {
        wide_scalar(&[b"repchain/secret", &self.seed])
    }

    pub(crate) fn seed(&self) -> &[u8; 32] {
        &self.seed
    }

    pub fn public(&self) -> PublicKey {
        let bytes = match self.scheme {
            Scheme::Schnorr => (&self.scalar() * RISTRETTO_BASEPOINT_TABLE)
                .compress()
                .to_bytes(),
            Scheme::Fast => {
                let mut h = Hasher::new("repchain/fast-public");
                h.part(&self.seed);
                h.finish().0
            }
        };
        PublicKey {
            scheme: self.scheme,
            bytes,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

impl KeyPair {
    /// Deterministic key derivation from a 32-byte seed.
    pub fn from_seed(scheme: Scheme, seed: [u8; 32]) -> Self {
        let secret = SecretKey { scheme, seed };
        KeyPair {
            public: secret.public(),
            secret,
        }
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        sign(&self.secret, message)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub enum Signature {
    Schnorr([u8; 64]),
    Fast([u8; 32]),
}

impl Default for Signature {
    fn default() -> Self {
        Signature::Fast([0u8; 32])
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signature::Schnorr(b) => write!(f, "Schnorr({}..)", hex(&b[..8])),
            Signature::Fast(b) => write!(f, "Fast({}..)", hex(&b[..8])),
        }
    }
}

pub(crate) fn wide_scalar(parts: &[&[u8]]) -> Scalar {
    let mut h = Sha512::new();
    for part in parts {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    let digest: [u8; 64] = h.finalize().into();
    Scalar::from_bytes_mod_order_wide(&digest)
}

pub(crate) fn fast_tag(public: &PublicKey, domain: &str, message: &[u8]) -> [u8; 32] {
    let mut h = Hasher::new(domain);
    h.part(&public.bytes).part(message);
    h.finish().0
}

/// Deterministic signature: the Schnorr nonce is derived from the secret
/// and the message.
pub fn sign(secret: &SecretKey, message: &[u8]) -> Signature {
    match secret.scheme {
        Scheme::Schnorr => {
            let x = secret.scalar();
            let public = secret.public();
            let k = wide_scalar(&[b"repchain/nonce", &secret.seed, message]);
            let r = (&k * RISTRETTO_BASEPOINT_TABLE).compress();
            let e = wide_scalar(&[b"repchain/challenge", r.as_bytes(), &public.bytes, message]);
            let s = k + e * x;
            let mut out = [0u8; 64];
            out[..32].copy_from_slice(r.as_bytes());
            out[32..].copy_from_slice(s.as_bytes());
            Signature::Schnorr(out)
        }
        Scheme::Fast => Signature::Fast(fast_tag(&secret.public(), "repchain/fast-sig", message)),
    }
}

/// Never panics; any malformed or mismatched input yields `false`.
pub fn verify(public: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    match (public.scheme, signature) {
        (Scheme::Schnorr, Signature::Schnorr(sig)) => {
            let Some(point) = CompressedRistretto(public.bytes).decompress() else {
                return false;
            };
            let mut r_bytes = [0u8; 32];
            r_bytes.copy_from_slice(&sig[..32]);
            let mut s_bytes = [0u8; 32];
            s_bytes.copy_from_slice(&sig[32..]);
            let Some(s) = Option::<Scalar>::from(Scalar::from_canonical_bytes(s_bytes)) else {
                return false;
            };
            let e = wide_scalar(&[b"repchain/challenge", &r_bytes, &public.bytes, message]);
            let lhs = RistrettoPoint::vartime_double_scalar_mul_basepoint(&-e, &point, &s);
            lhs.compress().to_bytes() == r_bytes
        }
        (Scheme::Fast, Signature::Fast(tag)) => {
            fast_tag(public, "repchain/fast-sig", message) == *tag
        }
        _ => false,
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<Vec<u8>, String> {
    if !s.len().is_multiple_of(2) {
        return Err("odd hex length".into());
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|e| e.to_string()))
        .collect()
}

impl Encode for PublicKey {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.push(self.scheme.tag());
        out.extend_from_slice(&self.bytes);
    }
}

impl Decode for PublicKey {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let scheme = Scheme::from_tag(u8::decode_from(input)?)?;
        Ok(PublicKey {
            scheme,
            bytes: input.array("public key")?,
        })
    }
}

impl Encode for Signature {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            Signature::Schnorr(b) => {
                out.push(0);
                out.extend_from_slice(b);
            }
            Signature::Fast(b) => {
                out.push(1);
                out.extend_from_slice(b);
            }
        }
    }
}

impl Decode for Signature {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match u8::decode_from(input)? {
            0 => Ok(Signature::Schnorr(input.array("signature")?)),
            1 => Ok(Signature::Fast(input.array("signature")?)),
            tag => Err(DecodeError::InvalidTag { what: "signature", tag }),
        }
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let prefix = match self.scheme {
            Scheme::Schnorr => "s",
            Scheme::Fast => "f",
        };
        s.serialize_str(&format!("{prefix}:{}", hex(&self.bytes)))
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let s = String::deserialize(d)?;
        let (prefix, body) = s.split_once(':').ok_or_else(|| D::Error::custom("missing scheme"))?;
        let scheme = match prefix {
            "s" => Scheme::Schnorr,
            "f" => Scheme::Fast,
            other => return Err(D::Error::custom(format!("unknown scheme {other}"))),
        };
        let raw = unhex(body).map_err(D::Error::custom)?;
        let bytes: [u8; 32] = raw
            .try_into()
            .map_err(|_| D::Error::custom("public key must be 32 bytes"))?;
        Ok(PublicKey { scheme, bytes })
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Signature::Schnorr(b) => s.serialize_str(&format!("s:{}", hex(b))),
            Signature::Fast(b) => s.serialize_str(&format!("f:{}", hex(b))),
        }
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let s = String::deserialize(d)?;
        let (prefix, body) = s.split_once(':').ok_or_else(|| D::Error::custom("missing scheme"))?;
        let raw = unhex(body).map_err(D::Error::custom)?;
        match prefix {
            "s" => Ok(Signature::Schnorr(
                raw.try_into().map_err(|_| D::Error::custom("bad length"))?,
            )),
            "f" => Ok(Signature::Fast(
                raw.try_into().map_err(|_| D::Error::custom("bad length"))?,
            )),
            other => Err(D::Error::custom(format!("unknown scheme {other}"))),
        }
    }
}
