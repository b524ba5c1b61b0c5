//! Canonical byte encoding.
//!
//! Integers are fixed-width little-endian, sequences and maps carry a `u32`
//! length prefix, options a one-byte tag. Maps are emitted in key order and
//! decoding rejects unsorted or duplicate keys, so every value has exactly one
//! encoding. The same bytes serve as the on-disk and wire format.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::score::{Amount, Score};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input while reading {0}")]
    UnexpectedEof(&'static str),
    #[error("invalid tag {tag} for {what}")]
    InvalidTag { what: &'static str, tag: u8 },
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
    #[error("map keys not strictly ascending")]
    UnsortedKeys,
    #[error("length {0} exceeds remaining input")]
    LengthOverflow(u64),
    #[error("value violates invariant: {0}")]
    Invariant(String),
}

pub trait Encode {
    fn encode_to(&self, out: &mut Vec<u8>);

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_to(&mut out);
        out
    }

    fn encoded_len(&self) -> usize {
        self.encode().len()
    }
}

pub trait Decode: Sized {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError>;

    /// Decodes a complete value; trailing bytes are an error.
    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut reader = Reader::new(bytes);
        let value = Self::decode_from(&mut reader)?;
        match reader.remaining() {
            0 => Ok(value),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len()
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err(DecodeError::UnexpectedEof(what));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], DecodeError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N, what)?);
        Ok(out)
    }

    fn length(&mut self) -> Result<usize, DecodeError> {
        let len = u32::decode_from(self)? as usize;
        // every element occupies at least one byte
        if len > self.remaining() {
            return Err(DecodeError::LengthOverflow(len as u64));
        }
        Ok(len)
    }
}

macro_rules! int_codec {
    ($($t:ty),*) => {$(
        impl Encode for $t {
            fn encode_to(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
        }
        impl Decode for $t {
            fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
                Ok(<$t>::from_le_bytes(input.array(stringify!($t))?))
            }
        }
    )*};
}

int_codec!(u8, u16, u32, u64, i64);

impl Encode for bool {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.push(*self as u8);
    }
}

impl Decode for bool {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match u8::decode_from(input)? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(DecodeError::InvalidTag { what: "bool", tag }),
        }
    }
}

impl<const N: usize> Encode for [u8; N] {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self);
    }
}

impl<const N: usize> Decode for [u8; N] {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        input.array("byte array")
    }
}

impl<T: Encode> Encode for Vec<T> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        (self.len() as u32).encode_to(out);
        for item in self {
            item.encode_to(out);
        }
    }
}

impl<T: Decode> Decode for Vec<T> {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let len = input.length()?;
        let mut items = Vec::with_capacity(len);
        for _ in 0..len {
            items.push(T::decode_from(input)?);
        }
        Ok(items)
    }
}

impl<T: Encode> Encode for Option<T> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            None => out.push(0),
            Some(v) => {
                out.push(1);
                v.encode_to(out);
            }
        }
    }
}

impl<T: Decode> Decode for Option<T> {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match u8::decode_from(input)? {
            0 => Ok(None),
            1 => Ok(Some(T::decode_from(input)?)),
            tag => Err(DecodeError::InvalidTag { what: "option", tag }),
        }
    }
}

impl<K: Encode, V: Encode> Encode for BTreeMap<K, V> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        (self.len() as u32).encode_to(out);
        for (k, v) in self {
            k.encode_to(out);
            v.encode_to(out);
        }
    }
}

impl<K: Decode + Ord, V: Decode> Decode for BTreeMap<K, V> {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let len = input.length()?;
        let mut map = BTreeMap::new();
        for _ in 0..len {
            let k = K::decode_from(input)?;
            let v = V::decode_from(input)?;
            if map.last_key_value().is_some_and(|(last, _)| *last >= k) {
                return Err(DecodeError::UnsortedKeys);
            }
            map.insert(k, v);
        }
        Ok(map)
    }
}

impl<K: Encode> Encode for BTreeSet<K> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        (self.len() as u32).encode_to(out);
        for k in self {
            k.encode_to(out);
        }
    }
}

impl<K: Decode + Ord> Decode for BTreeSet<K> {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let len = input.length()?;
        let mut set = BTreeSet::new();
        for _ in 0..len {
            let k = K::decode_from(input)?;
            if set.last().is_some_and(|last| *last >= k) {
                return Err(DecodeError::UnsortedKeys);
            }
            set.insert(k);
        }
        Ok(set)
    }
}

impl<A: Encode, B: Encode> Encode for (A, B) {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.0.encode_to(out);
        self.1.encode_to(out);
    }
}

impl<A: Decode, B: Decode> Decode for (A, B) {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok((A::decode_from(input)?, B::decode_from(input)?))
    }
}

impl Encode for Score {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.micros().encode_to(out);
    }
}

impl Decode for Score {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Score::from_micros(i64::decode_from(input)?))
    }
}

impl Encode for Amount {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.micros().encode_to(out);
    }
}

impl Decode for Amount {
    fn decode_from(input: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Amount::from_micros(u64::decode_from(input)?))
    }
}

/// Implements [`Encode`] and [`Decode`] for a struct by emitting its fields
/// in the listed order.
#[macro_export]
macro_rules! struct_codec {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl $crate::codec::Encode for $ty {
            fn encode_to(&self, out: &mut Vec<u8>) {
                $( $crate::codec::Encode::encode_to(&self.$field, out); )*
            }
        }
        impl $crate::codec::Decode for $ty {
            fn decode_from(
                input: &mut $crate::codec::Reader<'_>,
            ) -> Result<Self, $crate::codec::DecodeError> {
                Ok($ty { $( $field: $crate::codec::Decode::decode_from(input)?, )* })
            }
        }
    };
}
