use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::OverlayError;

/// Widest supported identifier, in bits.
pub const MAX_WIDTH: u16 = 256;
const BYTES: usize = (MAX_WIDTH / 8) as usize;

/// Fixed-width unsigned identifier stored big-endian and right-aligned, so
/// byte-wise comparison is numeric comparison at every width.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bits([u8; BYTES]);

impl Bits {
    pub const ZERO: Bits = Bits([0; BYTES]);

    pub fn from_u64(v: u64) -> Self {
        let mut b = [0u8; BYTES];
        b[BYTES - 8..].copy_from_slice(&v.to_be_bytes());
        Bits(b)
    }

    /// Low 64 bits; exact when the identifier space is at most 64 bits wide.
    pub fn low_u64(&self) -> u64 {
        let mut tail = [0u8; 8];
        tail.copy_from_slice(&self.0[BYTES - 8..]);
        u64::from_be_bytes(tail)
    }

    pub fn xor(&self, other: &Bits) -> Bits {
        let mut out = [0u8; BYTES];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(other.0.iter())) {
            *o = a ^ b;
        }
        Bits(out)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|b| *b == 0)
    }

    /// Index of the highest set bit (0 = least significant), `None` for zero.
    pub fn highest_set_bit(&self) -> Option<u16> {
        self.0.iter().enumerate().find(|(_, b)| **b != 0).map(|(i, b)| {
            let byte_from_right = (BYTES - 1 - i) as u16;
            byte_from_right * 8 + (7 - b.leading_zeros() as u16)
        })
    }

    fn masked(mut self, width: u16) -> Bits {
        let keep_bytes = (width as usize).div_ceil(8);
        let clear = BYTES - keep_bytes;
        for b in &mut self.0[..clear] {
            *b = 0;
        }
        let partial = width % 8;
        if partial != 0 && keep_bytes > 0 {
            self.0[clear] &= (1u8 << partial) - 1;
        }
        self
    }
}

impl fmt::Debug for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let first = self.0.iter().position(|b| *b != 0);
        match first {
            None => write!(f, "0x0"),
            Some(i) => {
                write!(f, "0x{:x}", self.0[i])?;
                for b in &self.0[i + 1..] {
                    write!(f, "{b:02x}")?;
                }
                Ok(())
            }
        }
    }
}

impl Serialize for Bits {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let hex = text
            .strip_prefix("0x")
            .ok_or_else(|| serde::de::Error::custom("identifier must start with 0x"))?;
        if hex.is_empty() || hex.len() > BYTES * 2 {
            return Err(serde::de::Error::custom("bad identifier length"));
        }
        let padded = format!("{hex:0>width$}", width = BYTES * 2);
        let mut out = [0u8; BYTES];
        for (i, chunk) in padded.as_bytes().chunks(2).enumerate() {
            let pair = std::str::from_utf8(chunk).map_err(serde::de::Error::custom)?;
            out[i] = u8::from_str_radix(pair, 16).map_err(serde::de::Error::custom)?;
        }
        Ok(Bits(out))
    }
}

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Bits);

        impl $name {
            pub fn from_u64(v: u64) -> Self {
                Self(Bits::from_u64(v))
            }

            pub fn bits(&self) -> &Bits {
                &self.0
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Display::fmt(&self.0, f)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Display::fmt(&self.0, f)
            }
        }
    };
}

id_newtype!(
    /// Overlay identifier of a peer.
    NodeId
);
id_newtype!(
    /// Overlay position of an attribute, derived by hashing its name.
    Key
);
id_newtype!(
    /// XOR distance between two identifiers, ordered numerically.
    Distance
);

impl Distance {
    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

/// Anything that occupies a point of the identifier space.
pub trait Located {
    fn location(&self) -> &Bits;
}

impl Located for NodeId {
    fn location(&self) -> &Bits {
        &self.0
    }
}

impl Located for Key {
    fn location(&self) -> &Bits {
        &self.0
    }
}

/// XOR metric. Symmetric, and zero iff both sides are the same point.
pub fn xor_distance<A: Located + ?Sized, B: Located + ?Sized>(a: &A, b: &B) -> Distance {
    Distance(a.location().xor(b.location()))
}

/// Trims, lowercases and joins inner whitespace runs with `-`, so
/// `" Tom  Brady "` and `"tom-brady"` name the same attribute.
pub fn canonical_name(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("-")
}

/// Parameters of the identifier space shared by every node of a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdSpace {
    width: u16,
}

impl Default for IdSpace {
    fn default() -> Self {
        IdSpace { width: MAX_WIDTH }
    }
}

impl IdSpace {
    pub fn new(width: u16) -> Result<Self, OverlayError> {
        if width == 0 || width > MAX_WIDTH {
            return Err(OverlayError::InvalidWidth(width));
        }
        Ok(IdSpace { width })
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn random_id<R: RngCore + ?Sized>(&self, rng: &mut R) -> NodeId {
        let mut raw = [0u8; BYTES];
        rng.fill_bytes(&mut raw);
        NodeId(Bits(raw).masked(self.width))
    }

    /// Builds an identifier from an integer, failing if it does not fit.
    pub fn id(&self, v: u64) -> Result<NodeId, OverlayError> {
        let bits = Bits::from_u64(v);
        if bits.masked(self.width) != bits {
            return Err(OverlayError::OutOfRange(v, self.width));
        }
        Ok(NodeId(bits))
    }

    pub fn key(&self, v: u64) -> Result<Key, OverlayError> {
        self.id(v).map(|id| Key(id.0))
    }

    /// SHA-256 of the canonical attribute name, truncated to the low
    /// `width` bits.
    pub fn key_for_attribute(&self, name: &str) -> Result<Key, OverlayError> {
        let canonical = canonical_name(name);
        if canonical.is_empty() {
            return Err(OverlayError::InvalidAttribute(name.to_string()));
        }
        let digest = Sha256::digest(canonical.as_bytes());
        let mut raw = [0u8; BYTES];
        raw.copy_from_slice(&digest);
        Ok(Key(Bits(raw).masked(self.width)))
    }
}
