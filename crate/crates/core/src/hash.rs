//! SHA-256 digests rendered as lowercase hex.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::canonical::{self, CanonicalError};

/// A 32-byte SHA-256 output. Displays and serializes as 64 lowercase hex chars.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct HashDigest([u8; 32]);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed digest {0:?}: expected 64 lowercase hex characters")]
pub struct MalformedDigest(pub String);

impl HashDigest {
    pub const ZERO: HashDigest = HashDigest([0; 32]);

    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        HashDigest(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0; 32]
    }

    /// True if `s` has the exact shape of a digest (`^[0-9a-f]{64}$`).
    pub fn is_well_formed(s: &str) -> bool {
        s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
    }
}

/// SHA-256 of `bytes`.
pub fn digest(bytes: &[u8]) -> HashDigest {
    let out: [u8; 32] = Sha256::digest(bytes).into();
    HashDigest(out)
}

/// Digest of the canonical encoding of `value`.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> Result<HashDigest, CanonicalError> {
    Ok(digest(&canonical::to_canonical_bytes(value)?))
}

impl fmt::Display for HashDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for HashDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashDigest({self})")
    }
}

impl FromStr for HashDigest {
    type Err = MalformedDigest;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if !Self::is_well_formed(s) {
            return Err(MalformedDigest(s.into()));
        }
        let mut out = [0u8; 32];
        for (i, pair) in s.as_bytes().chunks_exact(2).enumerate() {
            out[i] = (nibble(pair[0]) << 4) | nibble(pair[1]);
        }
        Ok(HashDigest(out))
    }
}

fn nibble(c: u8) -> u8 {
    match c {
        b'0'..=b'9' => c - b'0',
        _ => c - b'a' + 10,
    }
}

impl Serialize for HashDigest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HashDigest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Visitor;
        impl de::Visitor<'_> for Visitor {
            type Value = HashDigest;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("64 lowercase hex characters")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<HashDigest, E> {
                v.parse().map_err(E::custom)
            }
        }
        deserializer.deserialize_str(Visitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn parse_display_round_trip() {
        let d = digest(b"abc");
        let s = d.to_string();
        assert_eq!(s.len(), 64);
        assert_eq!(s.parse::<HashDigest>().unwrap(), d);
    }

    #[test]
    fn rejects_uppercase_and_short() {
        assert!("AB".repeat(32).parse::<HashDigest>().is_err());
        assert!("ab".repeat(31).parse::<HashDigest>().is_err());
        assert!("zz".repeat(32).parse::<HashDigest>().is_err());
        assert!("00".repeat(32).parse::<HashDigest>().unwrap().is_zero());
    }
}
