use std::fmt;

use crate::error::{Error, Result};

/// A binary code of fixed length, packed 64 bits per word.
///
/// Bit `i` lives in word `i / 64` at bit position `i % 64`; unused high bits
/// of the last word are always zero.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut v = Self::zeros(len);
        for i in 0..len {
            v.set(i, true);
        }
        v
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b != 0 {
                v.set(i, true);
            }
        }
        v
    }

    /// Code whose bit `i` is bit `i` of `x`.
    pub fn from_index(x: u64, len: usize) -> Self {
        let mut v = Self::zeros(len);
        for i in 0..len.min(64) {
            if (x >> i) & 1 == 1 {
                v.set(i, true);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.len).map(|i| self.get(i) as u8).collect()
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Number of differing bits, via popcount on the packed words.
    pub fn hamming(&self, other: &BitVector) -> Result<u32> {
        if self.len != other.len {
            return Err(Error::Shape(format!(
                "hamming distance between codes of length {} and {}",
                self.len, other.len
            )));
        }
        Ok(hamming_words(&self.words, &other.words))
    }

    /// Hex string of the packed bytes: byte `j` holds bits `8j..8j+8`, lowest
    /// index in the least significant bit, bytes in increasing `j`.
    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = self
            .words
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .take(self.len.div_ceil(8))
            .collect();
        hex::encode(bytes)
    }

    pub fn from_hex(s: &str, len: usize) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| Error::Shape(format!("bad hex code `{s}`: {e}")))?;
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Shape(format!(
                "hex code `{s}` has {} bytes, length {len} needs {}",
                bytes.len(),
                len.div_ceil(8)
            )));
        }
        let mut v = Self::zeros(len);
        for (j, byte) in bytes.iter().enumerate() {
            v.words[j / 8] |= (*byte as u64) << (8 * (j % 8));
        }
        if len % 64 != 0 && v.words.last().is_some_and(|w| w >> (len % 64) != 0) {
            return Err(Error::Shape(format!("hex code `{s}` sets bits beyond length {len}")));
        }
        Ok(v)
    }
}

#[inline]
pub(crate) fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector(")?;
        for i in 0..self.len {
            write!(f, "{}", self.get(i) as u8)?;
        }
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn complements_are_maximally_distant() {
        let a = BitVector::zeros(128);
        let b = BitVector::ones(128);
        assert_eq!(a.hamming(&b).unwrap(), 128);
        assert_eq!(a.hamming(&a).unwrap(), 0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(BitVector::zeros(3).hamming(&BitVector::zeros(4)).is_err());
    }

    #[test]
    fn hex_layout() {
        let v = BitVector::from_bits(&[1, 0, 0, 0, 0, 0, 0, 0, 0, 1]);
        assert_eq!(v.to_hex(), "0102");
        assert!(BitVector::from_hex("0104", 10).is_err());
        assert!(BitVector::from_hex("01", 10).is_err());
    }

    proptest! {
        #[test]
        fn packing_round_trips(bits in proptest::collection::vec(0u8..2, 0..200)) {
            let v = BitVector::from_bits(&bits);
            prop_assert_eq!(v.len(), bits.len());
            prop_assert_eq!(v.to_bits(), bits.clone());
            prop_assert_eq!(BitVector::from_hex(&v.to_hex(), bits.len()).unwrap(), v);
        }

        #[test]
        fn packed_distance_matches_naive_count(
            pair in (1usize..150).prop_flat_map(|n| (
                proptest::collection::vec(0u8..2, n),
                proptest::collection::vec(0u8..2, n),
            ))
        ) {
            let (a, b) = pair;
            let naive = a.iter().zip(&b).filter(|(x, y)| x != y).count() as u32;
            let d = BitVector::from_bits(&a).hamming(&BitVector::from_bits(&b)).unwrap();
            prop_assert_eq!(d, naive);
        }
    }
}
