//! Bit-packed masks and sign vectors.
//!
//! Layout is shared with the checkpoint format: bit `i` lives in 32-bit word
//! `i / 32` at position `i % 32`, words are little-endian, and pad bits past
//! the logical length are zero.

use crate::error::{Error, Result};

use super::prng::PrngStream;
use super::ParamVector;

pub fn words_for(len: usize) -> usize {
    len.div_ceil(32)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    words: Vec<u32>,
    len: usize,
    popcount: usize,
}

impl BitMask {
    pub fn zeros(len: usize) -> Self {
        Self { words: vec![0; words_for(len)], len, popcount: 0 }
    }

    pub fn ones(len: usize) -> Self {
        Self::from_fn(len, |_| true)
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut words = vec![0u32; words_for(len)];
        for i in 0..len {
            if f(i) {
                words[i / 32] |= 1 << (i % 32);
            }
        }
        Self::from_words_unchecked(words, len)
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self::from_fn(bits.len(), |i| bits[i])
    }

    fn from_words_unchecked(words: Vec<u32>, len: usize) -> Self {
        let popcount = words.iter().map(|w| w.count_ones() as usize).sum();
        Self { words, len, popcount }
    }

    /// Rebuilds a mask from packed words, rejecting wrong word counts and
    /// nonzero pad bits.
    pub fn from_words(words: Vec<u32>, len: usize) -> Result<Self> {
        if words.len() != words_for(len) {
            return Err(Error::LengthMismatch { expected: words_for(len), actual: words.len() });
        }
        if !len.is_multiple_of(32) {
            if let Some(&last) = words.last() {
                if last >> (len % 32) != 0 {
                    return Err(Error::InvalidParameter("mask pad bits must be zero".into()));
                }
            }
        }
        Ok(Self::from_words_unchecked(words, len))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / 32] >> (i % 32) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.popcount
    }

    pub fn density(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.popcount as f64 / self.len as f64
        }
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn storage_words(&self) -> usize {
        self.words.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(w * 32 + bit)
            })
        })
    }

    pub fn is_subset_of(&self, other: &BitMask) -> bool {
        self.len == other.len && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != 4 * words_for(len) {
            return Err(Error::LengthMismatch { expected: 4 * words_for(len), actual: bytes.len() });
        }
        let words = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_words(words, len)
    }

    /// Entry `i` is `x[i]` where the bit is set and zero elsewhere.
    pub fn apply(&self, x: &ParamVector) -> Result<ParamVector> {
        if x.len() != self.len {
            return Err(Error::LengthMismatch { expected: self.len, actual: x.len() });
        }
        Ok(ParamVector::new(
            x.iter().enumerate().map(|(i, &v)| if self.get(i) { v } else { 0.0 }).collect(),
        ))
    }
}

/// Free-function form of [`BitMask::apply`].
pub fn mask_apply(mask: &BitMask, x: &ParamVector) -> Result<ParamVector> {
    mask.apply(x)
}

/// Global random ±1 vector. Bit 1 means +1, bit 0 means -1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignVector {
    bits: BitMask,
    seed: u64,
}

impl SignVector {
    /// One fair coin per entry from `PrngStream::new(seed)`.
    pub fn generate(seed: u64, len: usize) -> Self {
        let mut stream = PrngStream::new(seed);
        Self { bits: BitMask::from_fn(len, |_| stream.next_bool()), seed }
    }

    /// Wraps explicit bits; `seed` is recorded but not used to check them.
    pub fn from_bits(bits: BitMask, seed: u64) -> Self {
        Self { bits, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &BitMask {
        &self.bits
    }

    pub fn is_positive(&self, i: usize) -> bool {
        self.bits.get(i)
    }

    pub fn sign(&self, i: usize) -> f32 {
        if self.bits.get(i) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f32> + '_ {
        self.bits.iter().map(|b| if b { 1.0 } else { -1.0 })
    }
}

pub fn gen_sign_vector(seed: u64, len: usize) -> Result<SignVector> {
    if len == 0 {
        return Err(Error::InvalidParameter("sign vector length must be positive".into()));
    }
    Ok(SignVector::generate(seed, len))
}
