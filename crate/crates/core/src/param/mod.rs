//! Numeric substrate: parameter vectors, fixed-point sums, bit masks, PRNG.

mod bits;
mod fxp;
mod prng;

pub use bits::{gen_sign_vector, mask_apply, words_for, BitMask, SignVector};
pub use fxp::{dequantize, fold_add, quantize, FxpVector, DEFAULT_SCALE_BITS, MAGNITUDE_LIMIT};
pub use prng::{label, mix, PrngStream};

use std::ops::{Deref, Index};

use crate::error::{Error, Result};

/// Flat model parameters or parameter deltas.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f32>);

impl ParamVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Rejects NaN and infinities.
    pub fn checked(values: Vec<f32>) -> Result<Self> {
        match values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(Self(values)),
        }
    }

    pub fn from_f64(values: &[f64]) -> Self {
        Self(values.iter().map(|&v| v as f32).collect())
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn ensure_len(&self, expected: usize) -> Result<()> {
        if self.len() == expected {
            Ok(())
        } else {
            Err(Error::LengthMismatch { expected, actual: self.len() })
        }
    }

    pub fn l2_distance(&self, other: &ParamVector) -> f64 {
        self.iter()
            .zip(other.iter())
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `self + delta` computed in f64 and rounded once.
    pub fn offset_by(&self, delta: &[f64]) -> Result<ParamVector> {
        if delta.len() != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), actual: delta.len() });
        }
        Ok(ParamVector(self.iter().zip(delta).map(|(&a, &d)| (a as f64 + d) as f32).collect()))
    }
}

impl Deref for ParamVector {
    type Target = [f32];
    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl Index<usize> for ParamVector {
    type Output = f32;
    fn index(&self, i: usize) -> &f32 {
        &self.0[i]
    }
}

impl From<Vec<f32>> for ParamVector {
    fn from(v: Vec<f32>) -> Self {
        Self(v)
    }
}
