//! Fixed-point accumulation.
//!
//! Task vectors are snapped to a grid of `2^-scale_bits` before they are
//! summed. Integer addition is associative and exactly invertible, so
//! removing a task from the sum reproduces the sum over the remaining tasks
//! bit for bit, whatever the order of insertions and removals.

use crate::error::{Error, Result};

use super::ParamVector;

pub const DEFAULT_SCALE_BITS: u32 = 32;

/// Entries must stay strictly below this magnitude.
pub const MAGNITUDE_LIMIT: i64 = 1 << 62;

/// Rounds `x * 2^scale_bits` to the nearest integer, ties to even.
///
/// Requires `|x| < 2^(62 - scale_bits)`. On failure the error reports index 0;
/// use [`FxpVector::quantize`] to get the offending entry's position.
pub fn quantize(x: f64, scale_bits: u32) -> Result<i64> {
    quantize_at(x, scale_bits, 0)
}

fn quantize_at(x: f64, scale_bits: u32, index: usize) -> Result<i64> {
    if !x.is_finite() {
        return Err(Error::NonFinite { index });
    }
    let bound = 2f64.powi(62 - scale_bits as i32);
    if x.abs() >= bound {
        return Err(Error::QuantizeOverflow { index, value: x, scale_bits });
    }
    // Scaling by a power of two is exact in binary floating point.
    Ok((x * 2f64.powi(scale_bits as i32)).round_ties_even() as i64)
}

pub fn dequantize(q: i64, scale_bits: u32) -> f64 {
    q as f64 / 2f64.powi(scale_bits as i32)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FxpVector {
    values: Vec<i64>,
    scale_bits: u32,
}

impl FxpVector {
    pub fn zeros(len: usize, scale_bits: u32) -> Self {
        Self { values: vec![0; len], scale_bits }
    }

    pub fn from_raw(values: Vec<i64>, scale_bits: u32) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| v.unsigned_abs() >= MAGNITUDE_LIMIT as u64) {
            return Err(Error::AccumulatorOverflow { index });
        }
        Ok(Self { values, scale_bits })
    }

    pub fn quantize(x: &ParamVector, scale_bits: u32) -> Result<Self> {
        let values = x
            .iter()
            .enumerate()
            .map(|(i, &v)| quantize_at(v as f64, scale_bits, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { values, scale_bits })
    }

    pub fn quantize_f64(x: &[f64], scale_bits: u32) -> Result<Self> {
        let values = x
            .iter()
            .enumerate()
            .map(|(i, &v)| quantize_at(v, scale_bits, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { values, scale_bits })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale_bits(&self) -> u32 {
        self.scale_bits
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.values.iter().map(|&q| dequantize(q, self.scale_bits)).collect()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch { expected: self.len(), actual: other.len() });
        }
        if self.scale_bits != other.scale_bits {
            return Err(Error::ScaleMismatch { left: self.scale_bits, right: other.scale_bits });
        }
        Ok(())
    }

    fn combine(&self, other: &Self, op: fn(i64, i64) -> Option<i64>) -> Result<Self> {
        self.check_compatible(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(index, (&a, &b))| match op(a, b) {
                Some(v) if v.unsigned_abs() < MAGNITUDE_LIMIT as u64 => Ok(v),
                _ => Err(Error::AccumulatorOverflow { index }),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { values, scale_bits: self.scale_bits })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(other, i64::checked_add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(other, i64::checked_sub)
    }

    /// In-place add; leaves `self` untouched on error.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        *self = self.add(other)?;
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &Self) -> Result<()> {
        *self = self.sub(other)?;
        Ok(())
    }

    #[doc(hidden)]
    pub fn raw_mut(&mut self) -> &mut [i64] {
        &mut self.values
    }
}

/// Fold-add of a sequence of vectors of length `len`.
pub fn fold_add<'a>(
    len: usize,
    scale_bits: u32,
    items: impl IntoIterator<Item = &'a FxpVector>,
) -> Result<FxpVector> {
    items
        .into_iter()
        .try_fold(FxpVector::zeros(len, scale_bits), |acc, v| acc.add(v))
}
