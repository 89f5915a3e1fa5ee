//! Threshold masks: keep entry `i` for task `t` when
//! `|tau_t[i]| >= lambda * |sum[i] - tau_t[i]|`.

use crate::data::Example;
use crate::error::{Error, Result};
use crate::param::{BitMask, FxpVector, ParamVector};
use crate::trainer::{accuracy, ModelSpec, TaskVector};

use super::state::{Divisor, MergedState};

/// Mask from the task vector and the rest of the sum, both in real units.
pub fn tall_mask_from_parts(tau: &[f64], rest: &[f64], lambda: f64) -> Result<BitMask> {
    if tau.len() != rest.len() {
        return Err(Error::LengthMismatch { expected: tau.len(), actual: rest.len() });
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    Ok(BitMask::from_fn(tau.len(), |i| tau[i].abs() >= lambda * rest[i].abs()))
}

/// Task value and `sum - task` per entry, taken on the fixed-point grid so
/// that a task merged alone has an exactly zero remainder.
fn split(tau_t: &TaskVector, state: &MergedState) -> Result<(Vec<f64>, Vec<f64>)> {
    let acc = state.accumulator();
    let q = FxpVector::quantize(&tau_t.delta, acc.scale_bits())?;
    let rest = acc.sub(&q)?;
    Ok((q.dequantize(), rest.dequantize()))
}

pub fn tall_mask(tau_t: &TaskVector, state: &MergedState, lambda: f64) -> Result<BitMask> {
    let (tau, rest) = split(tau_t, state)?;
    tall_mask_from_parts(&tau, &rest, lambda)
}

/// Threshold whose mask density is closest to `target`, found by bisection
/// over the candidate thresholds where the density changes. Ties go to the
/// smaller threshold.
pub fn lambda_for_density(tau: &[f64], rest: &[f64], target: f64) -> Result<f64> {
    if tau.len() != rest.len() {
        return Err(Error::LengthMismatch { expected: tau.len(), actual: rest.len() });
    }
    let n = tau.len();
    if n == 0 {
        return Ok(0.0);
    }
    let density = |lambda: f64| {
        tau.iter().zip(rest).filter(|(t, r)| t.abs() >= lambda * r.abs()).count() as f64 / n as f64
    };
    let mut candidates: Vec<f64> = tau
        .iter()
        .zip(rest)
        .filter(|(_, r)| **r != 0.0)
        .map(|(t, r)| t.abs() / r.abs())
        .collect();
    candidates.push(0.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // density is non-increasing along `candidates`; find the first one at or
    // below the target.
    let (mut lo, mut hi) = (0usize, candidates.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if density(candidates[mid]) <= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut best = candidates[lo.min(candidates.len() - 1)];
    if lo > 0 {
        let prev = candidates[lo - 1];
        if (density(prev) - target).abs() <= (density(best) - target).abs() {
            best = prev;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TallChoice {
    pub lambda: f64,
    pub alpha: f64,
    pub density_target: f64,
    pub accuracy: f64,
}

/// Grid search over (mask density, rescale) pairs on the task's training
/// split. The localized model for a pair is
/// `base + alpha * (mask ⊙ sum) / |retained|`.
#[allow(clippy::too_many_arguments)]
pub fn tall_tune(
    tau_t: &TaskVector,
    state: &MergedState,
    density_grid: &[f64],
    alpha_grid: &[f64],
    base: &ParamVector,
    spec: &ModelSpec,
    eval_data: &[&Example],
    divisor: Divisor,
) -> Result<(BitMask, TallChoice)> {
    if density_grid.is_empty() || alpha_grid.is_empty() {
        return Err(Error::InvalidParameter("TALL grids must be nonempty".into()));
    }
    let (tau, rest) = split(tau_t, state)?;
    let acc = state.accumulator().dequantize();
    let divisors: Vec<f64> = match divisor {
        Divisor::Retained => vec![state.retained().len().max(1) as f64; acc.len()],
        Divisor::Overlap => {
            let mut c = vec![0u32; acc.len()];
            for m in state.masks().values() {
                m.iter_ones().for_each(|i| c[i] += 1);
            }
            c.into_iter().map(|k| k.max(1) as f64).collect()
        }
    };

    let mut densities = density_grid.to_vec();
    densities.sort_by(f64::total_cmp);
    let mut alphas = alpha_grid.to_vec();
    alphas.sort_by(f64::total_cmp);

    let mut best: Option<(BitMask, TallChoice)> = None;
    for &target in &densities {
        let lambda = lambda_for_density(&tau, &rest, target)?;
        let mask = tall_mask_from_parts(&tau, &rest, lambda)?;
        for &alpha in &alphas {
            let delta: Vec<f64> = (0..acc.len())
                .map(|i| if mask.get(i) { alpha * acc[i] / divisors[i] } else { 0.0 })
                .collect();
            let model = base.offset_by(&delta)?;
            let acc_value = accuracy(&model, spec, eval_data.iter().copied()).unwrap_or(0.0);
            if best.as_ref().is_none_or(|(_, b)| acc_value > b.accuracy) {
                let choice = TallChoice { lambda, alpha, density_target: target, accuracy: acc_value };
                best = Some((mask.clone(), choice));
            }
        }
    }
    Ok(best.expect("grids are nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TaskId;
    use crate::merging::merge_as;
    use crate::merging::Method;

    #[test]
    fn worked_example() {
        let m = tall_mask_from_parts(&[1.0, 0.1], &[2.0, 3.0], 0.4).unwrap();
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![true, false]);
    }

    #[test]
    fn worked_example_through_state() {
        // tau_t = [1.0, 0.1] merged with a partner giving sum [3.0, 3.1].
        let t = TaskVector::new(ParamVector::new(vec![1.0, 0.1]), TaskId(0));
        let other = TaskVector::new(ParamVector::new(vec![2.0, 3.0]), TaskId(1));
        let s = merge_as(&[t.clone(), other], Method::tall_default()).unwrap();
        let m = tall_mask(&t, &s, 0.4).unwrap();
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![true, false]);
    }

    #[test]
    fn zero_lambda_and_singleton_give_full_masks() {
        let t = TaskVector::new(ParamVector::new(vec![0.3, -0.2, 0.0]), TaskId(0));
        let o = TaskVector::new(ParamVector::new(vec![5.0, 5.0, 5.0]), TaskId(1));
        let s = merge_as(&[t.clone(), o], Method::tall_default()).unwrap();
        assert_eq!(tall_mask(&t, &s, 0.0).unwrap().count_ones(), 3);
        let solo = merge_as(std::slice::from_ref(&t), Method::tall_default()).unwrap();
        for lambda in [0.0, 1.0, 1e9] {
            assert_eq!(tall_mask(&t, &solo, lambda).unwrap().count_ones(), 3);
        }
        assert!(tall_mask(&t, &solo, -1.0).is_err());
    }

    #[test]
    fn density_search_hits_targets() {
        let tau: Vec<f64> = (0..100).map(|i| (i as f64 + 1.0) / 100.0).collect();
        let rest = vec![1.0; 100];
        for target in [0.1, 0.3, 0.5, 0.9, 1.0] {
            let l = lambda_for_density(&tau, &rest, target).unwrap();
            let m = tall_mask_from_parts(&tau, &rest, l).unwrap();
            assert!((m.density() - target).abs() < 1e-9, "target {target}: {}", m.density());
        }
        assert_eq!(lambda_for_density(&tau, &rest, 1.0).unwrap(), 0.0);
    }
}
