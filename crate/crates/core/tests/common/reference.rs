//! Direct-from-formula references for the localization baselines.

use siftmask::data::TaskId;
use siftmask::param::{ParamVector, PrngStream};
use siftmask::trainer::TaskVector;

pub fn tv(id: u32, v: &[f64]) -> TaskVector {
    TaskVector::new(ParamVector::new(v.iter().map(|&x| x as f32).collect()), TaskId(id))
}

/// Small dyadic values, so sums are exact in both f32 and fixed point and
/// ties occur often.
pub fn random_vectors(s: &mut PrngStream) -> Vec<Vec<f64>> {
    let tasks = 1 + s.next_below(5) as usize;
    let len = 1 + s.next_below(64) as usize;
    (0..tasks)
        .map(|_| (0..len).map(|_| (s.next_below(17) as f64 - 8.0) / 4.0).collect())
        .collect()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn ref_tall(taus: &[Vec<f64>], t: usize, lambda: f64) -> Vec<bool> {
    let len = taus[0].len();
    (0..len)
        .map(|i| {
            let total: f64 = taus.iter().map(|v| v[i]).sum();
            taus[t][i].abs() >= lambda * (total - taus[t][i]).abs()
        })
        .collect()
}

pub struct RefEmr {
    pub unified: Vec<f64>,
    pub masks: Vec<Vec<bool>>,
    pub scales: Vec<f64>,
}

pub fn ref_emr(taus: &[Vec<f64>]) -> RefEmr {
    let len = taus[0].len();
    let mut unified = vec![0.0; len];
    for (j, u) in unified.iter_mut().enumerate() {
        let s = sign(taus.iter().map(|v| v[j]).sum());
        let mut best: f64 = 0.0;
        for v in taus {
            if s != 0.0 && sign(v[j]) == s {
                best = best.max(v[j].abs());
            }
        }
        *u = s * best;
    }
    let masks: Vec<Vec<bool>> = taus.iter().map(|v| (0..len).map(|j| v[j] * unified[j] > 0.0).collect()).collect();
    let scales = taus
        .iter()
        .zip(&masks)
        .map(|(v, m)| {
            let num: f64 = v.iter().map(|x| x.abs()).sum();
            let den: f64 = (0..len).filter(|&j| m[j]).map(|j| unified[j].abs()).sum();
            if den == 0.0 {
                1.0
            } else {
                num / den
            }
        })
        .collect();
    RefEmr { unified, masks, scales }
}

/// `density = tenths / 10`.
pub fn ref_ties(taus: &[Vec<f64>], tenths: usize) -> Vec<f64> {
    let len = taus[0].len();
    let keep = (tenths * len).div_ceil(10).max(1);
    let trimmed: Vec<Vec<f64>> = taus
        .iter()
        .map(|v| {
            (0..len)
                .map(|j| {
                    let ahead = (0..len)
                        .filter(|&i| v[i].abs() > v[j].abs() || (v[i].abs() == v[j].abs() && i < j))
                        .count();
                    if ahead < keep {
                        v[j]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    (0..len)
        .map(|j| {
            let gamma = sign(trimmed.iter().map(|v| v[j]).sum());
            let agree: Vec<f64> =
                trimmed.iter().map(|v| v[j]).filter(|&x| gamma != 0.0 && sign(x) == gamma).collect();
            if agree.is_empty() {
                0.0
            } else {
                agree.iter().sum::<f64>() / agree.len() as f64
            }
        })
        .collect()
}

