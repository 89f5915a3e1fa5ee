use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::trainer::TaskVector;

/// Number of entries kept per task: `ceil(density * len)`, at least one.
/// Products within 1e-9 of an integer count as that integer.
pub fn keep_count(density: f64, len: usize) -> usize {
    let x = density * len as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k as usize).clamp(1.min(len), len)
}

/// Zeroes all but the `keep` largest-magnitude entries. Equal magnitudes at
/// the cut keep the lower index.
pub fn trim(values: &[f64], keep: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    let mut out = vec![0.0; values.len()];
    for &i in order.iter().take(keep) {
        out[i] = values[i];
    }
    out
}

/// Trim, elect a sign per entry from the trimmed sum, and average the
/// trimmed values that agree with it.
pub fn ties_merge(task_vectors: &[TaskVector], density: f64) -> Result<ParamVector> {
    Ok(ParamVector::from_f64(&ties_merge_f64(task_vectors, density)?))
}

pub fn ties_merge_f64(task_vectors: &[TaskVector], density: f64) -> Result<Vec<f64>> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidParameter(format!("density {density} outside (0, 1]")));
    }
    let first = task_vectors.first().ok_or(Error::NoTasks)?;
    let m = first.len();
    let keep = keep_count(density, m);
    let trimmed = task_vectors
        .iter()
        .map(|t| {
            if t.len() != m {
                return Err(Error::LengthMismatch { expected: m, actual: t.len() });
            }
            Ok(trim(&t.delta.to_f64(), keep))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..m)
        .map(|j| {
            let total: f64 = trimmed.iter().map(|t| t[j]).sum();
            let agree: Vec<f64> = trimmed
                .iter()
                .map(|t| t[j])
                .filter(|&x| x != 0.0 && (x > 0.0) == (total > 0.0))
                .collect();
            if total == 0.0 || agree.is_empty() {
                0.0
            } else {
                agree.iter().sum::<f64>() / agree.len() as f64
            }
        })
        .collect())
}
