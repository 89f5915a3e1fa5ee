//! Small dense classifiers over flat parameter vectors.
//!
//! Layouts, row-major:
//! * logistic: `W[C][d]`, `b[C]`
//! * mlp: `W1[h][d]`, `b1[h]`, `W2[C][h]`, `b2[C]` with a tanh hidden layer

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::param::{ParamVector, PrngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Ignored for logistic models.
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        Self { kind: ModelKind::Logistic, input_dim, hidden_dim: 0, num_classes }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self { kind: ModelKind::Mlp, input_dim, hidden_dim, num_classes }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidParameter("input_dim and num_classes must be positive".into()));
        }
        if self.kind == ModelKind::Mlp && self.hidden_dim == 0 {
            return Err(Error::InvalidParameter("mlp hidden_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        match self.kind {
            ModelKind::Logistic => d * c + c,
            ModelKind::Mlp => d * h + h + h * c + c,
        }
    }
}

/// Gaussian weights scaled by `1/sqrt(fan_in)`, zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut s = PrngStream::new(seed);
    let (d, h, c) = (spec.input_dim, spec.hidden_dim, spec.num_classes);
    let mut layer = |out: &mut Vec<f32>, rows: usize, fan_in: usize| {
        let scale = 1.0 / (fan_in as f64).sqrt();
        out.extend((0..rows * fan_in).map(|_| (s.next_gaussian() * scale) as f32));
        out.extend(std::iter::repeat_n(0.0, rows));
    };
    let mut p = Vec::with_capacity(spec.param_count());
    match spec.kind {
        ModelKind::Logistic => layer(&mut p, c, d),
        ModelKind::Mlp => {
            layer(&mut p, h, d);
            layer(&mut p, c, h);
        }
    }
    ParamVector::new(p)
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let fan_in = x.len();
    for (k, o) in out.iter_mut().enumerate() {
        let row = &w[k * fan_in..(k + 1) * fan_in];
        *o = b[k] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Writes softmax probabilities into `logits` and returns the log partition.
fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
    max + sum.ln()
}

struct Layout {
    d: usize,
    h: usize,
    c: usize,
}

impl Layout {
    fn of(spec: &ModelSpec) -> Self {
        Self { d: spec.input_dim, h: spec.hidden_dim, c: spec.num_classes }
    }
}

/// Class scores for one input.
pub fn logits(params: &[f64], spec: &ModelSpec, x: &[f64]) -> Vec<f64> {
    let Layout { d, h, c } = Layout::of(spec);
    let mut out = vec![0.0; c];
    match spec.kind {
        ModelKind::Logistic => affine(&params[..c * d], &params[c * d..], x, &mut out),
        ModelKind::Mlp => {
            let (w1, rest) = params.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let mut hidden = vec![0.0; h];
            affine(w1, b1, x, &mut hidden);
            hidden.iter_mut().for_each(|a| *a = a.tanh());
            affine(w2, b2, &hidden, &mut out);
        }
    }
    out
}

/// Index of the largest score, first one on ties.
pub fn predict(params: &[f64], spec: &ModelSpec, x: &[f64]) -> usize {
    let scores = logits(params, spec, x);
    let mut best = 0;
    for k in 1..scores.len() {
        if scores[k] > scores[best] {
            best = k;
        }
    }
    best
}

/// Fraction of `examples` classified correctly; `None` when empty.
pub fn accuracy<'a>(
    params: &ParamVector,
    spec: &ModelSpec,
    examples: impl IntoIterator<Item = &'a Example>,
) -> Option<f64> {
    let p = params.to_f64();
    let (mut hits, mut n) = (0usize, 0usize);
    for e in examples {
        n += 1;
        hits += (predict(&p, spec, &e.features) == e.label) as usize;
    }
    (n > 0).then(|| hits as f64 / n as f64)
}

fn check_batch(spec: &ModelSpec, params_len: usize, batch: &[&Example]) -> Result<()> {
    if params_len != spec.param_count() {
        return Err(Error::LengthMismatch { expected: spec.param_count(), actual: params_len });
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for e in batch {
        if e.features.len() != spec.input_dim {
            return Err(Error::DimensionMismatch { expected: spec.input_dim, actual: e.features.len() });
        }
        if e.label >= spec.num_classes {
            return Err(Error::LabelOutOfRange { label: e.label, num_classes: spec.num_classes });
        }
    }
    Ok(())
}

/// Mean softmax cross-entropy over `batch` and its gradient, in f64.
///
/// Accumulation runs over the batch in order, then over entries, so results
/// are bit-reproducible.
pub fn loss_and_grad_f64(params: &[f64], spec: &ModelSpec, batch: &[&Example]) -> Result<(f64, Vec<f64>)> {
    check_batch(spec, params.len(), batch)?;
    let Layout { d, h, c } = Layout::of(spec);
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let mut probs = vec![0.0; c];

    match spec.kind {
        ModelKind::Logistic => {
            let (w, b) = params.split_at(c * d);
            for e in batch {
                affine(w, b, &e.features, &mut probs);
                let y_logit = probs[e.label];
                loss += softmax_in_place(&mut probs) - y_logit;
                probs[e.label] -= 1.0;
                let (gw, gb) = grad.split_at_mut(c * d);
                for k in 0..c {
                    let delta = probs[k];
                    gw[k * d..(k + 1) * d].iter_mut().zip(&e.features).for_each(|(g, x)| *g += delta * x);
                    gb[k] += delta;
                }
            }
        }
        ModelKind::Mlp => {
            let (w1, rest) = params.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let mut hidden = vec![0.0; h];
            let mut dhidden = vec![0.0; h];
            for e in batch {
                affine(w1, b1, &e.features, &mut hidden);
                hidden.iter_mut().for_each(|a| *a = a.tanh());
                affine(w2, b2, &hidden, &mut probs);
                let y_logit = probs[e.label];
                loss += softmax_in_place(&mut probs) - y_logit;
                probs[e.label] -= 1.0;

                let (gw1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                dhidden.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..c {
                    let delta = probs[k];
                    gb2[k] += delta;
                    for j in 0..h {
                        gw2[k * h + j] += delta * hidden[j];
                        dhidden[j] += delta * w2[k * h + j];
                    }
                }
                for j in 0..h {
                    let da = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
                    gb1[j] += da;
                    gw1[j * d..(j + 1) * d].iter_mut().zip(&e.features).for_each(|(g, x)| *g += da * x);
                }
            }
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Mean cross-entropy only.
pub fn loss_f64(params: &[f64], spec: &ModelSpec, batch: &[&Example]) -> Result<f64> {
    check_batch(spec, params.len(), batch)?;
    let mut total = 0.0;
    for e in batch {
        let mut scores = logits(params, spec, &e.features);
        let y = scores[e.label];
        total += softmax_in_place(&mut scores) - y;
    }
    Ok(total / batch.len() as f64)
}

/// [`loss_and_grad_f64`] on a stored parameter vector, gradient rounded to f32.
pub fn loss_and_grad(params: &ParamVector, spec: &ModelSpec, batch: &[&Example]) -> Result<(f64, ParamVector)> {
    let (loss, grad) = loss_and_grad_f64(&params.to_f64(), spec, batch)?;
    Ok((loss, ParamVector::from_f64(&grad)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch_of(spec: &ModelSpec, n: usize, seed: u64) -> Vec<Example> {
        let mut s = PrngStream::new(seed);
        (0..n)
            .map(|_| Example {
                features: (0..spec.input_dim).map(|_| s.next_gaussian()).collect(),
                label: s.next_below(spec.num_classes as u64) as usize,
            })
            .collect()
    }

    #[test]
    fn param_counts() {
        assert_eq!(ModelSpec::logistic(10, 3).param_count(), 33);
        assert_eq!(ModelSpec::mlp(10, 4, 3).param_count(), 40 + 4 + 12 + 3);
        assert!(ModelSpec::mlp(3, 0, 2).validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let spec = ModelSpec::mlp(5, 4, 3);
        assert_eq!(init_params(&spec, 1), init_params(&spec, 1));
        assert_ne!(init_params(&spec, 1), init_params(&spec, 2));
        assert_eq!(init_params(&spec, 1).len(), spec.param_count());
    }

    #[test]
    fn zero_params_give_log_c() {
        for spec in [ModelSpec::logistic(4, 5), ModelSpec::mlp(4, 3, 5)] {
            let data = batch_of(&spec, 7, 3);
            let batch: Vec<&Example> = data.iter().collect();
            let (loss, _) = loss_and_grad_f64(&vec![0.0; spec.param_count()], &spec, &batch).unwrap();
            assert!((loss - 5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_example_logistic_gradient_rows() {
        // d(loss)/dW[k] = (softmax_k - 1{k = y}) x, hand-derived.
        let spec = ModelSpec::logistic(3, 3);
        let params = init_params(&spec, 4).to_f64();
        let e = Example { features: vec![0.5, -1.0, 2.0], label: 1 };
        let (_, grad) = loss_and_grad_f64(&params, &spec, &[&e]).unwrap();
        let mut p = logits(&params, &spec, &e.features);
        softmax_in_place(&mut p);
        for k in 0..3 {
            let coef = p[k] - if k == 1 { 1.0 } else { 0.0 };
            for j in 0..3 {
                assert!((grad[k * 3 + j] - coef * e.features[j]).abs() < 1e-14);
            }
            assert!((grad[9 + k] - coef).abs() < 1e-14);
        }
    }

    #[test]
    fn batch_validation() {
        let spec = ModelSpec::logistic(2, 2);
        let p = vec![0.0; spec.param_count()];
        assert!(matches!(loss_and_grad_f64(&p, &spec, &[]), Err(Error::EmptyBatch)));
        let bad_label = Example { features: vec![0.0, 0.0], label: 2 };
        assert!(matches!(loss_and_grad_f64(&p, &spec, &[&bad_label]), Err(Error::LabelOutOfRange { .. })));
        let bad_dim = Example { features: vec![0.0], label: 0 };
        assert!(matches!(loss_and_grad_f64(&p, &spec, &[&bad_dim]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn loss_only_matches_loss_and_grad() {
        let spec = ModelSpec::mlp(6, 5, 4);
        let data = batch_of(&spec, 9, 8);
        let batch: Vec<&Example> = data.iter().collect();
        let params = init_params(&spec, 2).to_f64();
        let (a, _) = loss_and_grad_f64(&params, &spec, &batch).unwrap();
        assert!((a - loss_f64(&params, &spec, &batch).unwrap()).abs() < 1e-12);
    }
}
