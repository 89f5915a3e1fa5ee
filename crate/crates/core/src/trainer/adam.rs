use crate::error::{Error, Result};
use crate::param::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam update of `params`.
    pub fn step(&mut self, params: &mut ParamVector, grad: &[f64], lr: f64, hyper: AdamHyper) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::LengthMismatch { expected: self.m.len(), actual: params.len() });
        }
        if grad.len() != self.m.len() {
            return Err(Error::LengthMismatch { expected: self.m.len(), actual: grad.len() });
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        self.t += 1;
        let AdamHyper { beta1, beta2, epsilon } = hyper;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.as_mut_slice().iter_mut().enumerate() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            *p = (*p as f64 - lr * m_hat / (v_hat.sqrt() + epsilon)) as f32;
        }
        Ok(())
    }
}

/// Pure form of [`AdamState::step`].
pub fn adam_step(
    params: &ParamVector,
    grad: &[f64],
    state: &AdamState,
    lr: f64,
    hyper: AdamHyper,
) -> Result<(ParamVector, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grad, lr, hyper)?;
    Ok((p, s))
}
