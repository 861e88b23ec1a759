use super::params::{Gradient, ParameterVector};
use crate::config::OptimizerKind;
use crate::{LspError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    /// Plain gradient descent: `theta -= eta * g`.
    Sgd,
    Adam(AdamState),
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => OptimizerState::Adam(AdamState {
                m: vec![0.0; len],
                v: vec![0.0; len],
                step: 0,
            }),
        }
    }
}

/// One optimizer step of size `eta` along `-grad`.
pub fn apply_update(
    params: &mut ParameterVector,
    grad: &Gradient,
    state: &mut OptimizerState,
    eta: f64,
) -> Result<()> {
    if params.layout() != grad.layout() {
        return Err(LspError::Usage(
            "gradient layout does not match parameters".into(),
        ));
    }
    let g = grad.values();
    match state {
        OptimizerState::Sgd => {
            for (p, gi) in params.values_mut().iter_mut().zip(g) {
                *p -= eta * gi;
            }
        }
        OptimizerState::Adam(adam) => {
            if adam.m.len() != g.len() || adam.v.len() != g.len() {
                return Err(LspError::Usage(
                    "optimizer state does not match parameters".into(),
                ));
            }
            adam.step += 1;
            let t = adam.step as i32;
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            let c2 = 1.0 - ADAM_BETA2.powi(t);
            let values = params.values_mut();
            for i in 0..g.len() {
                adam.m[i] = ADAM_BETA1 * adam.m[i] + (1.0 - ADAM_BETA1) * g[i];
                adam.v[i] = ADAM_BETA2 * adam.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = adam.m[i] / c1;
                let v_hat = adam.v[i] / c2;
                values[i] -= eta * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
    Ok(())
}
