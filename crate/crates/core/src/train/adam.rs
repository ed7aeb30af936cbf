use crate::ad::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one tensor per parameter array.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor<f64>>,
    pub v: Vec<Tensor<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor<f64>]) -> Self {
        let zeros = |p: &Tensor<f64>| Tensor::zeros(p.rows, p.cols);
        AdamState { step: 0, m: params.iter().map(zeros).collect(), v: params.iter().map(zeros).collect() }
    }
}

/// One ADAM update. Weight decay is classical L2 (`g + λθ`) unless
/// `decoupled`, in which case `θ ← θ − lr·λθ` is applied separately.
/// `frozen[i]` skips array `i` entirely.
pub fn adam_step(params: &mut [Tensor<f64>], grads: &[Tensor<f64>], state: &mut AdamState, lr: f64, weight_decay: f64, decoupled: bool, frozen: &[bool]) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || frozen.len() != params.len() {
        return Err(Error::dim("adam_step", format!("{} params, {} grads, {} moments, {} flags", params.len(), grads.len(), state.m.len(), frozen.len())));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::dim("adam_step", format!("array {i}: param {:?}, grad {:?}", p.shape(), g.shape())));
        }
        if let Some(k) = g.data.iter().position(|x| !x.is_finite()) {
            return Err(Error::numerical("adam_step", format!("non-finite gradient in array {i} at index {k}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        if frozen[i] {
            continue;
        }
        let (m, v) = (&mut state.m[i].data, &mut state.v[i].data);
        for (k, x) in p.data.iter_mut().enumerate() {
            let mut g = grads[i].data[k];
            if !decoupled {
                g += weight_decay * *x;
            }
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g;
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g * g;
            let step = lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
            if decoupled {
                *x -= lr * weight_decay * *x;
            }
            *x -= step;
        }
    }
    Ok(())
}
