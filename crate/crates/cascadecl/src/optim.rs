//! Flat parameter vectors and first-order optimizers.
//!
//! Models keep their weights as a list of matrices; training, checkpointing
//! and the continual-learning methods all want one contiguous `Vec<f64>`.
//! [`ParamLayout`] maps between the two representations bitwise-exactly.
//! SGD and Adam operate on the flat form.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_ADAM_EPS: f64 = 1e-8;

pub const DEFAULT_EPOCHS: usize = 60;
pub const DEFAULT_BATCH_SIZE: usize = 8;
pub const DEFAULT_PATIENCE: usize = 10;

/// Knobs for one gradient-descent training loop. The defaults reflect the
/// protocol used throughout: a generous epoch budget with early stopping,
/// since these models converge quickly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs without improvement in the stopping criterion before the
    /// loop halts.
    pub patience: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: DEFAULT_LR,
            patience: DEFAULT_PATIENCE,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OptimError {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("shape mismatch at parameter {index}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Shape record for a fixed parameter list; converts between matrix lists
/// and flat vectors. The round trip is exact down to the bit pattern.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    shapes: Vec<(usize, usize)>,
}

impl ParamLayout {
    pub fn of(params: &[Array2<f64>]) -> Self {
        ParamLayout {
            shapes: params.iter().map(|p| p.dim()).collect(),
        }
    }

    pub fn total_len(&self) -> usize {
        self.shapes.iter().map(|(r, c)| r * c).sum()
    }

    pub fn tensor_count(&self) -> usize {
        self.shapes.len()
    }

    pub fn flatten(&self, params: &[Array2<f64>]) -> Result<Vec<f64>, OptimError> {
        if params.len() != self.shapes.len() {
            return Err(OptimError::LengthMismatch {
                expected: self.shapes.len(),
                got: params.len(),
            });
        }
        let mut flat = Vec::with_capacity(self.total_len());
        for (index, (p, &expected)) in params.iter().zip(&self.shapes).enumerate() {
            if p.dim() != expected {
                return Err(OptimError::ShapeMismatch {
                    index,
                    expected,
                    got: p.dim(),
                });
            }
            flat.extend(p.iter().copied());
        }
        Ok(flat)
    }

    pub fn unflatten(&self, flat: &[f64]) -> Result<Vec<Array2<f64>>, OptimError> {
        if flat.len() != self.total_len() {
            return Err(OptimError::LengthMismatch {
                expected: self.total_len(),
                got: flat.len(),
            });
        }
        let mut out = Vec::with_capacity(self.shapes.len());
        let mut offset = 0;
        for &(r, c) in &self.shapes {
            let next = offset + r * c;
            let m = Array2::from_shape_vec((r, c), flat[offset..next].to_vec())
                .expect("length checked above");
            out.push(m);
            offset = next;
        }
        Ok(out)
    }
}

/// Plain gradient descent: `theta <- theta - lr * g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), OptimError> {
    if params.len() != grads.len() {
        return Err(OptimError::LengthMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// First and second moment estimates for Adam, serializable so training can
/// resume from a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One Adam update with bias correction.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<(), OptimError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(OptimError::LengthMismatch {
            expected: params.len(),
            got: grads.len().min(state.m.len()),
        });
    }
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam with the library defaults.
pub fn adam_step_default(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), OptimError> {
    adam_step(
        params,
        grads,
        state,
        lr,
        DEFAULT_BETA1,
        DEFAULT_BETA2,
        DEFAULT_ADAM_EPS,
    )
}
