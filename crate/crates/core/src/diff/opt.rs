//! Plain SGD and Adam over [`ParamVector`]s.

use super::params::ParamVector;
use crate::error::Result;

/// Optimizer state. SGD carries none; Adam tracks per-coordinate first and
/// second moments plus the step counter used for bias correction.
#[derive(Debug, Clone)]
pub enum OptState {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptState {
    pub fn sgd() -> Self {
        OptState::Sgd
    }

    pub fn adam(len: usize) -> Self {
        OptState::Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update `params -= step(grad)`. Rejects non-finite
    /// gradients, naming the segment that produced them.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector, lr: f64) -> Result<()> {
        grad.check_finite("optimizer step gradient")?;
        match self {
            OptState::Sgd => {
                params.axpy(-lr, grad);
            }
            OptState::Adam { m, v, t, beta1, beta2, eps } => {
                assert_eq!(m.len(), params.len(), "Adam state shape mismatch");
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                let values = params.values_mut();
                for i in 0..values.len() {
                    let g = grad.values()[i];
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * g;
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    values[i] -= lr * m_hat / (v_hat.sqrt() + *eps);
                }
            }
        }
        Ok(())
    }
}
