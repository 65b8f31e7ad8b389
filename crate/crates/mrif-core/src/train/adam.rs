//! Bias-corrected adaptive-moment optimizer.

use crate::model::{MrifModel, ParamStore};

use super::TrainError;

/// Per-parameter first/second moment accumulators plus the step counter.
/// Moment shapes mirror the parameter shapes they track.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(model: &MrifModel) -> Self {
        let first = model.params.iter().map(|p| vec![0.0; p.values.len()]).collect();
        let second = model.params.iter().map(|p| vec![0.0; p.values.len()]).collect();
        Self {
            first,
            second,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `grads` aligns with the parameter store; `None` entries
    /// (frozen or unused parameters) are left untouched. A non-finite
    /// gradient halts training, naming the offending parameter.
    pub fn apply(
        &mut self,
        params: &mut ParamStore,
        grads: &[Option<Vec<f64>>],
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Result<(), TrainError> {
        self.step += 1;
        let correction1 = 1.0 - beta1.powi(self.step as i32);
        let correction2 = 1.0 - beta2.powi(self.step as i32);

        for (index, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteGradient {
                    param: params.entry_at(index).name.clone(),
                });
            }
            let m = &mut self.first[index];
            let v = &mut self.second[index];
            let values = params.values_mut(index);
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
