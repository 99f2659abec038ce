//! Adam optimizer over named parameter sets.

use ndarray::Array2;

use crate::error::{Error, Result};

use super::params::{GradientSet, ParamSet};

/// Moment estimates and step counter for one parameter set.
///
/// `m` and `v` mirror the parameter shapes and start at zero; `t` counts
/// completed steps and drives bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state with the canonical defaults β1 = 0.9, β2 = 0.999,
    /// ε = 1e-8.
    pub fn new(params: &ParamSet, learning_rate: f64) -> Result<AdamState> {
        AdamState::with_hyperparameters(params, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparameters(
        params: &ParamSet,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Result<AdamState> {
        if !(learning_rate > 0.0 && beta1 > 0.0 && beta2 > 0.0 && epsilon > 0.0) {
            return Err(Error::InvalidArgument(
                "adam hyperparameters must be positive".to_string(),
            ));
        }
        if !(beta1 < 1.0 && beta2 < 1.0) {
            return Err(Error::InvalidArgument(
                "adam decay rates must be below 1".to_string(),
            ));
        }
        let zeros: Vec<Array2<f64>> = params.iter().map(|(_, p)| Array2::zeros(p.dim())).collect();
        Ok(AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update, applied in place. Increments `t`.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &GradientSet,
    state: &mut AdamState,
) -> Result<()> {
    if !grads.matches(params) {
        return Err(Error::ShapeMismatch {
            op: "adam_step".to_string(),
            expected: "gradient set congruent with parameter set".to_string(),
            got: "mismatched keys or shapes".to_string(),
        });
    }
    if state.m.len() != params.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step".to_string(),
            expected: params.len().to_string(),
            got: state.m.len().to_string(),
        });
    }
    for (name, g) in grads.iter() {
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                op: "adam_step".to_string(),
                detail: format!("gradient of `{name}`"),
            });
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    for i in 0..params.len() {
        let g = grads.value_at(i);
        state.m[i] = &state.m[i] * state.beta1 + &(g * (1.0 - state.beta1));
        state.v[i] = &state.v[i] * state.beta2 + &(&(g * g) * (1.0 - state.beta2));
        let p = params.value_at_mut(i);
        ndarray::Zip::from(&mut *p)
            .and(&state.m[i])
            .and(&state.v[i])
            .for_each(|p, &m, &v| {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
            });
    }
    Ok(())
}
