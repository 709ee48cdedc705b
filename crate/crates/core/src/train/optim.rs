use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for the unfrozen parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn moments(&self, id: &str) -> Option<(&[f64], &[f64])> {
        self.moments
            .get(id)
            .map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    pub fn tracked(&self) -> usize {
        self.moments.len()
    }
}

/// One bias-corrected Adam update from the gradients stored on `params`.
/// Frozen parameters are skipped; an unfrozen one without a gradient is a
/// contract error and leaves everything unchanged.
pub fn adam_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if let Some(p) = params
        .iter()
        .find(|p| !params.is_frozen(&p.id) && p.value.grad.is_none())
    {
        return Err(Error::Contract(format!(
            "no gradient for unfrozen '{}'",
            p.id
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let frozen = params.frozen().clone();
    for p in params.iter_mut() {
        if frozen.contains(&p.id) {
            continue;
        }
        let n = p.value.numel();
        let (m, v) = state
            .moments
            .entry(p.id.clone())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        let grad = p.value.grad.take().expect("checked above");
        for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(&grad).zip(m).zip(v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
