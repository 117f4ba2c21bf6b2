use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Floor of the cosine schedule as a fraction of the initial rate.
    pub alpha: f64,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            alpha: 1e-2,
            epochs: 500,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::contract("learning rate must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::contract("cosine floor alpha must lie in (0, 1]"));
        }
        if !((0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0)
        {
            return Err(Error::contract(
                "Adam betas must lie in [0, 1) and epsilon be positive",
            ));
        }
        Ok(())
    }
}

/// Cosine decay from `learning_rate` to `alpha·learning_rate` over `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, cfg: &OptimizerConfig) -> f64 {
    if total_steps == 0 {
        return cfg.learning_rate;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
    cfg.learning_rate * (cfg.alpha + (1.0 - cfg.alpha) * cosine)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Updates applied so far.
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place. A non-finite gradient leaves
/// parameters and moments untouched and returns an evaluation error.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::contract("Adam shapes do not align"));
    }
    if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Evaluation(format!(
            "non-finite gradient at parameter {k}"
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[k] / bc1;
        let v_hat = state.v[k] / bc2;
        params[k] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = OptimizerConfig::default();
        assert_eq!(cosine_lr(0, 500, &cfg), 1e-3);
        assert!((cosine_lr(500, 500, &cfg) - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(250, 500, &cfg) - 5.05e-4).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let cfg = OptimizerConfig::default();
        let mut p = vec![0.5, -1.0];
        let mut st = AdamState {
            m: vec![0.1, 0.2],
            v: vec![0.01, 0.02],
            step: 3,
        };
        adam_update(&mut p, &[0.0, 0.0], &mut st, 1e-3, &cfg).unwrap();
        assert!(p[0] < 0.5); // momentum still moves
        let mut q = vec![0.5, -1.0];
        let mut fresh = AdamState::new(2);
        adam_update(&mut q, &[0.0, 0.0], &mut fresh, 1e-3, &cfg).unwrap();
        assert_eq!(q, vec![0.5, -1.0]);
        assert!((st.m[0] - 0.09).abs() < 1e-15);
        assert!((st.v[1] - 0.02 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_has_unit_magnitude() {
        let cfg = OptimizerConfig::default();
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        adam_update(&mut p, &[1.0], &mut st, 1e-3, &cfg).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-10, "{}", p[0]);
    }

    #[test]
    fn deterministic_and_aborts_on_nan() {
        let cfg = OptimizerConfig::default();
        let run = || {
            let mut p = vec![0.3, 0.7];
            let mut st = AdamState::new(2);
            adam_update(&mut p, &[0.2, -0.4], &mut st, 1e-3, &cfg).unwrap();
            (p, st)
        };
        assert_eq!(run(), run());
        let mut p = vec![0.3];
        let mut st = AdamState::new(1);
        assert!(adam_update(&mut p, &[f64::NAN], &mut st, 1e-3, &cfg).is_err());
        assert_eq!(p, vec![0.3]);
        assert_eq!(st.step, 0);
    }
}
