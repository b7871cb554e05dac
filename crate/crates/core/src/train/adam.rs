use crate::tensor::Tensor;

use super::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, aligned with a parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &[(String, Tensor)]) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        Self {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update from the gradients currently stored on
/// `params`. Nothing is modified when any gradient is non-finite.
pub fn adam_step(params: &[(String, Tensor)], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(TrainError::Checkpoint(format!(
            "optimizer state has {} entries for {} parameters",
            state.m.len(),
            params.len()
        )));
    }
    let grads: Vec<Option<Vec<f32>>> = params.iter().map(|(_, p)| p.grad()).collect();
    for ((name, _), g) in params.iter().zip(&grads) {
        if g.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(TrainError::NonFiniteGradient(name.clone()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, ((_, p), g)) in params.iter().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let mut data = p.data_mut();
        for j in 0..g.len() {
            let gj = g[j] as f64;
            let mj = cfg.beta1 * m[j] as f64 + (1.0 - cfg.beta1) * gj;
            let vj = cfg.beta2 * v[j] as f64 + (1.0 - cfg.beta2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let step = cfg.lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps);
            data[j] = (data[j] as f64 - step) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: Vec<f32>) -> Vec<(String, Tensor)> {
        let n = v.len();
        vec![("theta".to_string(), Tensor::parameter(v, &[n]).unwrap())]
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let params = param(vec![0.5, -0.5]);
        let x = &params[0].1;
        x.sum().backward().unwrap();
        let mut st = AdamState::new(&params);
        let cfg = AdamConfig {
            lr: 1e-3,
            ..Default::default()
        };
        adam_step(&params, &mut st, &cfg).unwrap();
        let d = x.to_vec();
        let want = 1e-3 / (1.0 + 1e-8);
        assert!(((0.5 - d[0] as f64) - want).abs() < 1e-7);
        assert!(((-0.5 - d[1] as f64) - want).abs() < 1e-7);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let params = param(vec![3.0]);
        let x = &params[0].1;
        let mut st = AdamState::new(&params);
        let cfg = AdamConfig {
            lr: 0.05,
            ..Default::default()
        };
        for _ in 0..2000 {
            x.zero_grad();
            x.mul(x).unwrap().sum().backward().unwrap();
            adam_step(&params, &mut st, &cfg).unwrap();
        }
        assert!(x.item().abs() < 1e-3);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let params = param(vec![0.0]);
        let x = &params[0].1;
        x.ln().sum().backward().unwrap();
        let mut st = AdamState::new(&params);
        match adam_step(&params, &mut st, &AdamConfig::default()) {
            Err(TrainError::NonFiniteGradient(name)) => assert_eq!(name, "theta"),
            other => panic!("{other:?}"),
        }
        assert_eq!(x.item(), 0.0);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let params = param(vec![1.25, -2.0]);
        let x = &params[0].1;
        x.mul(x).unwrap().sum().backward().unwrap();
        let mut st = AdamState::new(&params);
        adam_step(&params, &mut st, &AdamConfig { lr: 0.0, ..Default::default() }).unwrap();
        assert_eq!(x.to_vec(), vec![1.25, -2.0]);
    }
}
