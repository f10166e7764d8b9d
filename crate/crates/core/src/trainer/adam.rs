use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// First and second moments for one parameter group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Drops entries of `width`-sized records whose flag is false.
    pub fn retain_records(&mut self, width: usize, keep: &[bool]) {
        let mut out_m = Vec::with_capacity(self.m.len());
        let mut out_v = Vec::with_capacity(self.v.len());
        for (r, &k) in keep.iter().enumerate() {
            if k {
                out_m.extend_from_slice(&self.m[r * width..(r + 1) * width]);
                out_v.extend_from_slice(&self.v[r * width..(r + 1) * width]);
            }
        }
        self.m = out_m;
        self.v = out_v;
    }

    /// Appends zeroed moments for `records` new `width`-sized records.
    pub fn extend_zeros(&mut self, width: usize, records: usize) {
        self.m.resize(self.m.len() + width * records, 0.0);
        self.v.resize(self.v.len() + width * records, 0.0);
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    config: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::dimension("adam gradients", params.len(), grads.len()));
    }
    if state.len() != params.len() {
        return Err(Error::dimension("adam state", params.len(), state.len()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        let v = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        if m_hat != 0.0 {
            params[i] -= lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_from_fresh_state_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.5];
        let before = p.clone();
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.1, &cfg).unwrap();
        let (m, v) = (s.m[0], s.v[0]);
        adam_step(&mut p, &[0.0], &mut s, 0.1, &cfg).unwrap();
        assert!((s.m[0] - cfg.beta1 * m).abs() < 1e-15);
        assert!((s.v[0] - cfg.beta2 * v).abs() < 1e-18);
    }

    #[test]
    fn constant_gradient_steps_approach_lr_sign() {
        let cfg = AdamConfig::default();
        let lr = 0.01;
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2);
        let mut last = p.clone();
        for _ in 0..2000 {
            last.copy_from_slice(&p);
            adam_step(&mut p, &[3.0, -0.2], &mut s, lr, &cfg).unwrap();
        }
        assert!(((last[0] - p[0]) - lr).abs() < 1e-9);
        assert!(((p[1] - last[1]) - lr).abs() < 1e-9);
    }

    #[test]
    fn quadratic_converges() {
        // f(x) = (x - 3)^2, lr 0.1.
        let cfg = AdamConfig::default();
        let mut x = vec![-4.0];
        let mut s = AdamState::new(1);
        let mut converged_at = None;
        for step in 0..500 {
            let g = 2.0 * (x[0] - 3.0);
            adam_step(&mut x, &[g], &mut s, 0.1, &cfg).unwrap();
            if (x[0] - 3.0).abs() < 1e-6 && converged_at.is_none() {
                converged_at = Some(step);
            }
        }
        assert!(converged_at.is_some());
        assert!((x[0] - 3.0).abs() < 1e-6, "x = {}", x[0]);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut p, &[0.0; 3], &mut s, 0.1, &AdamConfig::default()).is_err());
        let mut s = AdamState::new(1);
        assert!(adam_step(&mut p, &[0.0; 2], &mut s, 0.1, &AdamConfig::default()).is_err());
    }
}
