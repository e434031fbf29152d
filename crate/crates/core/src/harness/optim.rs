//! Adam with decoupled weight decay, and the per-epoch learning-rate decay.

use std::collections::BTreeMap;

use tlf_tensor::Tensor;

use crate::error::{input_err, Result};
use crate::model::params::{is_decayed, ParamStore};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update of every parameter in `grads`. Parameters
/// flagged for decay additionally shrink by `lr·weight_decay·p`.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[(String, Tensor)],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(input_err(format!("learning rate {lr} must be positive")));
    }
    for (name, g) in grads {
        let p = store
            .get(name)
            .ok_or_else(|| input_err(format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(input_err(format!(
                "gradient {:?} does not match parameter {name} {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (name, g) in grads {
        let n = g.len();
        let m = state.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let decay = if is_decayed(name) { weight_decay } else { 0.0 };
        let p = store.get_mut(name).expect("checked above").data_mut();
        for i in 0..n {
            let gi = g.data()[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * mhat / (vhat.sqrt() + EPSILON) + lr * decay * p[i];
        }
    }
    Ok(())
}

/// `base_lr · decay^epoch`
pub fn lr_schedule(epoch: usize, base_lr: f64, decay: f64) -> f64 {
    base_lr * decay.powi(epoch as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w.kernel", Tensor::full(&[1], v));
        s
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut s = store(1.5);
        let mut st = OptimizerState::new();
        adam_step(&mut s, &[("w.kernel".into(), Tensor::zeros(&[1]))], &mut st, 0.1, 0.0).unwrap();
        assert_eq!(s.get("w.kernel").unwrap().item(), 1.5);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut s = store(0.0);
        let mut st = OptimizerState::new();
        adam_step(&mut s, &[("w.kernel".into(), Tensor::full(&[1], -4.0))], &mut st, 0.01, 0.0).unwrap();
        let w = s.get("w.kernel").unwrap().item();
        assert!((w - 0.01 * 4.0 / (4.0 + EPSILON)).abs() < 1e-15);
    }

    #[test]
    fn decay_only_on_kernels() {
        let mut s = store(2.0);
        s.insert("w.bias", Tensor::full(&[1], 2.0));
        let mut st = OptimizerState::new();
        let zeros = vec![("w.kernel".into(), Tensor::zeros(&[1])), ("w.bias".into(), Tensor::zeros(&[1]))];
        adam_step(&mut s, &zeros, &mut st, 0.1, 0.5).unwrap();
        assert!((s.get("w.kernel").unwrap().item() - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
        assert_eq!(s.get("w.bias").unwrap().item(), 2.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = store(0.0);
        let mut st = OptimizerState::new();
        assert!(adam_step(&mut s, &[("w.kernel".into(), Tensor::zeros(&[2]))], &mut st, 0.1, 0.0).is_err());
    }

    #[test]
    fn schedule_values() {
        assert_eq!(lr_schedule(0, 0.002, 0.9), 0.002);
        assert!((lr_schedule(1, 0.002, 0.9) - 0.0018).abs() < 1e-15);
        assert!((lr_schedule(10, 0.002, 0.9) - 6.973568802e-4).abs() < 1e-12);
    }
}
