//! Adam with bias correction. Moments exist only for tensors that receive
//! gradients, so frozen groups carry no optimizer state.

use crate::model::{Gradients, ParamSet};
use ndarray::ArrayD;
use std::collections::BTreeMap;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

struct Moments {
    m: ArrayD<f64>,
    v: ArrayD<f64>,
}

/// Per-tensor first/second moment accumulators plus the shared step counter.
#[derive(Default)]
pub struct AdamState {
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimizer step over every tensor present in `grads`.
    pub fn apply(&mut self, params: &mut ParamSet, grads: &Gradients, learning_rate: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);

        for (name, grad) in grads.iter() {
            let tensor = params
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown tensor {name}"));
            let entry = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: ArrayD::zeros(grad.raw_dim()),
                v: ArrayD::zeros(grad.raw_dim()),
            });
            let w = tensor.values.as_slice_mut().expect("standard layout");
            let g = grad.as_slice().expect("standard layout");
            let m = entry.m.as_slice_mut().expect("standard layout");
            let v = entry.v.as_slice_mut().expect("standard layout");
            for i in 0..w.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NamedTensor, ParamGroup};
    use ndarray::IxDyn;

    fn scalar_params(value: f64) -> ParamSet {
        ParamSet::from_tensors(vec![NamedTensor {
            name: "w".into(),
            group: ParamGroup::Fc,
            values: ArrayD::from_elem(IxDyn(&[1]), value),
        }])
        .unwrap()
    }

    #[test]
    fn first_step_is_bias_corrected() {
        // w=1, g=1, lr=0.1: m_hat = v_hat = 1, so w' = 1 - 0.1/(1 + eps).
        let mut params = scalar_params(1.0);
        let mut grads = Gradients::new();
        grads.insert("w", ArrayD::from_elem(IxDyn(&[1]), 1.0));
        let mut adam = AdamState::new();
        adam.apply(&mut params, &grads, 0.1);
        let w = params.get("w").unwrap().values[[0]];
        assert!((w - 0.9).abs() < 1e-8, "w = {w}");
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_bit_identical() {
        let mut params = scalar_params(0.37);
        let before = params.clone();
        let mut grads = Gradients::new();
        grads.insert("w", ArrayD::zeros(IxDyn(&[1])));
        let mut adam = AdamState::new();
        for _ in 0..5 {
            adam.apply(&mut params, &grads, 0.1);
        }
        assert!(params.bit_identical(&before));
    }

    #[test]
    fn missing_gradient_means_no_update() {
        let mut params = scalar_params(2.0);
        let before = params.clone();
        let grads = Gradients::new();
        let mut adam = AdamState::new();
        adam.apply(&mut params, &grads, 0.5);
        assert!(params.bit_identical(&before));
    }
}
