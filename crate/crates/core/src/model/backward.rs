//! Freeze-aware backpropagation from the logits gradient down the network.
//!
//! Gradients are returned only for tensors in unfrozen groups, and the pass
//! stops descending as soon as no deeper group needs anything.

use super::conv::conv2d_backward;
use super::forward::{reverse_rows, view2, view4, ActivationTape};
use super::{FreezeSpec, ModelConfig, ModelError, ParamGroup, ParamSet};
use ndarray::{Array2, Array3, ArrayD, Axis};
use std::collections::BTreeMap;

/// Per-tensor loss gradients, keyed by tensor name. Only unfrozen tensors
/// ever appear.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    entries: BTreeMap<String, ArrayD<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: ArrayD<f64>) {
        self.entries.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<f64>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Elementwise accumulate, used when summing per-item gradients.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, grad) in &other.entries {
            match self.entries.get_mut(name) {
                Some(acc) => *acc += grad,
                None => {
                    self.entries.insert(name.clone(), grad.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for grad in self.entries.values_mut() {
            *grad *= factor;
        }
    }

    /// L2 norm over every entry jointly, as used by global-norm clipping.
    pub fn global_norm(&self) -> f64 {
        self.entries
            .values()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Backpropagates `dlogits` through the tape. The tape is consumed; a second
/// backward over the same forward call is a compile error, not a runtime one.
pub fn backward(
    config: &ModelConfig,
    params: &ParamSet,
    tape: ActivationTape,
    dlogits: &Array2<f64>,
    freeze: &FreezeSpec,
) -> Result<Gradients, ModelError> {
    if tape.fingerprint != config.fingerprint() {
        return Err(ModelError::ShapeMismatch(
            "tape was recorded under a different model config".into(),
        ));
    }
    if dlogits.dim() != (tape.t_len, config.alphabet_size) {
        return Err(ModelError::ShapeMismatch(format!(
            "dlogits is {:?}, expected ({}, {})",
            dlogits.dim(),
            tape.t_len,
            config.alphabet_size
        )));
    }

    let need_fc = !freeze.is_frozen(ParamGroup::Fc);
    let need_blstm = !freeze.is_frozen(ParamGroup::Blstm);
    let need_conv = !freeze.is_frozen(ParamGroup::Conv);
    let mut grads = Gradients::new();

    // FC head.
    let w1 = view2(params, "fc1.w")?;
    let w2 = view2(params, "fc2.w")?;
    if need_fc {
        grads.insert("fc2.w", tape.a1.t().dot(dlogits).into_dyn());
        grads.insert("fc2.b", dlogits.sum_axis(Axis(0)).into_dyn());
    }
    let da1 = dlogits.dot(&w2.t());
    let dz1 = &da1 * &tape.z1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    if need_fc {
        grads.insert("fc1.w", tape.fc_input.t().dot(&dz1).into_dyn());
        grads.insert("fc1.b", dz1.sum_axis(Axis(0)).into_dyn());
    }
    if !need_blstm && !need_conv {
        return Ok(grads);
    }

    // BLSTM stack, top layer first. The input gradient of layer l is the
    // output gradient of layer l-1.
    let mut dh = dz1.dot(&w1.t());
    for l in (0..config.blstm_layers).rev() {
        let trace = &tape.blstm[l];
        let name = format!("blstm{}", l + 1);
        let need_dx = l > 0 || need_conv;

        let w_ih_f = view2(params, &format!("{name}.f.w_ih"))?;
        let w_hh_f = view2(params, &format!("{name}.f.w_hh"))?;
        let fwd = super::lstm::lstm_backward(&trace.fwd, w_ih_f, w_hh_f, &dh, need_blstm, need_dx);

        let w_ih_r = view2(params, &format!("{name}.r.w_ih"))?;
        let w_hh_r = view2(params, &format!("{name}.r.w_hh"))?;
        let dh_rev = reverse_rows(&dh);
        let rev =
            super::lstm::lstm_backward(&trace.rev, w_ih_r, w_hh_r, &dh_rev, need_blstm, need_dx);

        if need_blstm {
            grads.insert(format!("{name}.f.w_ih"), fwd.dw_ih.unwrap().into_dyn());
            grads.insert(format!("{name}.f.w_hh"), fwd.dw_hh.unwrap().into_dyn());
            grads.insert(format!("{name}.f.b"), fwd.db.unwrap().into_dyn());
            grads.insert(format!("{name}.r.w_ih"), rev.dw_ih.unwrap().into_dyn());
            grads.insert(format!("{name}.r.w_hh"), rev.dw_hh.unwrap().into_dyn());
            grads.insert(format!("{name}.r.b"), rev.db.unwrap().into_dyn());
        }
        if need_dx {
            dh = fwd.dx.unwrap() + reverse_rows(&rev.dx.unwrap());
        } else {
            break;
        }
    }
    if !need_conv {
        return Ok(grads);
    }

    // Unflatten (T, C*M) back to (C, T, M) and walk the conv stack down.
    let channels = config.conv_layers.last().unwrap().channels;
    let bins = config.input_bins;
    let mut da3 = Array3::zeros((channels, tape.t_len, bins));
    for c in 0..channels {
        for t in 0..tape.t_len {
            for m in 0..bins {
                da3[[c, t, m]] = dh[[t, c * bins + m]];
            }
        }
    }
    for l in (0..config.conv_layers.len()).rev() {
        let trace = &tape.conv[l];
        let dz = &da3 * &trace.preact.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let w = view4(params, &format!("conv{}.w", l + 1))?;
        let (dw, db, dx) = conv2d_backward(trace.input.view(), w, dz.view(), l > 0);
        grads.insert(format!("conv{}.w", l + 1), dw.into_dyn());
        grads.insert(format!("conv{}.b", l + 1), db.into_dyn());
        if let Some(dx) = dx {
            da3 = dx;
        }
    }

    Ok(grads)
}
