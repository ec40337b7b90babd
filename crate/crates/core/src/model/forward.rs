//! Full network forward pass: conv stack -> BLSTM stack -> FC head,
//! recording the activations backpropagation needs.

use super::conv::conv2d_forward;
use super::lstm::{lstm_forward, LstmCache};
use super::{ModelConfig, ModelError, ParamSet};
use ndarray::{Array2, Array3, ArrayView1, ArrayView2, ArrayView4, ArrayViewD, Ix1, Ix2, Ix4};

pub(super) struct ConvTrace {
    pub input: Array3<f64>,
    pub preact: Array3<f64>,
}

pub(super) struct BlstmTrace {
    pub fwd: LstmCache,
    /// Cache of the reverse direction, stored in reversed time.
    pub rev: LstmCache,
}

/// Cached activations from exactly one forward call. Consumed by value in
/// `backward`, so a tape cannot be replayed.
pub struct ActivationTape {
    pub(super) t_len: usize,
    pub(super) fingerprint: u64,
    pub(super) conv: Vec<ConvTrace>,
    pub(super) blstm: Vec<BlstmTrace>,
    pub(super) fc_input: Array2<f64>,
    pub(super) z1: Array2<f64>,
    pub(super) a1: Array2<f64>,
}

fn dim_err(name: &str, shape: &[usize]) -> ModelError {
    ModelError::ShapeMismatch(format!("tensor {name} has unexpected shape {shape:?}"))
}

pub(super) fn view1<'a>(params: &'a ParamSet, name: &str) -> Result<ArrayView1<'a, f64>, ModelError> {
    let t = params
        .get(name)
        .ok_or_else(|| ModelError::UnknownTensor(name.to_string()))?;
    as_dim1(&t.values.view(), name)
}

pub(super) fn view2<'a>(params: &'a ParamSet, name: &str) -> Result<ArrayView2<'a, f64>, ModelError> {
    let t = params
        .get(name)
        .ok_or_else(|| ModelError::UnknownTensor(name.to_string()))?;
    t.values
        .view()
        .into_dimensionality::<Ix2>()
        .map_err(|_| dim_err(name, t.values.shape()))
}

pub(super) fn view4<'a>(params: &'a ParamSet, name: &str) -> Result<ArrayView4<'a, f64>, ModelError> {
    let t = params
        .get(name)
        .ok_or_else(|| ModelError::UnknownTensor(name.to_string()))?;
    t.values
        .view()
        .into_dimensionality::<Ix4>()
        .map_err(|_| dim_err(name, t.values.shape()))
}

fn as_dim1<'a>(view: &ArrayViewD<'a, f64>, name: &str) -> Result<ArrayView1<'a, f64>, ModelError> {
    view.clone()
        .into_dimensionality::<Ix1>()
        .map_err(|_| dim_err(name, view.shape()))
}

pub(super) fn reverse_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    out.invert_axis(ndarray::Axis(0));
    out
}

fn relu3(m: &Array3<f64>) -> Array3<f64> {
    m.mapv(|v| v.max(0.0))
}

/// Computes per-frame logits (T x alphabet_size) and the tape for backward.
/// Logits are unnormalized scores; softmax is applied inside the CTC loss.
pub fn forward(
    config: &ModelConfig,
    params: &ParamSet,
    features: ArrayView2<f64>,
) -> Result<(Array2<f64>, ActivationTape), ModelError> {
    if features.ncols() != config.input_bins {
        return Err(ModelError::ShapeMismatch(format!(
            "feature width {} does not match configured input width {}",
            features.ncols(),
            config.input_bins
        )));
    }
    let t_len = features.nrows();
    if t_len == 0 {
        return Err(ModelError::ShapeMismatch("empty feature matrix".into()));
    }

    // Fixed input conditioning, then the conv stack over (time, mel) with a
    // single input channel.
    let (center, spread) = (config.feature_center, config.feature_spread);
    let mut x3 = Array3::from_shape_fn((1, t_len, config.input_bins), |(_, t, m)| {
        (features[[t, m]] - center) / spread
    });
    let mut conv_traces = Vec::with_capacity(config.conv_layers.len());
    for l in 0..config.conv_layers.len() {
        let w = view4(params, &format!("conv{}.w", l + 1))?;
        let b = view1(params, &format!("conv{}.b", l + 1))?;
        let preact = conv2d_forward(x3.view(), w, b);
        let next = relu3(&preact);
        conv_traces.push(ConvTrace { input: x3, preact });
        x3 = next;
    }

    // Flatten channels x mel into the per-frame feature vector.
    let channels = config.conv_layers.last().unwrap().channels;
    let width = channels * config.input_bins;
    let mut x2 = Array2::zeros((t_len, width));
    for c in 0..channels {
        for t in 0..t_len {
            for m in 0..config.input_bins {
                x2[[t, c * config.input_bins + m]] = x3[[c, t, m]];
            }
        }
    }

    // BLSTM stack, sum merge.
    let mut blstm_traces = Vec::with_capacity(config.blstm_layers);
    for l in 0..config.blstm_layers {
        let name = format!("blstm{}", l + 1);
        let w_ih_f = view2(params, &format!("{name}.f.w_ih"))?;
        let w_hh_f = view2(params, &format!("{name}.f.w_hh"))?;
        let b_f = view1(params, &format!("{name}.f.b"))?.to_owned();
        let w_ih_r = view2(params, &format!("{name}.r.w_ih"))?;
        let w_hh_r = view2(params, &format!("{name}.r.w_hh"))?;
        let b_r = view1(params, &format!("{name}.r.b"))?.to_owned();

        let fwd = lstm_forward(x2.clone(), w_ih_f, w_hh_f, &b_f);
        let rev = lstm_forward(reverse_rows(&x2), w_ih_r, w_hh_r, &b_r);
        let merged = &fwd.h + &reverse_rows(&rev.h);
        blstm_traces.push(BlstmTrace { fwd, rev });
        x2 = merged;
    }

    // FC head: hidden layer with ReLU, then linear output.
    let w1 = view2(params, "fc1.w")?;
    let b1 = view1(params, "fc1.b")?;
    let w2 = view2(params, "fc2.w")?;
    let b2 = view1(params, "fc2.b")?;

    let fc_input = x2;
    let mut z1 = fc_input.dot(&w1);
    z1 += &b1;
    let a1 = z1.mapv(|v| v.max(0.0));
    let mut logits = a1.dot(&w2);
    logits += &b2;

    let tape = ActivationTape {
        t_len,
        fingerprint: config.fingerprint(),
        conv: conv_traces,
        blstm: blstm_traces,
        fc_input,
        z1,
        a1,
    };
    Ok((logits, tape))
}
