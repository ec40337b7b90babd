//! Single-direction LSTM forward pass and backpropagation through time.
//!
//! Gate packing along the 4U axis is [input, forget, cell, output]. The
//! bidirectional wrapper in `forward`/`backward` runs this on the reversed
//! sequence for the reverse direction and merges by elementwise sum.

use ndarray::{Array1, Array2, ArrayView2};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Layer input, T x I.
    pub x: Array2<f64>,
    /// Post-activation gates, T x 4U in [i f g o] packing.
    pub gates: Array2<f64>,
    /// Cell states, T x U.
    pub c: Array2<f64>,
    /// Hidden states, T x U.
    pub h: Array2<f64>,
    /// tanh(c_t), T x U.
    pub tanh_c: Array2<f64>,
}

/// Runs the LSTM over `x` (T x I) with zero initial state.
/// `w_ih` is 4U x I, `w_hh` is 4U x U, `b` is 4U.
pub fn lstm_forward(
    x: Array2<f64>,
    w_ih: ArrayView2<f64>,
    w_hh: ArrayView2<f64>,
    b: &Array1<f64>,
) -> LstmCache {
    let t_len = x.nrows();
    let u = w_hh.ncols();

    // Input projection for all steps at once: (T x I) . (I x 4U).
    let pre = x.dot(&w_ih.t());

    let mut gates = Array2::zeros((t_len, 4 * u));
    let mut c = Array2::zeros((t_len, u));
    let mut h = Array2::zeros((t_len, u));
    let mut tanh_c = Array2::zeros((t_len, u));

    let mut h_prev = Array1::zeros(u);
    let mut c_prev = Array1::<f64>::zeros(u);
    for t in 0..t_len {
        let rec = w_hh.dot(&h_prev);
        for j in 0..u {
            let ai = pre[[t, j]] + rec[j] + b[j];
            let af = pre[[t, u + j]] + rec[u + j] + b[u + j];
            let ag = pre[[t, 2 * u + j]] + rec[2 * u + j] + b[2 * u + j];
            let ao = pre[[t, 3 * u + j]] + rec[3 * u + j] + b[3 * u + j];

            let i_g = sigmoid(ai);
            let f_g = sigmoid(af);
            let g_g = ag.tanh();
            let o_g = sigmoid(ao);

            let c_t = f_g * c_prev[j] + i_g * g_g;
            let tc = c_t.tanh();

            gates[[t, j]] = i_g;
            gates[[t, u + j]] = f_g;
            gates[[t, 2 * u + j]] = g_g;
            gates[[t, 3 * u + j]] = o_g;
            c[[t, j]] = c_t;
            tanh_c[[t, j]] = tc;
            h[[t, j]] = o_g * tc;
        }
        h_prev.assign(&h.row(t));
        c_prev.assign(&c.row(t));
    }

    LstmCache {
        x,
        gates,
        c,
        h,
        tanh_c,
    }
}

/// Weight and input gradients from BPTT.
pub struct LstmGrads {
    pub dw_ih: Option<Array2<f64>>,
    pub dw_hh: Option<Array2<f64>>,
    pub db: Option<Array1<f64>>,
    pub dx: Option<Array2<f64>>,
}

/// Backpropagation through time given `dh` (T x U), the loss gradient w.r.t.
/// this direction's hidden outputs. Weight gradients and the input gradient
/// are each computed only on request so frozen groups cost nothing extra.
pub fn lstm_backward(
    cache: &LstmCache,
    w_ih: ArrayView2<f64>,
    w_hh: ArrayView2<f64>,
    dh_out: &Array2<f64>,
    need_weight_grads: bool,
    need_dx: bool,
) -> LstmGrads {
    let t_len = cache.x.nrows();
    let u = w_hh.ncols();

    // Pre-activation gate gradients for every step; the big matmuls happen
    // once the recurrence has filled this in.
    let mut da = Array2::zeros((t_len, 4 * u));
    let mut dh_rec = Array1::zeros(u);
    let mut dc_rec = Array1::<f64>::zeros(u);

    for t in (0..t_len).rev() {
        for j in 0..u {
            let i_g = cache.gates[[t, j]];
            let f_g = cache.gates[[t, u + j]];
            let g_g = cache.gates[[t, 2 * u + j]];
            let o_g = cache.gates[[t, 3 * u + j]];
            let tc = cache.tanh_c[[t, j]];
            let c_prev = if t > 0 { cache.c[[t - 1, j]] } else { 0.0 };

            let dh = dh_out[[t, j]] + dh_rec[j];
            let dc = dc_rec[j] + dh * o_g * (1.0 - tc * tc);

            let d_o = dh * tc;
            let d_i = dc * g_g;
            let d_f = dc * c_prev;
            let d_g = dc * i_g;

            da[[t, j]] = d_i * i_g * (1.0 - i_g);
            da[[t, u + j]] = d_f * f_g * (1.0 - f_g);
            da[[t, 2 * u + j]] = d_g * (1.0 - g_g * g_g);
            da[[t, 3 * u + j]] = d_o * o_g * (1.0 - o_g);

            dc_rec[j] = dc * f_g;
        }
        dh_rec = da.row(t).dot(&w_hh);
    }

    let (dw_ih, dw_hh, db) = if need_weight_grads {
        // dW_ih = DA^T . X ; dW_hh = DA^T . H_prev (H shifted down one step).
        let dw_ih = da.t().dot(&cache.x);
        let mut h_prev = Array2::zeros((t_len, u));
        for t in 1..t_len {
            let h_row = cache.h.row(t - 1).to_owned();
            h_prev.row_mut(t).assign(&h_row);
        }
        let dw_hh = da.t().dot(&h_prev);
        let db = da.sum_axis(ndarray::Axis(0));
        (Some(dw_ih), Some(dw_hh), Some(db))
    } else {
        (None, None, None)
    };

    let dx = if need_dx { Some(da.dot(&w_ih)) } else { None };

    LstmGrads {
        dw_ih,
        dw_hh,
        db,
        dx,
    }
}
