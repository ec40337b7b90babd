//! 2D convolution over (time, mel), stride 1, SAME zero padding.

use ndarray::{Array1, Array3, Array4, ArrayView1, ArrayView3, ArrayView4};

/// input (C_in, T, M), weight (C_out, C_in, KT, KM), bias (C_out)
/// -> output (C_out, T, M).
pub fn conv2d_forward(
    input: ArrayView3<f64>,
    weight: ArrayView4<f64>,
    bias: ArrayView1<f64>,
) -> Array3<f64> {
    let (c_in, t_len, m_len) = input.dim();
    let (c_out, w_cin, kt, km) = weight.dim();
    debug_assert_eq!(c_in, w_cin);
    let (pt, pm) = (kt / 2, km / 2);

    let mut out = Array3::zeros((c_out, t_len, m_len));
    for o in 0..c_out {
        let b = bias[o];
        for t in 0..t_len {
            for m in 0..m_len {
                let mut acc = b;
                for c in 0..c_in {
                    for dt in 0..kt {
                        let ti = t + dt;
                        if ti < pt || ti - pt >= t_len {
                            continue;
                        }
                        let ti = ti - pt;
                        for dm in 0..km {
                            let mi = m + dm;
                            if mi < pm || mi - pm >= m_len {
                                continue;
                            }
                            acc += input[[c, ti, mi - pm]] * weight[[o, c, dt, dm]];
                        }
                    }
                }
                out[[o, t, m]] = acc;
            }
        }
    }
    out
}

/// Gradients of the convolution: weight and bias grads plus, when
/// `need_dx` is set, the gradient w.r.t. the input.
pub fn conv2d_backward(
    input: ArrayView3<f64>,
    weight: ArrayView4<f64>,
    dout: ArrayView3<f64>,
    need_dx: bool,
) -> (Array4<f64>, Array1<f64>, Option<Array3<f64>>) {
    let (c_in, t_len, m_len) = input.dim();
    let (c_out, _, kt, km) = weight.dim();
    let (pt, pm) = (kt / 2, km / 2);

    let mut dw = Array4::zeros((c_out, c_in, kt, km));
    let mut db = Array1::zeros(c_out);
    for o in 0..c_out {
        let mut bias_acc = 0.0;
        for t in 0..t_len {
            for m in 0..m_len {
                let g = dout[[o, t, m]];
                if g == 0.0 {
                    continue;
                }
                bias_acc += g;
                for c in 0..c_in {
                    for dt in 0..kt {
                        let ti = t + dt;
                        if ti < pt || ti - pt >= t_len {
                            continue;
                        }
                        let ti = ti - pt;
                        for dm in 0..km {
                            let mi = m + dm;
                            if mi < pm || mi - pm >= m_len {
                                continue;
                            }
                            dw[[o, c, dt, dm]] += g * input[[c, ti, mi - pm]];
                        }
                    }
                }
            }
        }
        db[o] = bias_acc;
    }

    let dx = if need_dx {
        let mut dx = Array3::zeros((c_in, t_len, m_len));
        for o in 0..c_out {
            for t in 0..t_len {
                for m in 0..m_len {
                    let g = dout[[o, t, m]];
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..c_in {
                        for dt in 0..kt {
                            let ti = t + dt;
                            if ti < pt || ti - pt >= t_len {
                                continue;
                            }
                            let ti = ti - pt;
                            for dm in 0..km {
                                let mi = m + dm;
                                if mi < pm || mi - pm >= m_len {
                                    continue;
                                }
                                dx[[c, ti, mi - pm]] += g * weight[[o, c, dt, dm]];
                            }
                        }
                    }
                }
            }
        }
        Some(dx)
    } else {
        None
    };

    (dw, db, dx)
}
