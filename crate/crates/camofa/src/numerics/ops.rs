//! Pure tensor math shared by the tape and by forward-only call sites.
//!
//! Convolution gradients are spelled out by hand here; the tape wires them
//! to the corresponding forward ops and the adjoint/finite-difference tests
//! pin them down.

use super::tensor::{Element, Tensor};
use super::NumericsError;

/// Elementwise nonlinearity. The leaky slope is fixed at 0.2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

/// Slope of [`Activation::LeakyRelu`] on the negative half-line.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Reduction applied by [`reduce_loss`]; all variants mean over elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L1Mean,
    BceLogitsMean,
    MseMean,
}

pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (m, k) = as_matrix_dims("matmul", a)?;
    let (k2, n) = as_matrix_dims("matmul", b)?;
    if k != k2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

pub fn transpose2<T: Element>(a: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (m, n) = as_matrix_dims("transpose", a)?;
    let ad = a.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = ad[i * n + j];
        }
    }
    Tensor::from_vec(&[n, m], out)
}

fn as_matrix_dims<T: Element>(
    op: &'static str,
    t: &Tensor<T>,
) -> Result<(usize, usize), NumericsError> {
    match *t.shape() {
        [m, n] => Ok((m, n)),
        _ => Err(NumericsError::Dimension {
            op,
            detail: format!("expected a rank-2 tensor, got shape {:?}", t.shape()),
        }),
    }
}

/// Spatial size of a convolution output along one axis.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Spatial size of a transposed-convolution output along one axis;
/// inverts [`conv_out_extent`].
pub fn conv_transpose_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input - 1) * stride + k - 2 * pad
}

fn conv_dims<T: Element>(
    op: &'static str,
    x: &Tensor<T>,
    w: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize, usize), NumericsError> {
    let (c_in, h, width) = match *x.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(NumericsError::Dimension {
                op,
                detail: format!("input must be [C, H, W], got {:?}", x.shape()),
            })
        }
    };
    let (c_out, c_in_w, kh, kw) = match *w.shape() {
        [o, i, kh, kw] => (o, i, kh, kw),
        _ => {
            return Err(NumericsError::Dimension {
                op,
                detail: format!("kernel must be [C_out, C_in, k, k], got {:?}", w.shape()),
            })
        }
    };
    if kh != kw {
        return Err(NumericsError::Dimension {
            op,
            detail: format!("only square kernels are supported, got {kh}x{kw}"),
        });
    }
    if c_in != c_in_w {
        return Err(NumericsError::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    Ok((c_in, h, width, c_out, kh, kw))
}

/// Direct 2D convolution (cross-correlation) with zero padding.
///
/// `x` is `[C_in, H, W]`, `w` is `[C_out, C_in, k, k]`; the output is
/// `[C_out, H', W']` with `H' = (H + 2*pad - k)/stride + 1`.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, NumericsError> {
    let (c_in, h, width, c_out, k, _) = conv_dims("conv2d", x, w)?;
    if stride == 0 {
        return Err(NumericsError::Dimension {
            op: "conv2d",
            detail: "stride must be >= 1".into(),
        });
    }
    if k > h + 2 * pad || k > width + 2 * pad {
        return Err(NumericsError::Dimension {
            op: "conv2d",
            detail: format!(
                "kernel {k}x{k} larger than padded input {}x{}",
                h + 2 * pad,
                width + 2 * pad
            ),
        });
    }
    let oh = conv_out_extent(h, k, stride, pad);
    let ow = conv_out_extent(width, k, stride, pad);
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![T::zero(); c_out * oh * ow];
    for co in 0..c_out {
        for ci in 0..c_in {
            let wbase = (co * c_in + ci) * k * k;
            let xbase = ci * h * width;
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = T::zero();
                    for a in 0..k {
                        let ii = (oi * stride + a) as isize - pad as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let xrow = xbase + ii as usize * width;
                        let wrow = wbase + a * k;
                        for b in 0..k {
                            let jj = (oj * stride + b) as isize - pad as isize;
                            if jj < 0 || jj >= width as isize {
                                continue;
                            }
                            acc = acc + xd[xrow + jj as usize] * wd[wrow + b];
                        }
                    }
                    out[(co * oh + oi) * ow + oj] = out[(co * oh + oi) * ow + oj] + acc;
                }
            }
        }
    }
    Tensor::from_vec(&[c_out, oh, ow], out)
}

/// Gradient of [`conv2d`] with respect to its input, for an output
/// cotangent `gy` of shape `[C_out, H', W']`. `in_h`/`in_w` are the spatial
/// dims of the original input (the shape formula is not invertible in
/// general).
pub fn conv2d_input_grad<T: Element>(
    gy: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor<T>, NumericsError> {
    let (c_out, oh, ow) = match *gy.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(NumericsError::Dimension {
                op: "conv2d_input_grad",
                detail: format!("cotangent must be [C, H, W], got {:?}", gy.shape()),
            })
        }
    };
    let (c_out_w, c_in, k) = match *w.shape() {
        [o, i, kh, _] => (o, i, kh),
        _ => {
            return Err(NumericsError::Dimension {
                op: "conv2d_input_grad",
                detail: format!("kernel must be rank 4, got {:?}", w.shape()),
            })
        }
    };
    if c_out != c_out_w {
        return Err(NumericsError::ShapeMismatch {
            op: "conv2d_input_grad",
            lhs: gy.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let gyd = gy.data();
    let wd = w.data();
    let mut gx = vec![T::zero(); c_in * in_h * in_w];
    for co in 0..c_out {
        for ci in 0..c_in {
            let wbase = (co * c_in + ci) * k * k;
            let xbase = ci * in_h * in_w;
            for oi in 0..oh {
                for oj in 0..ow {
                    let g = gyd[(co * oh + oi) * ow + oj];
                    for a in 0..k {
                        let ii = (oi * stride + a) as isize - pad as isize;
                        if ii < 0 || ii >= in_h as isize {
                            continue;
                        }
                        for b in 0..k {
                            let jj = (oj * stride + b) as isize - pad as isize;
                            if jj < 0 || jj >= in_w as isize {
                                continue;
                            }
                            let idx = xbase + ii as usize * in_w + jj as usize;
                            gx[idx] = gx[idx] + g * wd[wbase + a * k + b];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c_in, in_h, in_w], gx)
}

/// Gradient of [`conv2d`] with respect to its kernel.
pub fn conv2d_weight_grad<T: Element>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
    k: usize,
) -> Result<Tensor<T>, NumericsError> {
    let (c_in, h, width) = match *x.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(NumericsError::Dimension {
                op: "conv2d_weight_grad",
                detail: format!("input must be [C, H, W], got {:?}", x.shape()),
            })
        }
    };
    let (c_out, oh, ow) = match *gy.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(NumericsError::Dimension {
                op: "conv2d_weight_grad",
                detail: format!("cotangent must be [C, H, W], got {:?}", gy.shape()),
            })
        }
    };
    let xd = x.data();
    let gyd = gy.data();
    let mut gw = vec![T::zero(); c_out * c_in * k * k];
    for co in 0..c_out {
        for ci in 0..c_in {
            let wbase = (co * c_in + ci) * k * k;
            let xbase = ci * h * width;
            for oi in 0..oh {
                for oj in 0..ow {
                    let g = gyd[(co * oh + oi) * ow + oj];
                    for a in 0..k {
                        let ii = (oi * stride + a) as isize - pad as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for b in 0..k {
                            let jj = (oj * stride + b) as isize - pad as isize;
                            if jj < 0 || jj >= width as isize {
                                continue;
                            }
                            let idx = wbase + a * k + b;
                            gw[idx] = gw[idx] + g * xd[xbase + ii as usize * width + jj as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c_out, c_in, k, k], gw)
}

/// Transposed convolution: the adjoint of [`conv2d`] under the same kernel
/// and hyperparameters. Input is `[C_out, H', W']`-like, output is
/// `[C_in, H, W]` with `H = (H' - 1)*stride + k - 2*pad`.
pub fn conv2d_transpose<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, NumericsError> {
    let (h_in, w_in) = match *x.shape() {
        [_, h, w] => (h, w),
        _ => {
            return Err(NumericsError::Dimension {
                op: "conv2d_transpose",
                detail: format!("input must be [C, H, W], got {:?}", x.shape()),
            })
        }
    };
    let k = match *w.shape() {
        [_, _, kh, _] => kh,
        _ => {
            return Err(NumericsError::Dimension {
                op: "conv2d_transpose",
                detail: format!("kernel must be rank 4, got {:?}", w.shape()),
            })
        }
    };
    if (h_in - 1) * stride + k < 2 * pad + 1 || (w_in - 1) * stride + k < 2 * pad + 1 {
        return Err(NumericsError::Dimension {
            op: "conv2d_transpose",
            detail: format!("output would be empty for k={k}, stride={stride}, pad={pad}"),
        });
    }
    let out_h = conv_transpose_out_extent(h_in, k, stride, pad);
    let out_w = conv_transpose_out_extent(w_in, k, stride, pad);
    conv2d_input_grad(x, w, stride, pad, out_h, out_w)
}

/// Per-channel bias add on a `[C, H, W]` tensor.
pub fn add_channel_bias<T: Element>(
    x: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>, NumericsError> {
    let (c, h, w) = match *x.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(NumericsError::Dimension {
                op: "add_channel_bias",
                detail: format!("input must be [C, H, W], got {:?}", x.shape()),
            })
        }
    };
    if b.shape() != [c] {
        return Err(NumericsError::ShapeMismatch {
            op: "add_channel_bias",
            lhs: x.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = x.clone();
    let od = out.data_mut();
    for ci in 0..c {
        let bias = b.data()[ci];
        for v in &mut od[ci * h * w..(ci + 1) * h * w] {
            *v = *v + bias;
        }
    }
    Ok(out)
}

pub fn activation<T: Element>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    let slope = T::from_f64(LEAKY_SLOPE);
    match kind {
        Activation::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::LeakyRelu => x.map(|v| if v > T::zero() { v } else { v * slope }),
        Activation::Tanh => x.map(|v| v.tanh()),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// Derivative of an activation expressed through its input and output.
pub fn activation_grad<T: Element>(kind: Activation, input: T, output: T) -> T {
    let one = T::one();
    match kind {
        Activation::Relu => {
            if input > T::zero() {
                one
            } else {
                T::zero()
            }
        }
        Activation::LeakyRelu => {
            if input > T::zero() {
                one
            } else {
                T::from_f64(LEAKY_SLOPE)
            }
        }
        Activation::Tanh => one - output * output,
        Activation::Sigmoid => output * (one - output),
    }
}

pub fn sigmoid<T: Element>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// Row-wise softmax of a `[N, M]` tensor, computed with max subtraction.
pub fn softmax_rows<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (n, m) = as_matrix_dims("softmax_rows", x)?;
    let xd = x.data();
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &xd[i * m..(i + 1) * m];
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut denom = T::zero();
        for j in 0..m {
            let e = (row[j] - max).exp();
            out[i * m + j] = e;
            denom = denom + e;
        }
        for j in 0..m {
            out[i * m + j] = out[i * m + j] / denom;
        }
    }
    Tensor::from_vec(&[n, m], out)
}

/// Mean loss over all elements. For `BceLogitsMean` the first argument is
/// the logits and the second the targets in `[0, 1]`; the stable
/// `max(x,0) - x*t + ln(1 + e^{-|x|})` form is used.
pub fn reduce_loss<T: Element>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    kind: LossKind,
) -> Result<T, NumericsError> {
    if pred.shape() != target.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "reduce_loss",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let n = T::from_f64(pred.numel() as f64);
    let mut acc = T::zero();
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        acc = acc + match kind {
            LossKind::L1Mean => (p - t).abs(),
            LossKind::MseMean => (p - t) * (p - t),
            LossKind::BceLogitsMean => {
                p.max(T::zero()) - p * t + ((-p.abs()).exp() + T::one()).ln()
            }
        };
    }
    Ok(acc / n)
}

/// Per-element derivative of [`reduce_loss`] with respect to `pred`,
/// already divided by the element count.
pub fn loss_pred_grad<T: Element>(pred: &Tensor<T>, target: &Tensor<T>, kind: LossKind) -> Tensor<T> {
    let inv_n = T::one() / T::from_f64(pred.numel() as f64);
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = match kind {
                LossKind::L1Mean => {
                    if p > t {
                        T::one()
                    } else if p < t {
                        -T::one()
                    } else {
                        T::zero()
                    }
                }
                LossKind::MseMean => (p - t) + (p - t),
                LossKind::BceLogitsMean => sigmoid(p) - t,
            };
            d * inv_n
        })
        .collect();
    Tensor::from_vec(pred.shape(), data).expect("same shape")
}
