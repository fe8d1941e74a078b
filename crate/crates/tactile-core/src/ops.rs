//! Numeric primitives: matmul, softmax, layer norm, activations, conv2d,
//! each with a matching reverse-mode backward.
//!
//! Accumulation order is fixed everywhere (ascending inner index), which is
//! what makes results reproducible bit for bit across runs.

use crate::{Tensor, TensorError};

/// `a [m,k] * b [k,n] -> [m,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (m, ka) = a.dims2()?;
    let (kb, n) = b.dims2()?;
    if ka != kb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0f32; m * n];
    let ad = a.data();
    let bd = b.data();
    // i-k-j order: each out[i*n + j] still sees k in ascending order, and
    // the inner loop walks b rows contiguously.
    for i in 0..m {
        for k in 0..ka {
            let aik = ad[i * ka + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &bd[k * n..(k + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Gradients of `matmul`: `(dA, dB) = (dY * B^T, A^T * dY)`.
pub fn matmul_backward(
    a: &Tensor,
    b: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor), TensorError> {
    let da = matmul(dy, &b.transpose2()?)?;
    let db = matmul(&a.transpose2()?, dy)?;
    Ok((da, db))
}

/// Softmax over the last axis, with max subtraction for stability.
pub fn softmax_last(x: &Tensor) -> Tensor {
    let d = *x.shape().last().unwrap();
    let rows = x.len() / d;
    let mut out = x.clone();
    for r in 0..rows {
        let row = &mut out.data_mut()[r * d..(r + 1) * d];
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward of `softmax_last` given the forward output `y`:
/// `dx_i = y_i * (dy_i - sum_j y_j dy_j)` per row.
pub fn softmax_last_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor, TensorError> {
    if y.shape() != dy.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "softmax_backward",
            lhs: y.shape().to_vec(),
            rhs: dy.shape().to_vec(),
        });
    }
    let d = *y.shape().last().unwrap();
    let rows = y.len() / d;
    let mut dx = Tensor::zeros(y.shape());
    for r in 0..rows {
        let yr = &y.data()[r * d..(r + 1) * d];
        let dyr = &dy.data()[r * d..(r + 1) * d];
        let mut dot = 0.0f32;
        for j in 0..d {
            dot += yr[j] * dyr[j];
        }
        let dxr = &mut dx.data_mut()[r * d..(r + 1) * d];
        for j in 0..d {
            dxr[j] = yr[j] * (dyr[j] - dot);
        }
    }
    Ok(dx)
}

/// Per-row state saved by the layer norm forward for its backward pass.
pub struct LayerNormCache {
    /// Normalized input, same shape as x.
    pub xhat: Tensor,
    /// 1 / sqrt(var + eps) per row.
    pub inv_std: Vec<f32>,
}

/// Layer norm over the last axis with scale `gamma` and shift `beta`.
/// Uses population variance (divide by D).
pub fn layer_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> Result<(Tensor, LayerNormCache), TensorError> {
    let d = *x.shape().last().unwrap();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let rows = x.len() / d;
    let mut y = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let xr = &x.data()[r * d..(r + 1) * d];
        let mut mean = 0.0f32;
        for &v in xr {
            mean += v;
        }
        mean /= d as f32;
        let mut var = 0.0f32;
        for &v in xr {
            let c = v - mean;
            var += c * c;
        }
        var /= d as f32;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std.push(istd);
        for j in 0..d {
            let h = (xr[j] - mean) * istd;
            xhat.data_mut()[r * d + j] = h;
            y.data_mut()[r * d + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

/// Backward of layer norm. Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let d = *dy.shape().last().unwrap();
    let rows = dy.len() / d;
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = Tensor::zeros(&[d]);
    let mut dbeta = Tensor::zeros(&[d]);
    for r in 0..rows {
        let hr = &cache.xhat.data()[r * d..(r + 1) * d];
        let dyr = &dy.data()[r * d..(r + 1) * d];
        let istd = cache.inv_std[r];
        let mut mean_dh = 0.0f32;
        let mut mean_dh_h = 0.0f32;
        for j in 0..d {
            let dh = dyr[j] * gamma.data()[j];
            mean_dh += dh;
            mean_dh_h += dh * hr[j];
            dgamma.data_mut()[j] += dyr[j] * hr[j];
            dbeta.data_mut()[j] += dyr[j];
        }
        mean_dh /= d as f32;
        mean_dh_h /= d as f32;
        for j in 0..d {
            let dh = dyr[j] * gamma.data()[j];
            dx.data_mut()[r * d + j] = istd * (dh - mean_dh - hr[j] * mean_dh_h);
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Pointwise nonlinearity choice for conv stacks and MLPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// x * sigmoid(x), exact.
    Silu,
    /// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
    Gelu,
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_A: f32 = 0.044_715;

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl Activation {
    pub fn apply_scalar(self, x: f32) -> f32 {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Gelu => {
                let inner = GELU_C * (x + GELU_A * x * x * x);
                0.5 * x * (1.0 + inner.tanh())
            }
        }
    }

    pub fn derivative_scalar(self, x: f32) -> f32 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Gelu => {
                let inner = GELU_C * (x + GELU_A * x * x * x);
                let t = inner.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
        }
    }

    pub fn apply(self, x: &Tensor) -> Tensor {
        x.map(|v| self.apply_scalar(v))
    }

    /// dx given the forward input `x` and upstream gradient `dy`.
    pub fn backward(self, x: &Tensor, dy: &Tensor) -> Result<Tensor, TensorError> {
        x.map(|v| self.derivative_scalar(v)).mul(dy)
    }
}

/// Output spatial extent of a convolution along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// 2-D cross-correlation (no bias): `x [Cin,H,W]`, `k [Cout,Cin,KH,KW]`
/// -> `[Cout,Ho,Wo]`. Zero padding.
pub fn conv2d(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Result<Tensor, TensorError> {
    let (cin, h, w) = x.dims3()?;
    let (cout, kcin, kh, kw) = k.dims4()?;
    if cin != kcin {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(TensorError::InvalidShape {
            reason: format!("conv kernel {kh}x{kw} larger than padded input {h}x{w}+{pad}"),
        });
    }
    let ho = conv_out_extent(h, kh, stride, pad);
    let wo = conv_out_extent(w, kw, stride, pad);
    let mut out = vec![0.0f32; cout * ho * wo];
    let xd = x.data();
    let kd = k.data();
    for co in 0..cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0f32;
                for ci in 0..cin {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xi = (ci * h + iy as usize) * w + ix as usize;
                            let ki = ((co * cin + ci) * kh + ky) * kw + kx;
                            acc += xd[xi] * kd[ki];
                        }
                    }
                }
                out[(co * ho + oy) * wo + ox] = acc;
            }
        }
    }
    Tensor::new(vec![cout, ho, wo], out)
}

/// Gradients of `conv2d`: returns `(dx, dk)`.
pub fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor), TensorError> {
    let (cin, h, w) = x.dims3()?;
    let (cout, _, kh, kw) = k.dims4()?;
    let (dcout, ho, wo) = dy.dims3()?;
    if dcout != cout || ho != conv_out_extent(h, kh, stride, pad) {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward",
            lhs: dy.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dk = Tensor::zeros(k.shape());
    let xd = x.data();
    let kd = k.data();
    let dyd = dy.data();
    for co in 0..cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = dyd[(co * ho + oy) * wo + ox];
                if g == 0.0 {
                    continue;
                }
                for ci in 0..cin {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xi = (ci * h + iy as usize) * w + ix as usize;
                            let ki = ((co * cin + ci) * kh + ky) * kw + kx;
                            dx.data_mut()[xi] += g * kd[ki];
                            dk.data_mut()[ki] += g * xd[xi];
                        }
                    }
                }
            }
        }
    }
    Ok((dx, dk))
}
