//! Finite-difference gradient checking.
//!
//! Every hand-written backward in this workspace is validated against central
//! differences of a random scalar projection of the op's output. The check
//! reports the worst relative error over all input elements; entries where
//! both gradients are tiny are skipped because the relative metric is
//! meaningless there.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ops::{self, Activation};
use crate::Tensor;

/// Central-difference step size.
pub const FD_STEP: f32 = 1e-3;

/// Relative error tolerance a correct backward is expected to meet in f32.
pub const GRAD_REL_TOL: f32 = 1e-2;

/// Absolute floor below which entries are never compared.
pub const GRAD_SKIP_ABS: f32 = 1e-3;

/// Entries smaller than this fraction of the largest gradient magnitude are
/// skipped. Finite-difference noise in single precision is proportional to
/// the loss scale, so for small entries the relative metric measures noise,
/// not correctness; a broken backward still shows errors at the dominant
/// scale, which stays tightly checked. At the 1e-3 step the noise floor sits
/// near a few percent of the dominant magnitude, hence the 10% cutoff.
pub const GRAD_SKIP_FRAC: f32 = 0.1;

/// Outcome of one gradient comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f32,
    /// Elements actually compared.
    pub compared: usize,
    /// Elements skipped as too small for a relative metric.
    pub skipped: usize,
    /// The op declared the sampled input numerically degenerate (for example
    /// a zero-variance row fed to layer norm); the caller should resample.
    pub degenerate: bool,
}

/// `|a - b| / max(|a|, |b|)`, or `None` when both are below `floor`.
pub fn relative_error(a: f32, b: f32, floor: f32) -> Option<f32> {
    let m = a.abs().max(b.abs());
    if m < floor {
        None
    } else {
        Some((a - b).abs() / m)
    }
}

/// Dot product accumulated in f64; used as the scalar projection so the
/// finite-difference quotient is not swamped by f32 cancellation.
pub fn dot64(a: &Tensor, b: &Tensor) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x as f64 * y as f64)
        .fold(0.0, |acc, v| acc + v)
}

/// Compare an analytic gradient of `loss` at `x` against central differences.
pub fn compare_fd(
    mut loss: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
) -> GradCheckReport {
    assert_eq!(x.shape(), analytic.shape(), "gradient shape must match input");
    let h = FD_STEP;
    let mut probe = x.clone();
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let lp = loss(&probe);
        probe.data_mut()[i] = orig - h;
        let lm = loss(&probe);
        probe.data_mut()[i] = orig;
        numeric.push(((lp - lm) / (2.0 * h as f64)) as f32);
    }
    let g_max = analytic
        .data()
        .iter()
        .zip(&numeric)
        .map(|(&a, &b)| a.abs().max(b.abs()))
        .fold(0.0f32, f32::max);
    let floor = GRAD_SKIP_ABS.max(GRAD_SKIP_FRAC * g_max);
    let mut max_rel = 0.0f32;
    let mut compared = 0;
    let mut skipped = 0;
    for (&a, &b) in analytic.data().iter().zip(&numeric) {
        match relative_error(a, b, floor) {
            Some(rel) => {
                compared += 1;
                if rel > max_rel {
                    max_rel = rel;
                }
            }
            None => skipped += 1,
        }
    }
    GradCheckReport {
        max_rel_error: max_rel,
        compared,
        skipped,
        degenerate: false,
    }
}

/// An op with a hand-written vector-Jacobian product, checkable against
/// finite differences. `x` is the differentiated input; anything else the op
/// needs (weights, strides) lives in the implementing struct.
pub trait DifferentiableOp {
    fn forward(&self, x: &Tensor) -> Tensor;
    /// dL/dx given dL/dy.
    fn vjp(&self, x: &Tensor, dy: &Tensor) -> Tensor;
    /// True when the sampled input sits where the op is not cleanly
    /// differentiable and finite differences would be misleading.
    fn degenerate_at(&self, _x: &Tensor) -> bool {
        false
    }
}

/// Run the standard check: project the output with a random vector drawn
/// from `seed`, then compare vjp against central differences.
pub fn check_op(op: &dyn DifferentiableOp, x: &Tensor, seed: u64) -> GradCheckReport {
    if op.degenerate_at(x) {
        return GradCheckReport {
            max_rel_error: 0.0,
            compared: 0,
            skipped: 0,
            degenerate: true,
        };
    }
    let y = op.forward(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = Tensor::random_uniform(y.shape(), -1.0, 1.0, &mut rng);
    let analytic = op.vjp(x, &v);
    compare_fd(|probe| dot64(&op.forward(probe), &v), x, &analytic)
}

/// y = x * rhs, differentiated in x.
pub struct MatmulLhs {
    pub rhs: Tensor,
}

impl DifferentiableOp for MatmulLhs {
    fn forward(&self, x: &Tensor) -> Tensor {
        ops::matmul(x, &self.rhs).unwrap()
    }
    fn vjp(&self, _x: &Tensor, dy: &Tensor) -> Tensor {
        ops::matmul(dy, &self.rhs.transpose2().unwrap()).unwrap()
    }
}

/// y = lhs * x, differentiated in x.
pub struct MatmulRhs {
    pub lhs: Tensor,
}

impl DifferentiableOp for MatmulRhs {
    fn forward(&self, x: &Tensor) -> Tensor {
        ops::matmul(&self.lhs, x).unwrap()
    }
    fn vjp(&self, _x: &Tensor, dy: &Tensor) -> Tensor {
        ops::matmul(&self.lhs.transpose2().unwrap(), dy).unwrap()
    }
}

/// Softmax over the last axis.
pub struct SoftmaxOp;

impl DifferentiableOp for SoftmaxOp {
    fn forward(&self, x: &Tensor) -> Tensor {
        ops::softmax_last(x)
    }
    fn vjp(&self, x: &Tensor, dy: &Tensor) -> Tensor {
        let y = ops::softmax_last(x);
        ops::softmax_last_backward(&y, dy).unwrap()
    }
}

/// Layer norm differentiated in x, with fixed gamma and beta.
pub struct LayerNormOp {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f32,
}

impl DifferentiableOp for LayerNormOp {
    fn forward(&self, x: &Tensor) -> Tensor {
        ops::layer_norm_forward(x, &self.gamma, &self.beta, self.eps)
            .unwrap()
            .0
    }
    fn vjp(&self, x: &Tensor, dy: &Tensor) -> Tensor {
        let (_, cache) = ops::layer_norm_forward(x, &self.gamma, &self.beta, self.eps).unwrap();
        ops::layer_norm_backward(&cache, &self.gamma, dy).unwrap().0
    }
    fn degenerate_at(&self, x: &Tensor) -> bool {
        // Constant rows have zero variance; the normalized output is then
        // dominated by eps and finite differences explode.
        let d = *x.shape().last().unwrap();
        let rows = x.len() / d;
        for r in 0..rows {
            let xr = &x.data()[r * d..(r + 1) * d];
            let mean: f32 = xr.iter().sum::<f32>() / d as f32;
            let var: f32 = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            if var < 1e-4 {
                return true;
            }
        }
        false
    }
}

/// Layer norm differentiated in gamma, with fixed x and beta.
pub struct LayerNormGammaOp {
    pub x: Tensor,
    pub beta: Tensor,
    pub eps: f32,
}

impl DifferentiableOp for LayerNormGammaOp {
    fn forward(&self, gamma: &Tensor) -> Tensor {
        ops::layer_norm_forward(&self.x, gamma, &self.beta, self.eps)
            .unwrap()
            .0
    }
    fn vjp(&self, gamma: &Tensor, dy: &Tensor) -> Tensor {
        let (_, cache) = ops::layer_norm_forward(&self.x, gamma, &self.beta, self.eps).unwrap();
        ops::layer_norm_backward(&cache, gamma, dy).unwrap().1
    }
}

/// Pointwise activation.
pub struct ActivationOp(pub Activation);

impl DifferentiableOp for ActivationOp {
    fn forward(&self, x: &Tensor) -> Tensor {
        self.0.apply(x)
    }
    fn vjp(&self, x: &Tensor, dy: &Tensor) -> Tensor {
        self.0.backward(x, dy).unwrap()
    }
}

/// Convolution differentiated in the image, with a fixed kernel.
pub struct Conv2dOp {
    pub kernel: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl DifferentiableOp for Conv2dOp {
    fn forward(&self, x: &Tensor) -> Tensor {
        ops::conv2d(x, &self.kernel, self.stride, self.pad).unwrap()
    }
    fn vjp(&self, x: &Tensor, dy: &Tensor) -> Tensor {
        ops::conv2d_backward(x, &self.kernel, dy, self.stride, self.pad)
            .unwrap()
            .0
    }
}

/// Convolution differentiated in the kernel, with a fixed image.
pub struct Conv2dKernelOp {
    pub image: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl DifferentiableOp for Conv2dKernelOp {
    fn forward(&self, k: &Tensor) -> Tensor {
        ops::conv2d(&self.image, k, self.stride, self.pad).unwrap()
    }
    fn vjp(&self, k: &Tensor, dy: &Tensor) -> Tensor {
        ops::conv2d_backward(&self.image, k, dy, self.stride, self.pad)
            .unwrap()
            .1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::random_uniform(shape, -1.0, 1.0, &mut rng)
    }

    fn assert_passes(op: &dyn DifferentiableOp, x: &Tensor, seed: u64) {
        let report = check_op(op, x, seed);
        assert!(!report.degenerate, "sampled a degenerate input");
        assert!(report.compared > 0, "nothing compared");
        assert!(
            report.max_rel_error <= GRAD_REL_TOL,
            "max rel error {} exceeds {GRAD_REL_TOL}",
            report.max_rel_error
        );
    }

    #[test]
    fn matmul_grads() {
        let op_l = MatmulLhs { rhs: sample(&[4, 5], 1) };
        assert_passes(&op_l, &sample(&[3, 4], 2), 3);
        let op_r = MatmulRhs { lhs: sample(&[3, 4], 4) };
        assert_passes(&op_r, &sample(&[4, 5], 5), 6);
    }

    #[test]
    fn softmax_grad() {
        assert_passes(&SoftmaxOp, &sample(&[3, 6], 7), 8);
    }

    #[test]
    fn layer_norm_grads() {
        let d = 6;
        let op = LayerNormOp {
            gamma: sample(&[d], 9),
            beta: sample(&[d], 10),
            eps: 1e-6,
        };
        assert_passes(&op, &sample(&[4, d], 11), 12);
        let op_g = LayerNormGammaOp {
            x: sample(&[4, d], 13),
            beta: sample(&[d], 14),
            eps: 1e-6,
        };
        assert_passes(&op_g, &sample(&[d], 15), 16);
    }

    #[test]
    fn layer_norm_flags_constant_rows() {
        let op = LayerNormOp {
            gamma: Tensor::filled(&[4], 1.0),
            beta: Tensor::zeros(&[4]),
            eps: 1e-6,
        };
        let report = check_op(&op, &Tensor::filled(&[2, 4], 3.0), 0);
        assert!(report.degenerate);
    }

    #[test]
    fn activation_grads() {
        assert_passes(&ActivationOp(Activation::Silu), &sample(&[5, 5], 17), 18);
        assert_passes(&ActivationOp(Activation::Gelu), &sample(&[5, 5], 19), 20);
    }

    #[test]
    fn conv2d_grads() {
        let op_x = Conv2dOp { kernel: sample(&[3, 2, 3, 3], 21), stride: 2, pad: 1 };
        assert_passes(&op_x, &sample(&[2, 6, 6], 22), 23);
        let op_k = Conv2dKernelOp { image: sample(&[2, 6, 6], 24), stride: 1, pad: 0 };
        assert_passes(&op_k, &sample(&[3, 2, 3, 3], 25), 26);
    }
}
